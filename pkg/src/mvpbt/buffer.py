"""LRU page cache holding decoded nodes of persisted pages."""

from __future__ import annotations

from collections import OrderedDict
from collections.abc import Callable
from typing import Any, Optional


class BufferCache:
    """Byte-budgeted LRU. Each resident page costs one ``page_size``.

    ``budget`` is re-evaluated on every admission so that memory claimed
    elsewhere (the mutable partition, filters) shrinks the cache.
    ``on_evict`` is called for dirty nodes before they leave the cache.
    """

    def __init__(self, page_size: int, budget: Callable[[], int],
                 on_evict: Optional[Callable[[Any], None]] = None, min_pages: int = 8):
        self.page_size = page_size
        self.budget = budget
        self.on_evict = on_evict
        self.min_pages = min_pages
        self.pages: OrderedDict[int, Any] = OrderedDict()
        self.hits = 0
        self.misses = 0
        self.evictions = 0

    def capacity_pages(self) -> int:
        return max(self.min_pages, self.budget() // self.page_size)

    @property
    def resident_bytes(self) -> int:
        return len(self.pages) * self.page_size

    def __contains__(self, page_id: int) -> bool:
        return page_id in self.pages

    def __len__(self):
        return len(self.pages)

    def get(self, page_id: int):
        node = self.pages.get(page_id)
        if node is None:
            self.misses += 1
            return None
        self.hits += 1
        self.pages.move_to_end(page_id)
        return node

    def peek(self, page_id: int):
        return self.pages.get(page_id)

    def put(self, page_id: int, node) -> None:
        self.pages[page_id] = node
        self.pages.move_to_end(page_id)
        self.enforce(keep=page_id)

    def enforce(self, keep: Optional[int] = None) -> None:
        cap = self.capacity_pages()
        pages = self.pages
        while len(pages) > cap:
            pid, node = next(iter(pages.items()))
            if pid == keep:
                if len(pages) == 1:
                    break
                pages.move_to_end(pid)
                continue
            del pages[pid]
            self.evictions += 1
            if self.on_evict is not None and getattr(node, "dirty", False):
                self.on_evict(node)

    def discard(self, page_id: int) -> None:
        self.pages.pop(page_id, None)

    def order(self) -> list[int]:
        """Page ids from coldest to hottest."""
        return list(self.pages)
