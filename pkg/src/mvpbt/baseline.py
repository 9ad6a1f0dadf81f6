"""In-place, single-partition B+-Tree used as the comparison baseline.

Pages have a fixed size and split 50/50. Dirty pages stay in the buffer
cache and are overwritten at their home location when evicted, so every
write is a random single-page write. Obsolete versions are pruned inside
the leaf when a newer version of the same key arrives.
"""

from __future__ import annotations

import threading
from bisect import bisect_left
from collections.abc import Callable, Iterable, Iterator
from typing import Optional

from .btree import (
    CHILD_REF_SIZE, HEADER_SIZE, BulkBuilder, Node, decode_node, encode_node, inner_entry_size,
    leaf_versions, descend,
)
from .buffer import BufferCache
from .errors import DuplicateRecord, InvalidArgument
from .keys import make_key
from .records import RecordType, Snapshot, VersionRecord, record_size
from .store import NO_PAGE, PageStore


class InPlaceTree:
    n_cached = 0

    def __init__(self, store: PageStore, cache_bytes: int,
                 horizon: Optional[Callable[[], Optional[Snapshot]]] = None):
        self.store = store
        self.page_size = store.page_size
        self.cache = BufferCache(self.page_size, lambda: cache_bytes, on_evict=self._write_back)
        self.horizon = horizon
        self.lock = threading.RLock()
        self.node_visits = 0
        self.pruned = 0
        self.splits = 0
        if store.root_page_id != NO_PAGE:
            self.root = store.root_page_id
        else:
            self.root = self._new_node(Node(0, 0)).page_id

    @property
    def n_partitions(self) -> int:
        return 1

    def buffer_bytes(self) -> int:
        return 0

    # -- pages ----------------------------------------------------------------------

    def _write_back(self, node: Node) -> None:
        self.store.overwrite(encode_node(node, self.page_size))
        node.dirty = False

    def load(self, page_id: int) -> Node:
        self.node_visits += 1
        node = self.cache.get(page_id)
        if node is None:
            node = decode_node(self.store.read_page(page_id))
            self.cache.put(page_id, node)
        return node

    def _dirty(self, node: Node) -> None:
        node.dirty = True
        self.cache.put(node.page_id, node)

    def _new_node(self, node: Node) -> Node:
        node.page_id = self.store.reserve(1)[0]
        self._dirty(node)
        return node

    def _full(self, node: Node) -> bool:
        return HEADER_SIZE + node.nbytes > self.page_size

    # -- writes -----------------------------------------------------------------------

    def insert(self, user_key: bytes, rtype: int, ts: int, value: bytes) -> int:
        with self.lock:
            path = []
            node = self.load(self.root)
            while node.level > 0:
                j = bisect_left(node.keys, user_key)
                path.append((node, j))
                node = self.load(node.vals[j])
            keys = node.keys
            pos = bisect_left(keys, user_key)
            if pos < len(keys) and keys[pos] == user_key and node.vals[pos][1] == ts:
                raise DuplicateRecord(f"version ({user_key!r}, ts={ts}) already present")
            size = record_size(len(user_key), len(value))
            keys.insert(pos, user_key)
            node.vals.insert(pos, (int(rtype), ts, value))
            node.nbytes += size
            self._prune(node, pos)
            self._dirty(node)
            if self._full(node):
                self._split(node, path)
            return 0

    def _prune(self, leaf: Node, pos: int) -> None:
        """Drop versions of ``keys[pos]`` older than the newest one the horizon sees."""
        if self.horizon is None:
            return
        horizon = self.horizon()
        if horizon is None:
            return
        keys, vals = leaf.keys, leaf.vals
        key = keys[pos]
        i = pos
        while i < len(keys) and keys[i] == key and not horizon.sees(vals[i][1]):
            i += 1
        if i >= len(keys) or keys[i] != key:
            return
        j = i + 1
        while j < len(keys) and keys[j] == key:
            j += 1
        if j > i + 1:
            for k in range(i + 1, j):
                leaf.nbytes -= record_size(len(key), len(vals[k][2]))
            del keys[i + 1:j]
            del vals[i + 1:j]
            self.pruned += j - i - 1

    def _split(self, node: Node, path) -> None:
        while self._full(node) and len(node.vals) >= 2:
            self.splits += 1
            if node.level == 0:
                target = node.nbytes / 2
                acc, cut = 0, 1
                for i, (k, v) in enumerate(zip(node.keys, node.vals)):
                    acc += record_size(len(k), len(v[2]))
                    if acc >= target:
                        cut = max(1, min(i + 1, len(node.keys) - 1))
                        break
                right = Node(0, 0, node.keys[cut:], node.vals[cut:])
                right.nbytes = sum(record_size(len(k), len(v[2])) for k, v in zip(right.keys, right.vals))
                del node.keys[cut:]
                del node.vals[cut:]
                node.nbytes -= right.nbytes
                self._new_node(right)
                right.next = node.next
                node.next = right.page_id
                sep = right.keys[0]
            else:
                cut = len(node.vals) // 2
                sep = node.keys[cut - 1]
                right = Node(node.level, 0, node.keys[cut:], node.vals[cut:])
                del node.keys[cut - 1:]
                del node.vals[cut:]
                node.nbytes = CHILD_REF_SIZE + sum(inner_entry_size(s) for s in node.keys)
                right.nbytes = CHILD_REF_SIZE + sum(inner_entry_size(s) for s in right.keys)
                self._new_node(right)
            self._dirty(node)
            if not path:
                root = Node(node.level + 1, 0, [sep], [node.page_id, right.page_id],
                            CHILD_REF_SIZE + inner_entry_size(sep))
                self.root = self._new_node(root).page_id
                return
            parent, j = path.pop()
            parent.keys.insert(j, sep)
            parent.vals.insert(j + 1, right.page_id)
            parent.nbytes += inner_entry_size(sep)
            self._dirty(parent)
            node = parent

    def bulk_load(self, items: Iterable[tuple[bytes, bytes]], ts: int = 0) -> int:
        with self.lock:
            root = self.cache.peek(self.root)
            if root is None or root.level != 0 or root.keys:
                raise InvalidArgument("bulk load requires an empty tree")
            self.cache.discard(self.root)
            builder = BulkBuilder(self.store, 0)
            for k, v in items:
                builder.add(k, RecordType.REGULAR, ts, v)
            built = builder.finish()
            if built is None:
                self.root = self._new_node(Node(0, 0)).page_id
                return 0
            self.root = built.root_id
            self.checkpoint()
            return built.n_records

    def checkpoint(self) -> int:
        """Write every dirty page in place, then the superblock."""
        with self.lock:
            n = 0
            for pid in self.cache.order():
                node = self.cache.peek(pid)
                if node.dirty:
                    self._write_back(node)
                    n += 1
            self.store.sync()
            self.store.write_superblock(self.root)
            return n

    # -- reads ---------------------------------------------------------------------------

    def lookup(self, user_key: bytes) -> Iterator[VersionRecord]:
        leaf, hi, _ = descend(self.root, user_key, self.load)
        key = make_key(0, user_key)
        for rtype, ts, value in leaf_versions(leaf, hi, user_key, self.load):
            yield VersionRecord(RecordType(rtype), ts, key, value)

    def scan_children(self, low: bytes, high: Optional[bytes]):
        return [self._stream(low, high)], []

    def unpin(self, pnrs) -> None:
        pass

    def _stream(self, low: bytes, high: Optional[bytes]):
        leaf = descend(self.root, low, self.load)[0]
        first = True
        while True:
            keys, vals = list(leaf.keys), list(leaf.vals)
            nxt = leaf.next
            pos = bisect_left(keys, low) if first else 0
            first = False
            group: list = []
            cur = None
            for i in range(pos, len(keys)):
                k = keys[i]
                if high is not None and k >= high:
                    if group:
                        yield cur, 0, group
                    return
                if k != cur:
                    if group:
                        yield cur, 0, group
                    cur, group = k, []
                rtype, ts, value = vals[i]
                group.append(VersionRecord(RecordType(rtype), ts, make_key(0, k), value))
            if group:
                yield cur, 0, group
            if nxt is None:
                return
            leaf = self.load(nxt)

    def scan_records(self):
        leaf = descend(self.root, b"", self.load)[0]
        while True:
            for k, (rtype, ts, value) in zip(list(leaf.keys), list(leaf.vals)):
                yield 0, k, rtype, ts, value
            if leaf.next is None:
                return
            leaf = self.load(leaf.next)
