"""The Multi-Version Partitioned BTree.

One B+-Tree whose key space is split by the partition-number prefix. Each
partition occupies a contiguous key range and hence its own subtree below
the shared root levels (nodes flagged ``FLAG_TOP``). The most recent
partition lives in memory as a flexible ``MemTree``; a partition switch
freezes it, reconciles it into dense pages and writes them in one ascending
run, followed by fresh root levels and the superblock.
"""

from __future__ import annotations

import threading
from collections import Counter
from collections.abc import Iterable, Iterator
from dataclasses import dataclass, field
from typing import Optional

from . import partitions as pm
from .btree import (
    FLAG_TOP, BulkBuilder, MemTree, Node, build_inner_levels, decode_node, descend,
    flush_sequential, iter_entries, leaf_versions, reconcile, walk_pages,
)
from .buffer import BufferCache
from .errors import Busy, CorruptPage, InvalidArgument, StalePartition
from .keys import make_key, partition_floor, pnr_of, split_key
from .partitions import (
    CACHED, GC_OUTPUT, INVISIBLE, REGULAR, FilterBuilder, GlobalMeta, PartitionFilter,
    PartitionMeta, TreeMeta, key_hashes,
)
from .records import RecordType, VersionRecord
from .store import NO_PAGE, PageStore

DESCRIPTOR_KEY = b""


@dataclass
class TreeConfig:
    page_size: int = 16384
    cache_bytes: int = 10 * 1024 * 1024
    buffer_share_max: float = 0.2
    partition_cap_bytes: int = 2 * 1024 * 1024
    bloom_bits_per_key: int = 10
    bloom_k: int = 7
    flex_factor: int = 4
    dense_fill_target: float = 0.9
    rightmost_split: float = 0.95
    sidecar: bool = True


@dataclass
class Partition:
    meta: PartitionMeta
    mem: Optional[MemTree] = None
    root: int = NO_PAGE
    height: int = 0
    page_ids: list = field(default_factory=list)
    filter: Optional[PartitionFilter] = None
    hidden: bool = False
    final_type: str = REGULAR  # type taken on when an invisible build is published

    @property
    def pnr(self) -> int:
        return self.meta.pnr

    @property
    def type(self) -> str:
        return self.meta.type

    @property
    def persisted(self) -> bool:
        return self.mem is None and self.root != NO_PAGE

    @property
    def is_data(self) -> bool:
        return self.meta.type in (REGULAR, GC_OUTPUT)


def _descriptor_value(meta: PartitionMeta) -> bytes:
    return f"{meta.type}:{meta.cover_lo}:{meta.cover_hi}".encode()


def _parse_descriptor(value: bytes) -> tuple[str, int, int]:
    typ, lo, hi = value.decode().split(":")
    return typ, int(lo), int(hi)


class TreeStats:
    __slots__ = ("node_visits", "filter_probes", "filter_negatives", "filter_false_positives",
                 "traversals", "cached_lookups", "records_examined", "switches", "truncated_partitions")

    def __init__(self):
        for s in self.__slots__:
            setattr(self, s, 0)

    def as_dict(self) -> dict:
        return {s: getattr(self, s) for s in self.__slots__}


class MVPBTree:
    def __init__(self, store: PageStore, config: TreeConfig = TreeConfig(), relation_id: int = 0,
                 sidecar_path: Optional[str] = None):
        if store.page_size != config.page_size:
            raise InvalidArgument("store and tree disagree on page size")
        self.store = store
        self.config = config
        self.sidecar_path = sidecar_path
        self.meta = TreeMeta(relation_id=relation_id)
        self.global_meta = GlobalMeta(config.cache_bytes, config.buffer_share_max, config.buffer_share_max)
        self.parts: dict[int, Partition] = {}
        self.cache = BufferCache(config.page_size, self._cache_budget)
        self.stats = TreeStats()
        self.lock = threading.RLock()
        self.pins: Counter = Counter()
        self.pending_truncations: list[tuple[bytes, bytes]] = []
        self.top_ids: list[int] = []
        self._succession: Optional[list[Partition]] = None
        self.victim: Optional[Partition] = None
        self.mutable: Partition = None  # type: ignore[assignment]
        if store.root_page_id != NO_PAGE:
            self._recover()
        else:
            self._open_mutable(0)
            self.meta.next_pnr = 1

    # -- memory accounting -------------------------------------------------------------

    @property
    def mutable_dirty(self) -> int:
        return self.mutable.mem.dirty_bytes

    def buffer_bytes(self) -> int:
        n = self.mutable.mem.dirty_bytes
        if self.victim is not None and self.victim.mem is not None:
            n += self.victim.mem.dirty_bytes
        return n

    def filter_bytes(self) -> int:
        return sum(p.filter.nbytes for p in self.succession()
                   if p.filter is not None and p.mem is None)

    def _cache_budget(self) -> int:
        return self.config.cache_bytes - self.buffer_bytes() - self.filter_bytes()

    # -- page access ---------------------------------------------------------------------

    def load(self, page_id: int) -> Node:
        node = self.cache.get(page_id)
        self.stats.node_visits += 1
        if node is None:
            node = decode_node(self.store.read_page(page_id))
            self.cache.put(page_id, node)
        return node

    def load_uncached(self, page_id: int) -> Node:
        """Read a page for a scan-like consumer without displacing hot pages."""
        node = self.cache.peek(page_id)
        if node is None:
            node = decode_node(self.store.read_page(page_id))
        return node

    # -- partitions ------------------------------------------------------------------------

    def _open_mutable(self, pnr: int) -> None:
        flex = self.config.flex_factor * self.config.page_size
        part = Partition(PartitionMeta(pnr), mem=MemTree(pnr, flex, self.config.rightmost_split))
        self.parts[pnr] = part
        self.mutable = part
        self.meta.max_pnr = pnr
        self._succession = None

    def succession(self) -> list[Partition]:
        """Visible partitions in search order, newest data first."""
        succ = self._succession
        if succ is None:
            succ = [p for p in self.parts.values() if p.meta.type != INVISIBLE and not p.hidden]
            succ.sort(key=lambda p: (p.meta.cover_hi, p.meta.type == CACHED, p.pnr), reverse=True)
            self._succession = succ
        return succ

    def invalidate_succession(self) -> None:
        cached = [p for p in self.parts.values() if p.meta.type == CACHED]
        for p in self.parts.values():
            if p.meta.type == CACHED or p.mem is not None:
                p.hidden = False
                continue
            p.hidden = any(c.meta.cover_lo <= p.meta.cover_lo and p.meta.cover_hi <= c.meta.cover_hi
                           for c in cached)
        self._succession = None

    def partition_metas(self, include_unsynced: bool = True) -> list[PartitionMeta]:
        return [p.meta for p in sorted(self.parts.values(), key=lambda p: p.pnr)
                if p.meta.type != INVISIBLE and (include_unsynced or p.meta.synced)]

    def data_partitions(self) -> list[Partition]:
        return [p for p in self.parts.values() if p.is_data and p.meta.type != INVISIBLE]

    @property
    def n_partitions(self) -> int:
        return sum(1 for p in self.parts.values() if p.meta.type != INVISIBLE)

    @property
    def n_cached(self) -> int:
        return sum(1 for p in self.parts.values() if p.meta.type == CACHED)

    # -- insertion ---------------------------------------------------------------------------

    def tree_insert(self, pnr: int, user_key: bytes, rtype: int, ts: int, value: bytes) -> None:
        """Insert into partition ``pnr``; it must still be the most recent one."""
        with self.lock:
            current = self.meta.max_pnr
            if pnr != current:
                raise StalePartition(pnr, current)
            part = self.mutable
            size = part.mem.insert(user_key, rtype, ts, value)
            part.meta.n_records += 1
            part.meta.dirty_leaf += size

    def insert(self, user_key: bytes, rtype: int, ts: int, value: bytes,
               held_pnr: Optional[int] = None) -> int:
        """Insert with stale-pnr detection: rewrite the partition number and re-traverse.

        ``held_pnr`` is the partition number read at traversal start (defaults
        to the current one). Returns the partition the record landed in.
        """
        pnr = self.meta.max_pnr if held_pnr is None else held_pnr
        while True:
            try:
                self.tree_insert(pnr, user_key, rtype, ts, value)
                return pnr
            except StalePartition as exc:
                pnr = exc.current

    # -- switch, reconcile, flush ---------------------------------------------------------------

    def switch_partition(self) -> int:
        """Freeze the mutable partition as victim and open a fresh one. Returns the victim pnr."""
        with self.lock:
            victim_pnr, new_pnr = pm.begin_switch(self.meta)
            self.victim = self.parts[victim_pnr]
            self._open_mutable(new_pnr)
            self.stats.switches += 1
            return victim_pnr

    def complete_victim(self, horizon=None):
        """Reconcile, filter, flush and hand over the current victim partition."""
        victim = self.victim
        if victim is None:
            return None
        mem = victim.mem
        leaves = list(mem.leaves())
        if horizon is not None:
            leaves = _drop_shadowed(leaves, horizon, victim.meta)
        levels = reconcile([l for l in leaves if l.keys], self.config.page_size, victim.pnr)
        fb = FilterBuilder(self.config.bloom_bits_per_key, self.config.bloom_k)
        n = 0
        if levels:
            for leaf in levels[0]:
                for k in leaf.keys:
                    fb.add(k)
                n += len(leaf.keys)
        pf = fb.build()
        with self.lock:
            if levels:
                victim_nodes = [node for lvl in levels for node in lvl]
                root_node = levels[-1][0]
                top_levels, old_top = self._top_levels(extra=(victim.pnr, root_node))
                report = flush_sequential(levels + top_levels, self.store)
                victim.root = root_node.page_id
                victim.height = len(levels)
                victim.page_ids = [node.page_id for node in victim_nodes]
                self._commit_top(top_levels, old_top)
                victim.mem = None
                victim.filter = pf
                pm.handover_to_replacement(self.cache, victim_nodes)
            else:
                report = None
                del self.parts[victim.pnr]
            victim.meta.synced = True
            victim.meta.dirty_leaf = 0
            victim.meta.n_records = n
            self.victim = None
            self.meta.is_switching = False
            self.global_meta.buffer_share = self.global_meta.buffer_share_max
            self.invalidate_succession()
            self.write_sidecar()
        return report

    def _top_levels(self, extra=None, exclude: Iterable[int] = ()) -> tuple[list, list[int]]:
        """Fresh root levels over all persisted, visible-or-hidden partitions."""
        exclude = set(exclude)
        children = []
        for p in sorted(self.parts.values(), key=lambda p: p.pnr):
            if p.pnr in exclude or p.meta.type == INVISIBLE:
                continue
            if extra is not None and p.pnr == extra[0]:
                children.append((p.pnr, extra[1]))
            elif p.persisted:
                children.append((p.pnr, p.root))
        old = list(self.top_ids)
        if not children:
            return [], old
        nodes = [c for _, c in children]
        lows = [partition_floor(pnr) for pnr, _ in children]
        levels = build_inner_levels(nodes, lows, self.config.page_size, 0, base_level=1, flags=FLAG_TOP)
        if not levels:
            levels = [[Node(1, 0, [], [nodes[0]], 8, flags=FLAG_TOP)]]
        return levels, old

    def _commit_top(self, top_levels, old_top: list[int]) -> None:
        root = top_levels[-1][0].page_id if top_levels else NO_PAGE
        self.top_ids = [n.page_id for lvl in top_levels for n in lvl]
        self.store.sync()
        # max_pnr is stored off by one so that zero means "not recorded".
        self.store.write_superblock(root, (self.meta.max_pnr + 1, self.meta.next_pnr))
        self.store.free_extents(old_top)
        for pid in old_top:
            self.cache.discard(pid)

    def rewrite_top(self) -> None:
        with self.lock:
            top_levels, old = self._top_levels()
            flush_sequential(top_levels, self.store)
            self._commit_top(top_levels, old)

    def write_sidecar(self) -> None:
        if self.sidecar_path and self.config.sidecar:
            pm.write_sidecar(self.sidecar_path, self.partition_metas(include_unsynced=False))

    # -- reads ----------------------------------------------------------------------------------------

    def partition_versions(self, part: Partition, user_key: bytes) -> Iterator[tuple[int, int, bytes]]:
        if part.mem is not None:
            return part.mem.versions(user_key)
        self.stats.traversals += 1
        self.stats.node_visits += 1  # shared root level, always resident
        leaf, hi, _ = descend(part.root, user_key, self.load)
        return leaf_versions(leaf, hi, user_key, self.load)

    def _records(self, part: Partition, user_key: bytes) -> Iterator[VersionRecord]:
        key = make_key(part.pnr, user_key)
        for rtype, ts, value in self.partition_versions(part, user_key):
            self.stats.records_examined += 1
            yield VersionRecord(RecordType(rtype), ts, key, value)

    def _probe(self, part: Partition, user_key: bytes, hashes) -> bool:
        f = part.filter
        if f is None:
            return True
        self.stats.filter_probes += 1
        if f.might_contain(user_key, hashes):
            return True
        self.stats.filter_negatives += 1
        return False

    def cached_target(self, cpart: Partition, user_key: bytes) -> Optional[int]:
        for rtype, ts, value in self.partition_versions(cpart, user_key):
            return int.from_bytes(value, "big")
        return None

    def covered_data(self, cpart: Partition) -> list[Partition]:
        lo, hi = cpart.meta.cover_lo, cpart.meta.cover_hi
        out = [p for p in self.parts.values()
               if p.is_data and p.meta.type != INVISIBLE and lo <= p.meta.cover_lo and p.meta.cover_hi <= hi]
        out.sort(key=lambda p: p.meta.cover_hi, reverse=True)
        return out

    def cached_lookup(self, cpart: Partition, user_key: bytes, hashes=None) -> Iterator[VersionRecord]:
        """Candidates from the partitions indexed by ``cpart``, newest first.

        The index names the partition with the newest version; older covered
        partitions are only visited if the caller keeps iterating (i.e. the
        indexed version was invisible to its snapshot).
        """
        hashes = hashes or key_hashes(user_key)
        if not self._probe(cpart, user_key, hashes):
            return
        self.stats.cached_lookups += 1
        target = self.cached_target(cpart, user_key)
        if target is None:
            return
        tpart = self.parts[target]
        yield from self._records(tpart, user_key)
        for p in self.covered_data(cpart):
            if p.meta.cover_hi < tpart.meta.cover_lo:
                yield from self._records(p, user_key)

    def lookup(self, user_key: bytes) -> Iterator[VersionRecord]:
        """All candidate versions of ``user_key`` across the search succession, newest first."""
        hashes = None
        for part in self.succession():
            if part.mem is not None:
                yield from self._records(part, user_key)
                continue
            if hashes is None:
                hashes = key_hashes(user_key)
            if part.meta.type == CACHED:
                yield from self.cached_lookup(part, user_key, hashes)
            elif self._probe(part, user_key, hashes):
                before = self.stats.records_examined
                yield from self._records(part, user_key)
                if self.stats.records_examined == before:
                    self.stats.filter_false_positives += 1

    def scan_children(self, low: bytes, high: Optional[bytes]) -> list:
        """One sorted child stream per visible partition intersecting ``[low, high)``.

        Each stream yields ``(user_key, rank, candidates)`` with candidates
        newest first. Pinned partitions are returned for the caller to unpin.
        """
        children = []
        pinned = []
        for part in self.succession():
            rank = part.meta.cover_hi
            if part.mem is not None:
                children.append(_mem_stream(part, low, high, rank))
            elif part.filter is not None and not part.filter.in_fences(low, high):
                continue
            elif part.meta.type == CACHED:
                children.append(self._cached_stream(part, low, high, rank))
                pinned.extend(p.pnr for p in self.covered_data(part))
            else:
                children.append(self._persisted_stream(part, low, high, rank))
            pinned.append(part.pnr)
        for pnr in pinned:
            self.pins[pnr] += 1
        return children, pinned

    def unpin(self, pnrs: Iterable[int]) -> None:
        for pnr in pnrs:
            self.pins[pnr] -= 1
            if self.pins[pnr] <= 0:
                del self.pins[pnr]
        if self.pending_truncations and not self.pins:
            pending, self.pending_truncations = self.pending_truncations, []
            for low, high in pending:
                self.range_truncate(low, high)

    def _persisted_stream(self, part, low, high, rank):
        key = None
        group: list = []
        pnr = part.pnr
        self.stats.traversals += 1
        for k, (rtype, ts, value) in iter_entries(part.root, self.load, low, high):
            if k == DESCRIPTOR_KEY:
                continue
            if k != key:
                if group:
                    yield key, rank, group
                key, group = k, []
            group.append(VersionRecord(RecordType(rtype), ts, make_key(pnr, k), value))
        if group:
            yield key, rank, group

    def _cached_stream(self, cpart, low, high, rank):
        self.stats.traversals += 1
        for k, _val in iter_entries(cpart.root, self.load, low, high):
            if k == DESCRIPTOR_KEY:
                continue
            yield k, rank, self.cached_lookup(cpart, k)

    # -- truncation -------------------------------------------------------------------------------------

    def range_truncate(self, low: bytes, high: bytes) -> int:
        """Remove all records with partitioned key in ``[low, high)``.

        Partitions lying wholly inside the range are dropped by freeing their
        pages; a partially covered persisted partition is rebuilt without the
        range.
        """
        if high <= low:
            return 0
        with self.lock:
            affected = []
            for p in self.parts.values():
                floor = partition_floor(p.pnr)
                ceil = partition_floor(p.pnr + 1) if p.pnr < 0xFFFF else b"\xff\xff\xff"
                if ceil <= low or floor >= high:
                    continue
                affected.append((p, low <= floor and ceil <= high))
            if not affected:
                return 0
            for p, _ in affected:
                if self.pins.get(p.pnr):
                    raise Busy(f"partition {p.pnr} is pinned by an active cursor")
                if p.mem is not None:
                    raise InvalidArgument("cannot truncate a partition that is still in memory")
            removed = 0
            for p, whole in affected:
                if whole:
                    removed += p.meta.n_records
                    self._drop_partition(p)
                else:
                    removed += self._rebuild_without(p, low, high)
            self.invalidate_succession()
            self.rewrite_top()
            self.write_sidecar()
            return removed

    def _drop_partition(self, p: Partition) -> None:
        self.store.free_extents(p.page_ids)
        for pid in p.page_ids:
            self.cache.discard(pid)
        del self.parts[p.pnr]
        self.stats.truncated_partitions += 1

    def _rebuild_without(self, p: Partition, low: bytes, high: bytes) -> int:
        ulow = split_key(low)[1] if pnr_of(low) == p.pnr else None
        uhigh = split_key(high)[1] if pnr_of(high) == p.pnr else None
        fb = FilterBuilder(self.config.bloom_bits_per_key, self.config.bloom_k)
        builder = BulkBuilder(self.store, p.pnr)
        kept = dropped = 0
        for k, (rtype, ts, value) in iter_entries(p.root, self.load_uncached):
            inside = (ulow is None or k >= ulow) and (uhigh is None or k < uhigh) and k != DESCRIPTOR_KEY
            if inside:
                dropped += 1
                continue
            builder.add(k, rtype, ts, value)
            if k != DESCRIPTOR_KEY:
                fb.add(k)
                kept += 1
        built = builder.finish()
        self.store.free_extents(p.page_ids)
        for pid in p.page_ids:
            self.cache.discard(pid)
        if built is None:
            del self.parts[p.pnr]
        else:
            p.root, p.height, p.page_ids = built.root_id, built.height, built.page_ids
            p.filter = fb.build()
            p.meta.n_records = kept
        return dropped

    # -- bulk building ------------------------------------------------------------------------------------

    def begin_build(self, pnr: int, ptype: str, cover: tuple[int, int]) -> "PartitionBuild":
        """Start bulk loading an invisible partition; feed it sorted records."""
        return PartitionBuild(self, pnr, ptype, cover)

    def build_partition(self, pnr: int, ptype: str, cover: tuple[int, int],
                        records: Iterable[tuple[bytes, int, int, bytes]]) -> Partition:
        """Bulk load sorted ``(user_key, rtype, ts, value)`` into an invisible partition."""
        build = self.begin_build(pnr, ptype, cover)
        for rec in records:
            build.add(*rec)
        return build.finish()

    def publish(self, part: Partition, drop: Iterable[Partition] = ()) -> list[Partition]:
        """Atomically make an invisible partition visible; schedule ``drop`` for truncation."""
        with self.lock:
            part.meta.type = part.final_type
            if part.root == NO_PAGE:
                del self.parts[part.pnr]
            drop = [p for p in drop if p.pnr in self.parts]
            for p in drop:
                p.meta.type = INVISIBLE  # leaves every search succession immediately
            self.invalidate_succession()
            self.rewrite_top_excluding([p.pnr for p in drop])
            for p in drop:
                lo, hi = partition_floor(p.pnr), partition_floor(p.pnr + 1)
                if self.pins.get(p.pnr):
                    self.pending_truncations.append((lo, hi))
                else:
                    self.range_truncate(lo, hi)
            self.write_sidecar()
            return drop

    def rewrite_top_excluding(self, pnrs) -> None:
        top_levels, old = self._top_levels(exclude=pnrs)
        flush_sequential(top_levels, self.store)
        self._commit_top(top_levels, old)

    def bulk_load(self, items: Iterable[tuple[bytes, bytes]], ts: int = 0) -> int:
        """Load sorted key/value pairs as a synced partition, then open a fresh mutable one."""
        with self.lock:
            if self.mutable.meta.n_records or self.victim is not None:
                raise InvalidArgument("bulk load requires an empty mutable partition")
            pnr = self.mutable.pnr
            del self.parts[pnr]
            part = self.build_partition(pnr, REGULAR, (pnr, pnr),
                                        ((k, RecordType.REGULAR, ts, v) for k, v in items))
            part.meta.type = REGULAR
            if part.root == NO_PAGE:
                del self.parts[pnr]
            self.meta.max_pnr = pnr
            self.meta.next_pnr = max(self.meta.next_pnr, pnr + 1)
            new = self.meta.allocate()
            self._open_mutable(new)
            self.invalidate_succession()
            self.rewrite_top()
            self.write_sidecar()
            return part.meta.n_records

    def iter_partition(self, part: Partition) -> Iterator[tuple[bytes, int, int, bytes]]:
        """Stream ``(user_key, rtype, ts, value)`` of a persisted partition, for maintenance."""
        for k, (rtype, ts, value) in iter_entries(part.root, self.load_uncached):
            if k != DESCRIPTOR_KEY:
                yield k, rtype, ts, value

    # -- audits -----------------------------------------------------------------------------------------

    def scan_records(self) -> Iterator[tuple[int, bytes, int, int, bytes]]:
        """Full leaf scan of all persisted and in-memory partitions: ``(pnr, key, rtype, ts, value)``."""
        for pnr in sorted(self.parts):
            p = self.parts[pnr]
            if p.meta.type == INVISIBLE:
                continue
            if p.mem is not None:
                for leaf in p.mem.leaves():
                    for k, (rtype, ts, value) in zip(leaf.keys, leaf.vals):
                        yield pnr, k, rtype, ts, value
            elif p.persisted:
                for k, rtype, ts, value in self.iter_partition(p):
                    yield pnr, k, rtype, ts, value

    def audit(self) -> None:
        """Check fence sandwiches and key order of every persisted partition."""
        for p in self.parts.values():
            if not p.persisted:
                continue
            _audit_subtree(p.root, self.load_uncached, None, None)

    # -- recovery ------------------------------------------------------------------------------------

    def _recover(self) -> None:
        store = self.store
        reachable: set[int] = set()
        roots: list[tuple[int, int]] = []
        stack = [store.root_page_id]
        while stack:
            pid = stack.pop()
            node = decode_node(store.read_page(pid))
            reachable.add(pid)
            if not node.flags & FLAG_TOP:
                raise CorruptPage(pid, "expected a root-level node")
            self.top_ids.append(pid)
            for child in node.vals:
                child_node = decode_node(store.read_page(child))
                if child_node.flags & FLAG_TOP:
                    stack.append(child)
                else:
                    roots.append((child_node.pnr, child))
        max_seen = -1
        for pnr, root in roots:
            part = Partition(PartitionMeta(pnr, synced=True), root=root)
            fb = FilterBuilder(self.config.bloom_bits_per_key, self.config.bloom_k)
            n = 0
            for node in walk_pages(root, lambda pid: decode_node(store.read_page(pid))):
                part.page_ids.append(node.page_id)
                reachable.add(node.page_id)
                part.height = max(part.height, node.level + 1)
                if node.level == 0:
                    for k, (rtype, ts, value) in zip(node.keys, node.vals):
                        if k == DESCRIPTOR_KEY:
                            typ, lo, hi = _parse_descriptor(value)
                            part.meta.type, part.meta.cover_lo, part.meta.cover_hi = typ, lo, hi
                            continue
                        fb.add(k)
                        n += 1
            part.meta.n_records = n
            part.filter = fb.build()
            self.parts[pnr] = part
            max_seen = max(max_seen, pnr)
        store.free_extents(pid for pid in list(store.extents) if pid not in reachable)
        saved_max, saved_next = store.aux
        self.meta.next_pnr = max(max_seen + 1, saved_next)
        if saved_max and saved_max - 1 not in self.parts:
            # The mutable partition at the last durable point held no synced data; reopen it.
            self.meta.next_pnr = max(self.meta.next_pnr, saved_max)
            self._open_mutable(saved_max - 1)
        else:
            self._open_mutable(self.meta.allocate())
        self.invalidate_succession()


class PartitionBuild:
    """Incremental bulk load of one partition, written while invisible."""

    def __init__(self, tree: MVPBTree, pnr: int, ptype: str, cover: tuple[int, int]):
        self.tree = tree
        self.final = PartitionMeta(pnr, type=ptype, cover_lo=cover[0], cover_hi=cover[1])
        self.builder = BulkBuilder(tree.store, pnr)
        self.filter = FilterBuilder(tree.config.bloom_bits_per_key, tree.config.bloom_k)
        self.n = 0
        if ptype != REGULAR:
            self.builder.add(DESCRIPTOR_KEY, RecordType.REGULAR, 0, _descriptor_value(self.final))

    def add(self, user_key: bytes, rtype: int, ts: int, value: bytes) -> None:
        self.builder.add(user_key, rtype, ts, value)
        self.filter.add(user_key)
        self.n += 1

    def abort(self) -> None:
        """Discard written pages; they were never reachable from the root."""
        b = self.builder
        ids = list(b.leaf_ids) + ([b.pending.page_id] if b.pending is not None else [])
        self.tree.store.free_extents(ids)

    def finish(self) -> Partition:
        built = self.builder.finish()
        f = self.final
        meta = PartitionMeta(f.pnr, synced=True, n_records=self.n, type=INVISIBLE,
                             cover_lo=f.cover_lo, cover_hi=f.cover_hi)
        part = Partition(meta)
        if built is not None:
            part.root, part.height, part.page_ids = built.root_id, built.height, built.page_ids
        part.filter = self.filter.build()
        part.final_type = f.type
        with self.tree.lock:
            self.tree.parts[f.pnr] = part
        return part


def _drop_shadowed(leaves: list[Node], horizon, meta: PartitionMeta) -> list[Node]:
    """Drop versions shadowed inside the victim by a newer version every snapshot sees."""
    for leaf in leaves:
        keys, vals = leaf.keys, leaf.vals
        out_k, out_v = [], []
        prev = None
        shadowed = False
        for k, v in zip(keys, vals):
            if k != prev:
                prev = k
                shadowed = False
            if shadowed:
                continue
            out_k.append(k)
            out_v.append(v)
            if horizon.sees(v[1]):
                shadowed = True
        leaf.keys, leaf.vals = out_k, out_v
    return leaves


def _audit_subtree(root, load, low, high) -> None:
    node = load(root) if isinstance(root, int) else root
    keys = node.keys
    for a, b in zip(keys, keys[1:]):
        assert a <= b, f"unsorted keys in page {node.page_id}"
    if node.level == 0:
        if keys:
            assert low is None or keys[0] >= low, f"page {node.page_id} below its low fence"
            assert high is None or keys[-1] <= high, f"page {node.page_id} above its high fence"
        return
    bounds = [low] + keys + [high]
    for i, child in enumerate(node.vals):
        _audit_subtree(child, load, bounds[i], bounds[i + 1])


def _mem_stream(part: Partition, low: bytes, high: Optional[bytes], rank: int):
    pnr = part.pnr
    groups = []
    key = None
    group: list = []
    for k, (rtype, ts, value) in iter_entries(part.mem.root, None, low, high):
        if k != key:
            if group:
                groups.append((key, rank, group))
            key, group = k, []
        group.append(VersionRecord(RecordType(rtype), ts, make_key(pnr, k), value))
    if group:
        groups.append((key, rank, group))
    return iter(groups)


def recover_from_file(path, config: Optional[TreeConfig] = None):
    store = PageStore(path)
    cfg = config or TreeConfig(page_size=store.page_size)
    if cfg.page_size != store.page_size:
        cfg = TreeConfig(**{**cfg.__dict__, "page_size": store.page_size})
    tree = MVPBTree(store, cfg)
    metas = tree.partition_metas(include_unsynced=False)
    store.close()
    return tree.meta, metas
