"""Partition metadata, per-partition filters, switch triggering and cache handover.

Everything here is derivable from the tree itself; it is cached in memory
because searches and insertions consult it constantly.
"""

from __future__ import annotations

import hashlib
import math
import os
from collections.abc import Iterable, Sequence
from dataclasses import asdict, dataclass, field
from typing import Optional, Protocol

from .errors import FilterNotBuilt, InvalidArgument, SwitchInProgress
from .keys import MAX_PNR

REGULAR = "R"
CACHED = "C"
GC_OUTPUT = "G"
INVISIBLE = "I"
PARTITION_TYPES = (REGULAR, CACHED, GC_OUTPUT, INVISIBLE)


@dataclass
class GlobalMeta:
    cache_bytes: int
    buffer_share: float = 0.2
    buffer_share_max: float = 0.2
    require_switch: bool = False

    def __post_init__(self):
        if not 0.0 <= self.buffer_share <= 1.0:
            raise InvalidArgument("buffer_share must lie in [0, 1]")

    @property
    def threshold_bytes(self) -> float:
        return self.buffer_share * self.cache_bytes

    def update(self, dirty_bytes: int) -> bool:
        self.require_switch = dirty_bytes > self.threshold_bytes
        return self.require_switch


@dataclass
class TreeMeta:
    relation_id: int = 0
    max_pnr: int = 0
    is_switching: bool = False
    # Next never-used partition number; equals max_pnr + 1 unless a
    # maintenance job reserved numbers for its output partitions.
    next_pnr: int = 1

    def allocate(self) -> int:
        pnr = self.next_pnr
        if pnr > MAX_PNR:
            raise InvalidArgument("partition numbers exhausted")
        self.next_pnr += 1
        return pnr


@dataclass
class PartitionMeta:
    pnr: int
    synced: bool = False
    n_records: int = 0
    dirty_leaf: int = 0
    type: str = REGULAR
    # Range of regular partition numbers whose data this partition stands for.
    cover_lo: int = -1
    cover_hi: int = -1

    def __post_init__(self):
        if self.type not in PARTITION_TYPES:
            raise InvalidArgument(f"unknown partition type {self.type!r}")
        if self.cover_lo < 0:
            self.cover_lo = self.pnr
        if self.cover_hi < 0:
            self.cover_hi = self.pnr

    def dump(self) -> tuple:
        return (self.pnr, self.type, self.synced, self.n_records, self.cover_lo, self.cover_hi)


# -- filters ------------------------------------------------------------------------


def key_hashes(user_key: bytes) -> tuple[int, int]:
    d = hashlib.blake2b(user_key, digest_size=16).digest()
    return int.from_bytes(d[:8], "little"), int.from_bytes(d[8:], "little") | 1


@dataclass
class PartitionFilter:
    fence_low: bytes = b""
    fence_high: bytes = b""
    bits_per_key: int = 10
    k: int = 7
    m: int = 0
    bits: Optional[bytearray] = None
    n_keys: int = 0

    @property
    def built(self) -> bool:
        return self.bits is not None

    @property
    def nbytes(self) -> int:
        return 0 if self.bits is None else len(self.bits)

    def add_hashed(self, h1: int, h2: int) -> None:
        bits, m = self.bits, self.m
        for i in range(self.k):
            b = (h1 + i * h2) % m
            bits[b >> 3] |= 1 << (b & 7)

    def might_contain(self, user_key: bytes, hashes: Optional[tuple[int, int]] = None) -> bool:
        if self.bits is None:
            raise FilterNotBuilt("filter probed before it was built and published")
        if self.n_keys == 0 or user_key < self.fence_low or user_key > self.fence_high:
            return False
        h1, h2 = hashes if hashes is not None else key_hashes(user_key)
        bits, m = self.bits, self.m
        for i in range(self.k):
            b = (h1 + i * h2) % m
            if not bits[b >> 3] & (1 << (b & 7)):
                return False
        return True

    def in_fences(self, low: bytes, high: Optional[bytes]) -> bool:
        """True if ``[low, high)`` intersects ``[fence_low, fence_high]``."""
        if self.n_keys == 0:
            return False
        return self.fence_high >= low and (high is None or self.fence_low < high)


class FilterBuilder:
    """Accumulates distinct keys in ascending order, then sizes the bloom once."""

    def __init__(self, bits_per_key: int = 10, k: int = 7):
        self.bits_per_key = bits_per_key
        self.k = k
        self.hashes: list[tuple[int, int]] = []
        self.first: Optional[bytes] = None
        self.last: Optional[bytes] = None

    def add(self, user_key: bytes) -> None:
        if user_key == self.last:
            return
        if self.first is None:
            self.first = user_key
        self.last = user_key
        self.hashes.append(key_hashes(user_key))

    def build(self) -> PartitionFilter:
        n = len(self.hashes)
        m = max(64, n * self.bits_per_key)
        f = PartitionFilter(self.first or b"", self.last or b"", self.bits_per_key, self.k,
                            m, bytearray((m + 7) // 8), n)
        for h1, h2 in self.hashes:
            f.add_hashed(h1, h2)
        return f


def build_filter(user_keys: Iterable[bytes], bits_per_key: int = 10, k: int = 7) -> PartitionFilter:
    """Build fence keys plus a bloom filter over the (sorted) keys of a partition."""
    fb = FilterBuilder(bits_per_key, k)
    for key in sorted(set(user_keys)):
        fb.add(key)
    return fb.build()


def probe(f: PartitionFilter, user_key: bytes) -> bool:
    return f.might_contain(user_key)


def expected_fp_rate(bits_per_key: float, k: int) -> float:
    return (1.0 - math.exp(-k / bits_per_key)) ** k


# -- switch triggering --------------------------------------------------------------


class SwitchCandidate(Protocol):
    meta: TreeMeta

    @property
    def mutable_dirty(self) -> int: ...


def maybe_trigger_switch(global_meta: GlobalMeta, trees: Sequence[SwitchCandidate]) -> Optional[int]:
    """Pick the tree whose mutable partition holds the most dirty bytes, if a switch is due."""
    total = sum(t.mutable_dirty for t in trees)
    if not global_meta.update(total):
        return None
    best = None
    for t in trees:
        if t.meta.is_switching:
            continue
        if best is None or t.mutable_dirty > best.mutable_dirty:
            best = t
    return None if best is None else best.meta.relation_id


def begin_switch(meta: TreeMeta) -> tuple[int, int]:
    """Atomically retire ``max_pnr`` and open the next partition. Returns (victim, new)."""
    if meta.is_switching:
        raise SwitchInProgress(f"relation {meta.relation_id} is already switching")
    meta.is_switching = True
    victim = meta.max_pnr
    new = meta.allocate()
    meta.max_pnr = new
    return victim, new


def handover_to_replacement(cache, nodes: Iterable) -> int:
    """Admit freshly flushed (clean) nodes into the LRU. Returns bytes handed over."""
    n = 0
    for node in nodes:
        node.dirty = False
        cache.put(node.page_id, node)
        n += 1
    return n * cache.page_size


# -- sidecar checkpoint -----------------------------------------------------------------


def write_sidecar(path: str | os.PathLike, metas: Iterable[PartitionMeta]) -> None:
    tmp = f"{os.fspath(path)}.tmp"
    with open(tmp, "w") as fh:
        for p in metas:
            fh.write(f"{p.pnr},{p.type},{int(p.synced)},{p.n_records}\n")
    os.replace(tmp, path)


def read_sidecar(path: str | os.PathLike) -> list[tuple[int, str, bool, int]]:
    rows = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            pnr, typ, synced, n = line.split(",")
            rows.append((int(pnr), typ, synced == "1", int(n)))
    return rows


def metadata_dump(meta: TreeMeta, parts: Iterable[PartitionMeta]) -> dict:
    return {
        "tree": {"relation_id": meta.relation_id, "max_pnr": meta.max_pnr},
        "partitions": sorted(p.dump() for p in parts),
    }


def recover_metadata(path):
    """Rebuild TreeMeta and partition metadata of a tree file by scanning its leaves."""
    from .tree import recover_from_file

    return recover_from_file(path)
