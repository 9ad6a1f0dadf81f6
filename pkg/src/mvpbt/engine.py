"""Transactional key-value API over an MV-PBT or the in-place baseline tree."""

from __future__ import annotations

import heapq
import itertools
import threading
from dataclasses import dataclass, field, fields, replace
from enum import Enum
from typing import Iterator, Optional

from .baseline import InPlaceTree
from .errors import InvalidArgument, TransactionStateError
from .maintenance import Maintainer
from .records import RecordType, Snapshot, resolve_chain
from .store import DeviceModel, PageStore
from .tree import MVPBTree, TreeConfig

MODES = ("mvpbt", "mvpbt-nocache-nogc", "btree-baseline")


@dataclass
class EngineConfig:
    mode: str = "mvpbt"
    page_size: int = 16384
    cache_bytes: int = 10 * 1024 * 1024
    buffer_share_max: float = 0.2
    partition_cap_bytes: int = 2 * 1024 * 1024
    bloom_bits_per_key: int = 10
    bloom_k: int = 7
    flex_factor: int = 4
    cached_every: int = 8
    gc_every: int = 40
    quantum: int = 4096
    capacity_bytes: Optional[int] = None
    trace: bool = False
    device: DeviceModel = field(default_factory=DeviceModel)
    # Simulated CPU cost per unit of work, in microseconds.
    cpu_op_us: float = 5.0
    cpu_node_us: float = 1.0
    cpu_probe_us: float = 0.3
    cpu_merge_us: float = 0.5

    def __post_init__(self):
        if self.mode not in MODES:
            raise InvalidArgument(f"unknown mode {self.mode!r}; expected one of {', '.join(MODES)}")
        if self.partition_cap_bytes <= 0 or self.cache_bytes <= 0:
            raise InvalidArgument("cache and partition sizes must be positive")

    def tree_config(self) -> TreeConfig:
        return TreeConfig(page_size=self.page_size, cache_bytes=self.cache_bytes,
                          buffer_share_max=self.buffer_share_max,
                          partition_cap_bytes=self.partition_cap_bytes,
                          bloom_bits_per_key=self.bloom_bits_per_key, bloom_k=self.bloom_k,
                          flex_factor=self.flex_factor)

    @classmethod
    def from_mapping(cls, mapping: dict) -> "EngineConfig":
        names = {f.name for f in fields(cls)}
        unknown = set(mapping) - names
        if unknown:
            raise InvalidArgument(f"unknown config keys: {sorted(unknown)}")
        return cls(**mapping)


class TxState(Enum):
    ACTIVE = "Active"
    COMMITTED = "Committed"
    ABORTED = "Aborted"


_DELETE = object()


class Transaction:
    def __init__(self, engine: "Engine", tx_id: int, snapshot: Snapshot):
        self.engine = engine
        self.id = tx_id
        self.snapshot = snapshot
        self.write_set: dict[bytes, object] = {}
        self.state = TxState.ACTIVE
        self.commit_ts: Optional[int] = None

    def _check_active(self) -> None:
        if self.state is not TxState.ACTIVE:
            raise TransactionStateError(f"transaction {self.id} is {self.state.value}")

    def get(self, key: bytes) -> Optional[bytes]:
        return self.engine.get(self, key)

    def put(self, key: bytes, value: bytes) -> None:
        self.engine.put(self, key, value)

    def delete(self, key: bytes) -> None:
        self.engine.delete(self, key)

    def scan(self, low: bytes, high: Optional[bytes]) -> "MergeCursor":
        return self.engine.scan(self, low, high)

    def commit(self) -> int:
        return self.engine.commit(self)

    def abort(self) -> None:
        self.engine.abort(self)

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc, tb):
        if self.state is TxState.ACTIVE:
            if exc_type is None:
                self.commit()
            else:
                self.abort()
        return False


class MergeCursor:
    """Merge sort over per-partition child streams plus the transaction's own writes.

    Children yield ``(user_key, rank, candidates)``; for one key the candidates
    of higher-ranked (newer) children come first and the first version the
    snapshot sees decides, so newer invalidating records hide older versions.
    """

    def __init__(self, children, snapshot: Snapshot, overlay: dict, release=None):
        self.snapshot = snapshot
        self.overlay = overlay
        self._release = release
        self._it = heapq.merge(*children, key=lambda c: (c[0], -c[1]))
        self._pending = None
        self.current: Optional[tuple[bytes, bytes]] = None
        self.done = False

    def __iter__(self):
        return self

    def __next__(self) -> tuple[bytes, bytes]:
        if self.done:
            raise StopIteration
        it = self._it
        while True:
            head = self._pending if self._pending is not None else next(it, None)
            self._pending = None
            if head is None:
                self.close()
                raise StopIteration
            key = head[0]
            chains = [head[2]]
            for nxt in it:
                if nxt[0] != key:
                    self._pending = nxt
                    break
                chains.append(nxt[2])
            own = self.overlay.get(key, None) if self.overlay else None
            if own is not None:
                if own is _DELETE:
                    continue
                self.current = (key, own)
                return self.current
            rec = resolve_chain(itertools.chain.from_iterable(chains), self.snapshot)
            if rec is not None:
                self.current = (key, rec.value)
                return self.current

    def close(self) -> None:
        if not self.done:
            self.done = True
            if self._release is not None:
                self._release()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
        return False

    def __del__(self):
        try:
            self.close()
        except Exception:
            pass


def _overlay_stream(write_set: dict, low: bytes, high: Optional[bytes]):
    keys = sorted(k for k in write_set if k >= low and (high is None or k < high))
    for k in keys:
        yield k, 1 << 62, ()


def _check_key(key) -> bytes:
    if not isinstance(key, (bytes, bytearray)) or not key:
        raise InvalidArgument("keys must be non-empty bytes")
    return bytes(key)


class Engine:
    """Embeddable engine: ``begin``/``commit``/``abort`` plus ``put``/``get``/``delete``/``scan``."""

    def __init__(self, config: Optional[EngineConfig] = None, path: Optional[str] = None):
        self.config = config = config or EngineConfig()
        self.path = path
        self.store = PageStore(path, page_size=config.page_size, capacity_bytes=config.capacity_bytes,
                               device=config.device, trace=config.trace)
        if self.store.page_size != config.page_size:
            self.config = config = replace(config, page_size=self.store.page_size)
        self.lock = threading.RLock()
        self.open_txs: dict[int, Transaction] = {}
        self.maintainer: Optional[Maintainer] = None
        if config.mode == "btree-baseline":
            self.tree = InPlaceTree(self.store, config.cache_bytes, horizon=self.horizon)
        else:
            sidecar = None if path is None else f"{path}.meta"
            self.tree = MVPBTree(self.store, config.tree_config(), sidecar_path=sidecar)
            if config.mode == "mvpbt":
                self.maintainer = Maintainer(self.tree, self.horizon, config.cached_every,
                                             config.gc_every, config.quantum)
        self.clock = self._recover_clock()
        self.ops = 0
        self.bytes_user = 0
        self.logical_bytes = 0
        self.closed = False
        if self.clock:
            self.logical_bytes = self._logical_from_scan()

    @classmethod
    def open(cls, config: Optional[EngineConfig | dict] = None, path: Optional[str] = None) -> "Engine":
        if isinstance(config, dict):
            config = EngineConfig.from_mapping(config)
        return cls(config, path)

    def _recover_clock(self) -> int:
        top = 0
        for _pnr, _k, _rtype, ts, _v in self.tree.scan_records():
            if ts > top:
                top = ts
        return top

    def _logical_from_scan(self) -> int:
        tx = self.begin()
        with self.scan(tx, b"", None) as cur:
            total = sum(len(k) + len(v) for k, v in cur)
        self.commit(tx)
        self.ops = 0
        return total

    # -- transactions -------------------------------------------------------------------

    def _tick(self) -> int:
        self.clock += 1
        return self.clock

    def begin(self) -> Transaction:
        with self.lock:
            tx_id = self._tick()
            active = frozenset(self.open_txs)
            tx = Transaction(self, tx_id, Snapshot(tx_id, active))
            self.open_txs[tx_id] = tx
            return tx

    def horizon(self) -> Snapshot:
        """Oldest snapshot any open transaction may still read at."""
        with self.lock:
            if self.open_txs:
                return min((t.snapshot for t in self.open_txs.values()), key=lambda s: s.read_ts)
            return Snapshot(self.clock)

    def commit(self, tx: Transaction) -> int:
        with self.lock:
            tx._check_active()
            ts = self._tick()
            if tx.write_set:
                latest = Snapshot(ts - 1)
                tree = self.tree
                for key in sorted(tx.write_set):
                    value = tx.write_set[key]
                    prev = resolve_chain(tree.lookup(key), latest)
                    if value is _DELETE:
                        if prev is None:
                            continue
                        tree.insert(key, RecordType.TOMBSTONE, ts, b"")
                        self.bytes_user += len(key)
                        self.logical_bytes -= len(key) + len(prev.value)
                    else:
                        rtype = RecordType.REGULAR if prev is None else RecordType.REPLACEMENT
                        tree.insert(key, rtype, ts, value)
                        self.bytes_user += len(key) + len(value)
                        self.logical_bytes += len(value) - (len(prev.value) if prev else -len(key))
            tx.state = TxState.COMMITTED
            tx.commit_ts = ts
            del self.open_txs[tx.id]
            if tx.write_set:
                self._after_write()
            return ts

    def abort(self, tx: Transaction) -> None:
        with self.lock:
            if tx.state is TxState.COMMITTED:
                raise TransactionStateError(f"transaction {tx.id} already committed")
            if tx.state is TxState.ABORTED:
                return
            tx.state = TxState.ABORTED
            tx.write_set.clear()
            self.open_txs.pop(tx.id, None)

    def _after_write(self) -> None:
        tree = self.tree
        if isinstance(tree, MVPBTree):
            over_cap = tree.mutable_dirty >= self.config.partition_cap_bytes
            if over_cap or tree.global_meta.update(tree.buffer_bytes()):
                self.switch()
        if self.maintainer is not None:
            self.maintainer.step()

    def switch(self) -> None:
        """Force a partition switch and flush of the current mutable partition."""
        tree = self.tree
        if not isinstance(tree, MVPBTree) or tree.mutable.meta.n_records == 0:
            return
        with self.lock:
            tree.switch_partition()
            tree.complete_victim(self.horizon())
            if self.maintainer is not None:
                self.maintainer.on_partition_synced()

    # -- operations -------------------------------------------------------------------------

    def put(self, tx: Transaction, key: bytes, value: bytes) -> None:
        tx._check_active()
        key = _check_key(key)
        if not isinstance(value, (bytes, bytearray)):
            raise InvalidArgument("values must be bytes")
        tx.write_set[key] = bytes(value)
        self.ops += 1

    def delete(self, tx: Transaction, key: bytes) -> None:
        tx._check_active()
        tx.write_set[_check_key(key)] = _DELETE
        self.ops += 1

    def get(self, tx: Transaction, key: bytes) -> Optional[bytes]:
        tx._check_active()
        key = _check_key(key)
        self.ops += 1
        own = tx.write_set.get(key)
        if own is not None:
            return None if own is _DELETE else own
        with self.lock:
            rec = resolve_chain(self.tree.lookup(key), tx.snapshot)
        return None if rec is None else rec.value

    def scan(self, tx: Transaction, low: bytes, high: Optional[bytes]) -> MergeCursor:
        tx._check_active()
        if not isinstance(low, (bytes, bytearray)):
            raise InvalidArgument("scan bounds must be bytes")
        self.ops += 1
        if high is not None and high <= low:
            return MergeCursor([], tx.snapshot, {})
        with self.lock:
            children, pinned = self.tree.scan_children(bytes(low), high)
        overlay = {k: v for k, v in tx.write_set.items() if k >= low and (high is None or k < high)}
        if overlay:
            children.append(_overlay_stream(overlay, low, high))
        tree = self.tree
        return MergeCursor(children, tx.snapshot, overlay, release=lambda: tree.unpin(pinned))

    def bulk_load(self, items, ts: Optional[int] = None) -> int:
        """Load ascending ``(key, value)`` pairs into an empty engine as one committed batch."""
        with self.lock:
            ts = self._tick() if ts is None else ts

            def counted():
                for k, v in items:
                    n = len(k) + len(v)
                    self.bytes_user += n
                    self.logical_bytes += n
                    yield _check_key(k), v

            return self.tree.bulk_load(counted(), ts)

    def run_maintenance(self) -> None:
        """Run all due maintenance jobs to completion."""
        if self.maintainer is not None:
            with self.lock:
                self.maintainer.drain()

    # -- stats / lifecycle ----------------------------------------------------------------------

    def cpu_us(self) -> float:
        """Modeled foreground CPU time."""
        c = self.config
        tree = self.tree
        if isinstance(tree, MVPBTree):
            visits, probes = tree.stats.node_visits, tree.stats.filter_probes
        else:
            visits, probes = tree.node_visits, 0
        return self.ops * c.cpu_op_us + visits * c.cpu_node_us + probes * c.cpu_probe_us

    def background_us(self) -> float:
        """Modeled maintenance time: its device time plus merge CPU."""
        merged = self.maintainer.records_merged if self.maintainer is not None else 0
        return self.store.bg_busy_us + merged * self.config.cpu_merge_us

    def elapsed_s(self) -> float:
        """Simulated seconds.

        Foreground work (device time plus CPU) and background maintenance run
        side by side; the run lasts as long as the busier of the two.
        """
        fg = self.store.busy_us - self.store.bg_busy_us + self.cpu_us()
        return max(fg, self.background_us()) / 1e6

    def stats(self) -> dict:
        rep = self.store.report()
        out = {
            "mode": self.config.mode,
            "ops": self.ops,
            "bytes_user": self.bytes_user,
            "logical_bytes": self.logical_bytes,
            **rep,
            "partitions": self.tree.n_partitions,
            "cached_partitions": self.tree.n_cached,
            "write_amp": rep["bytes_written"] / self.bytes_user if self.bytes_user else 0.0,
            "space_amp": rep["live_bytes"] / self.logical_bytes if self.logical_bytes else 0.0,
            "cache_hits": self.tree.cache.hits,
            "cache_misses": self.tree.cache.misses,
            "elapsed_s": self.elapsed_s(),
        }
        if isinstance(self.tree, MVPBTree):
            out.update(self.tree.stats.as_dict())
        if self.maintainer is not None:
            out.update(self.maintainer.stats())
        return out

    def checkpoint(self) -> None:
        with self.lock:
            if isinstance(self.tree, MVPBTree):
                self.switch()
            else:
                self.tree.checkpoint()

    def close(self) -> None:
        if self.closed:
            return
        self.checkpoint()
        self.store.close()
        self.closed = True

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
        return False

    # -- autocommit helpers ------------------------------------------------------------------------

    def put1(self, key: bytes, value: bytes) -> int:
        tx = self.begin()
        self.put(tx, key, value)
        return self.commit(tx)

    def get1(self, key: bytes) -> Optional[bytes]:
        tx = self.begin()
        try:
            return self.get(tx, key)
        finally:
            self.commit(tx)

    def delete1(self, key: bytes) -> int:
        tx = self.begin()
        self.delete(tx, key)
        return self.commit(tx)

    def scan1(self, low: bytes, high: Optional[bytes]) -> list[tuple[bytes, bytes]]:
        tx = self.begin()
        try:
            with self.scan(tx, low, high) as cur:
                return list(cur)
        finally:
            self.commit(tx)
