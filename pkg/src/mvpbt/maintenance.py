"""Background maintenance: cached partitions and garbage collection.

Both jobs are merge sorts over immutable partitions that bulk load an
invisible output partition and then publish it with one metadata switch.
A job is a generator that yields every ``quantum`` merged records, so the
caller can interleave it with foreground work and resume it later.
"""

from __future__ import annotations

import heapq
from collections.abc import Callable, Iterator
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional

from .errors import InvalidArgument, OverlappingJob
from .keys import make_key
from .partitions import CACHED, GC_OUTPUT, INVISIBLE, REGULAR
from .records import INVALIDATING_END, RecordType, Snapshot, VersionRecord, resolve_chain
from .tree import MVPBTree, Partition

DEFAULT_QUANTUM = 4096


class JobKind(Enum):
    CACHED_PARTITION = "CachedPartition"
    GARBAGE_COLLECTION = "GarbageCollection"


class JobState(Enum):
    RUNNING = "Running"
    PAUSED = "Paused"
    FINALIZING = "Finalizing"
    DONE = "Done"


@dataclass
class CachedIndexEntry:
    user_key: bytes
    target_pnr: int

    def encode(self) -> tuple[bytes, int, int, bytes]:
        return self.user_key, RecordType.CACHED_INDEX, 0, self.target_pnr.to_bytes(2, "big")


@dataclass
class MaintenanceJob:
    kind: JobKind
    source_pnrs: tuple[int, ...]
    output_pnr: int
    progress_key: Optional[bytes] = None
    state: JobState = JobState.PAUSED
    records_merged: int = 0
    records_dropped: int = 0
    horizon: Optional[Snapshot] = None
    _steps: Optional[Iterator[None]] = field(default=None, repr=False)

    def step(self, quantum: int = DEFAULT_QUANTUM) -> bool:
        """Advance by about ``quantum`` merged records. Returns True once done."""
        if self.state is JobState.DONE:
            return True
        self.state = JobState.RUNNING
        budget = self.records_merged + quantum
        for _ in self._steps:
            if self.records_merged >= budget:
                self.state = JobState.PAUSED
                return False
        self.state = JobState.DONE
        return True

    def run(self) -> int:
        while not self.step():
            pass
        return self.output_pnr


def _merge_sources(tree: MVPBTree, sources: list[Partition]) -> Iterator[tuple[bytes, int, int, int, bytes]]:
    """Merge partitions into ``(key, pnr, rtype, ts, value)``, newest partition first per key."""
    ordered = sorted(sources, key=lambda p: p.meta.cover_hi, reverse=True)

    def stream(rank, part):
        pnr = part.pnr
        for k, rtype, ts, value in tree.iter_partition(part):
            yield k, rank, pnr, rtype, ts, value

    streams = [stream(i, p) for i, p in enumerate(ordered) if p.persisted]
    for k, _rank, pnr, rtype, ts, value in heapq.merge(*streams, key=lambda r: (r[0], r[1])):
        yield k, pnr, rtype, ts, value


def _grouped(merged) -> Iterator[tuple[bytes, list]]:
    key = None
    group: list = []
    for rec in merged:
        if rec[0] != key:
            if group:
                yield key, group
            key, group = rec[0], []
        group.append(rec)
    if group:
        yield key, group


def cached_entries(tree: MVPBTree, sources: list[Partition]) -> Iterator[CachedIndexEntry]:
    """Newest-wins ``key -> target partition`` over data or cached sources."""
    for key, group in _grouped(_merge_sources(tree, sources)):
        pnr, rtype, _ts, value = group[0][1:]
        if rtype == RecordType.CACHED_INDEX:
            yield CachedIndexEntry(key, int.from_bytes(value, "big"))
        else:
            yield CachedIndexEntry(key, pnr)


def gc_chain(versions: list[tuple[int, int, bytes]], horizon: Snapshot) -> list[tuple[int, int, bytes]]:
    """Reduce one key's versions (newest first) to what snapshots at or after ``horizon`` can see."""
    out = []
    for rtype, ts, value in versions:
        if not horizon.sees(ts):
            out.append((rtype, ts, value))
            continue
        if rtype not in INVALIDATING_END:
            out.append((int(RecordType.REGULAR), ts, value))
        break
    return out


def _check_sources(tree: MVPBTree, pnrs, kinds) -> list[Partition]:
    parts = []
    for pnr in pnrs:
        p = tree.parts.get(pnr)
        if p is None or not p.meta.synced or p.mem is not None or p.meta.type not in kinds:
            raise InvalidArgument(f"partition {pnr} is not a synced {'/'.join(kinds)} partition")
        parts.append(p)
    return parts


class Maintainer:
    """Schedules and drives at most one maintenance job for one tree."""

    def __init__(self, tree: MVPBTree, horizon: Callable[[], Snapshot],
                 cached_every: int = 8, gc_every: int = 400, quantum: int = DEFAULT_QUANTUM,
                 enable_cached: bool = True, enable_gc: bool = True):
        if cached_every < 2:
            raise InvalidArgument("cached_every must be at least 2")
        self.tree = tree
        self.horizon = horizon
        self.cached_every = cached_every
        self.gc_every = gc_every
        self.quantum = quantum
        self.enable_cached = enable_cached
        self.enable_gc = enable_gc
        self.job: Optional[MaintenanceJob] = None
        self.jobs_run = 0
        self.records_merged = 0
        self.records_dropped = 0
        self.partitions_since_gc = 0
        self._gc_due = False

    @property
    def partitions_truncated(self) -> int:
        return self.tree.stats.truncated_partitions

    # -- job construction -------------------------------------------------------------

    def _reject_overlap(self, pnrs) -> None:
        if self.job is not None and self.job.state is not JobState.DONE:
            if set(pnrs) & set(self.job.source_pnrs):
                raise OverlappingJob(f"partitions {sorted(set(pnrs) & set(self.job.source_pnrs))} "
                                     "already belong to a running job")
            raise OverlappingJob("another maintenance job is running on this tree")

    def cached_job(self, source_pnrs) -> MaintenanceJob:
        tree = self.tree
        self._reject_overlap(source_pnrs)
        sources = _check_sources(tree, source_pnrs, (REGULAR, GC_OUTPUT, CACHED))
        lo = min(p.meta.cover_lo for p in sources)
        hi = max(p.meta.cover_hi for p in sources)
        job = MaintenanceJob(JobKind.CACHED_PARTITION, tuple(source_pnrs), tree.meta.allocate())
        job._steps = self._cached_steps(job, sources, (lo, hi))
        self.job = job
        return job

    def _cached_steps(self, job, sources, cover):
        tree = self.tree
        build = tree.begin_build(job.output_pnr, CACHED, cover)
        for entry in cached_entries(tree, sources):
            build.add(*entry.encode())
            job.progress_key = make_key(job.output_pnr, entry.user_key)
            job.records_merged += 1
            self.records_merged += 1
            yield
        job.state = JobState.FINALIZING
        part = build.finish()
        tree.publish(part, drop=[p for p in sources if p.meta.type == CACHED])
        self.jobs_run += 1

    def gc_job(self, source_pnrs=None, horizon: Optional[Snapshot] = None) -> MaintenanceJob:
        tree = self.tree
        if source_pnrs is None:
            source_pnrs = sorted(p.pnr for p in tree.data_partitions() if p.meta.synced and p.mem is None)
        self._reject_overlap(source_pnrs)
        sources = _check_sources(tree, source_pnrs, (REGULAR, GC_OUTPUT))
        if not sources:
            raise InvalidArgument("garbage collection needs at least one source partition")
        lo = min(p.meta.cover_lo for p in sources)
        hi = max(p.meta.cover_hi for p in sources)
        job = MaintenanceJob(JobKind.GARBAGE_COLLECTION, tuple(source_pnrs), tree.meta.allocate(),
                             horizon=horizon or self.horizon())
        job._steps = self._gc_steps(job, sources, (lo, hi))
        self.job = job
        return job

    def _gc_steps(self, job, sources, cover):
        tree = self.tree
        horizon = job.horizon
        build = tree.begin_build(job.output_pnr, GC_OUTPUT, cover)
        for key, group in _grouped(_merge_sources(tree, sources)):
            versions = [(r[2], r[3], r[4]) for r in group]
            kept = gc_chain(versions, horizon)
            for rtype, ts, value in kept:
                build.add(key, rtype, ts, value)
            job.progress_key = make_key(job.output_pnr, key)
            job.records_merged += len(versions)
            job.records_dropped += len(versions) - len(kept)
            self.records_merged += len(versions)
            self.records_dropped += len(versions) - len(kept)
            yield
        job.state = JobState.FINALIZING
        part = build.finish()
        lo, hi = cover
        covered_cached = [p for p in tree.parts.values()
                          if p.meta.type == CACHED and lo <= p.meta.cover_lo and p.meta.cover_hi <= hi]
        tree.publish(part, drop=list(sources) + covered_cached)
        self.jobs_run += 1

    # -- scheduling -------------------------------------------------------------------

    def on_partition_synced(self) -> None:
        self.partitions_since_gc += 1
        if self.gc_every and self.partitions_since_gc >= self.gc_every:
            self._gc_due = True

    def unindexed_run(self) -> list[int]:
        """Synced regular partitions not yet covered by a cached partition, oldest first."""
        tree = self.tree
        busy = set(self.job.source_pnrs) if self.job is not None and self.job.state is not JobState.DONE else set()
        out = [p.pnr for p in tree.succession()
               if p.meta.type == REGULAR and p.meta.synced and p.mem is None and p.pnr not in busy]
        return sorted(out, key=lambda pnr: tree.parts[pnr].meta.cover_hi)

    def schedule(self) -> Optional[MaintenanceJob]:
        """Emit the next due job, or None if nothing is due or a job is running."""
        if self.job is not None and self.job.state is not JobState.DONE:
            return None
        tree = self.tree
        if self.enable_gc and self._gc_due:
            self._gc_due = False
            self.partitions_since_gc = 0
            srcs = [p for p in tree.data_partitions() if p.meta.synced and p.mem is None]
            if srcs:
                return self.gc_job()
        if not self.enable_cached:
            return None
        run = self.unindexed_run()
        if len(run) >= self.cached_every:
            return self.cached_job(run[:self.cached_every])
        level1 = sorted((p for p in tree.succession() if p.meta.type == CACHED),
                        key=lambda p: p.meta.cover_hi)
        small = [p for p in level1 if len(tree.covered_data(p)) <= self.cached_every]
        if len(small) >= self.cached_every:
            return self.cached_job([p.pnr for p in small[:self.cached_every]])
        return None

    def step(self) -> bool:
        """Advance the current job by one quantum; schedule a new one if idle."""
        job = self.job
        if job is None or job.state is JobState.DONE:
            job = self.schedule()
            if job is None:
                return False
        store = self.tree.store
        store.background = True
        try:
            job.step(self.quantum)
        finally:
            store.background = False
        return True

    def drain(self) -> None:
        """Run the current and all due jobs to completion."""
        while True:
            job = self.job
            if job is None or job.state is JobState.DONE:
                job = self.schedule()
                if job is None:
                    return
            store = self.tree.store
            store.background = True
            try:
                job.run()
            finally:
                store.background = False

    def stats(self) -> dict:
        return {
            "jobs_run": self.jobs_run,
            "records_merged": self.records_merged,
            "records_dropped": self.records_dropped,
            "partitions_truncated": self.partitions_truncated,
        }


def build_cached_partition(tree: MVPBTree, source_pnrs, maintainer: Optional[Maintainer] = None) -> int:
    m = maintainer or Maintainer(tree, lambda: Snapshot(0))
    return m.cached_job(source_pnrs).run()


def run_gc(tree: MVPBTree, source_pnrs, horizon: Snapshot, maintainer: Optional[Maintainer] = None) -> int:
    m = maintainer or Maintainer(tree, lambda: horizon)
    return m.gc_job(source_pnrs, horizon).run()


def cached_lookup(tree: MVPBTree, cached_pnr: int, user_key: bytes, snapshot: Snapshot) -> Optional[VersionRecord]:
    part = tree.parts.get(cached_pnr)
    if part is None or part.meta.type != CACHED:
        raise InvalidArgument(f"partition {cached_pnr} is not a visible cached partition")
    return resolve_chain(tree.cached_lookup(part, user_key), snapshot)
