"""Run a workload against one engine mode and collect interval metrics."""

from __future__ import annotations

import csv
import itertools
from dataclasses import asdict, astuple, dataclass, fields
from typing import Optional

from ..engine import Engine, EngineConfig
from .workload import OpGenerator, WorkloadSpec, load_items


@dataclass
class MetricsRow:
    elapsed_s: float
    ops_done: int
    bytes_user: int
    bytes_written: int
    bytes_read: int
    live_bytes: int
    partitions: int
    cached_partitions: int
    write_amp: float
    space_amp: float


METRICS_HEADER = [f.name for f in fields(MetricsRow)]


@dataclass
class RunResult:
    rows: list
    engine: Engine
    load_stats: dict
    final_stats: dict

    @property
    def last(self) -> MetricsRow:
        return self.rows[-1]

    def throughput(self) -> float:
        """Operations per simulated second over the measured phase."""
        row = self.last
        return row.ops_done / row.elapsed_s if row.elapsed_s else float("inf")

    def page_writes(self) -> int:
        return self.final_stats["writes"] - self.load_stats["writes"]


class _Meter:
    """Deltas against the engine state at the start of the measured phase."""

    def __init__(self, engine: Engine):
        self.engine = engine
        s = engine.stats()
        self.t0 = engine.elapsed_s()
        self.user0 = s["bytes_user"]
        self.w0 = s["bytes_written"]
        self.r0 = s["bytes_read"]

    def row(self, ops_done: int) -> MetricsRow:
        e = self.engine
        s = e.stats()
        user = s["bytes_user"] - self.user0
        written = s["bytes_written"] - self.w0
        return MetricsRow(
            elapsed_s=e.elapsed_s() - self.t0,
            ops_done=ops_done,
            bytes_user=user,
            bytes_written=written,
            bytes_read=s["bytes_read"] - self.r0,
            live_bytes=s["live_bytes"],
            partitions=s["partitions"],
            cached_partitions=s["cached_partitions"],
            write_amp=written / user if user else 0.0,
            space_amp=s["space_amp"],
        )


def execute(engine: Engine, op) -> None:
    tx = engine.begin()
    kind = op.kind
    if kind == "read":
        engine.get(tx, op.key)
    elif kind == "scan":
        with engine.scan(tx, op.key, None) as cur:
            for _ in itertools.islice(cur, op.scan_len):
                pass
    else:
        engine.put(tx, op.key, op.value)
    engine.commit(tx)


def load(engine: Engine, record_count: int, value_size: int, seed: int = 0) -> int:
    n = engine.bulk_load(load_items(record_count, value_size, seed))
    engine.checkpoint()
    return n


def run(spec: WorkloadSpec, mode: str = "mvpbt", config: Optional[EngineConfig] = None,
        seed: int = 0, interval_ops: Optional[int] = None, csv_path=None, trace_path=None,
        engine: Optional[Engine] = None, do_load: bool = True, flush_at_end: bool = True) -> RunResult:
    """Load ``spec.record_count`` records, then run ``spec.op_count`` operations.

    Rows report the measured phase only (deltas since its start), one per
    ``interval_ops`` operations plus a final row after the closing flush.
    """
    if engine is None:
        cfg = config or EngineConfig()
        if cfg.mode != mode:
            cfg = EngineConfig(**{**asdict(cfg), "mode": mode, "device": cfg.device})
        engine = Engine(cfg)
    if do_load and spec.record_count:
        load(engine, spec.record_count, spec.value_size, seed)
    load_stats = engine.stats()
    meter = _Meter(engine)
    gen = OpGenerator(spec, seed)
    interval = interval_ops or max(1, spec.op_count // 10)
    rows = []
    for i, op in enumerate(gen, 1):
        execute(engine, op)
        if i % interval == 0 and i != spec.op_count:
            rows.append(meter.row(i))
    if flush_at_end:
        engine.checkpoint()
    rows.append(meter.row(spec.op_count))
    if csv_path is not None:
        write_csv(csv_path, rows)
    if trace_path is not None and engine.store.trace is not None:
        engine.store.trace.dump(trace_path)
    return RunResult(rows, engine, load_stats, engine.stats())


def write_csv(path, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(METRICS_HEADER)
        for r in rows:
            w.writerow(astuple(r))
