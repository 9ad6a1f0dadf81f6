"""YCSB-style benchmark harness."""

from .runner import METRICS_HEADER, MetricsRow, RunResult, run
from .trace import plot_trace
from .workload import Op, OpGenerator, WorkloadSpec, gen_op, key_of

__all__ = ["METRICS_HEADER", "MetricsRow", "RunResult", "run", "plot_trace",
           "Op", "OpGenerator", "WorkloadSpec", "gen_op", "key_of"]
