"""``bench`` command line entry point."""

from __future__ import annotations

import argparse
import sys

from ..engine import MODES, EngineConfig
from ..errors import InvalidArgument
from .runner import METRICS_HEADER, run
from .workload import WorkloadSpec


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="bench", description="YCSB-style workloads against MV-PBT and the baseline.")
    p.add_argument("--mode", choices=MODES, default="mvpbt")
    p.add_argument("--workload", choices=["load", "A", "B", "C", "D", "E"], default="A")
    p.add_argument("--records", type=int, default=1_000_000, help="records bulk loaded first")
    p.add_argument("--ops", type=int, default=100_000, help="operations in the measured phase")
    p.add_argument("--value-size", type=int, default=16)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--cache-bytes", type=int, default=10 * 1024 * 1024)
    p.add_argument("--partition-cap", type=int, default=2 * 1024 * 1024)
    p.add_argument("--gc-every", type=int, default=40)
    p.add_argument("--cached-every", type=int, default=8)
    p.add_argument("--page-size", type=int, default=16384)
    p.add_argument("--interval", type=int, default=None, help="operations per CSV row")
    p.add_argument("--csv", default=None, help="write MetricsRow CSV here (default: stdout)")
    p.add_argument("--trace", default=None, help="dump the I/O trace here")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        spec = WorkloadSpec.preset(args.workload, args.records, args.ops, args.value_size)
        config = EngineConfig(mode=args.mode, page_size=args.page_size, cache_bytes=args.cache_bytes,
                              partition_cap_bytes=args.partition_cap, gc_every=args.gc_every,
                              cached_every=args.cached_every, trace=args.trace is not None)
    except InvalidArgument as exc:
        print(f"bench: {exc}", file=sys.stderr)
        return 2
    result = run(spec, args.mode, config, seed=args.seed, interval_ops=args.interval,
                 csv_path=args.csv, trace_path=args.trace)
    if args.csv is None:
        print(",".join(METRICS_HEADER))
        for row in result.rows:
            print(",".join(str(getattr(row, f)) for f in METRICS_HEADER))
    return 0


if __name__ == "__main__":
    sys.exit(main())
