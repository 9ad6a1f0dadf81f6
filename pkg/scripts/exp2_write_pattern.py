"""Random inserts with tracing on; writes the (tick, offset) scatter of every page write."""

import random

from _common import parser

from mvpbt import Engine, EngineConfig
from mvpbt.bench import plot_trace
from mvpbt.bench.trace import ascending_runs


def main():
    p = parser(__doc__)
    p.add_argument("--inserts", type=int, default=200_000)
    p.add_argument("--trace", default="trace.csv")
    a = p.parse_args()
    e = Engine(EngineConfig(mode="mvpbt-nocache-nogc", page_size=4096, cache_bytes=2 << 20,
                            partition_cap_bytes=512 << 10, trace=True))
    rng = random.Random(a.seed)
    for _ in range(int(a.inserts * a.scale)):
        e.put1(b"user%09d" % rng.randrange(10 ** 9), rng.randbytes(16))
    e.checkpoint()
    e.store.trace.dump(a.trace)
    points = plot_trace(a.trace, a.out or "write_pattern.csv")
    runs = ascending_runs(points)
    print(f"{len(points)} page writes in {len(runs)} ascending runs; "
          f"longest {max(map(len, runs)) if runs else 0}, partitions {e.tree.n_partitions}")


if __name__ == "__main__":
    main()
