"""Read-only workload C after each burst of random inserts, as partitions accumulate."""

import random

from _common import MODES, emit, parser

from mvpbt import Engine, EngineConfig
from mvpbt.bench import WorkloadSpec, key_of, run
from mvpbt.bench.runner import load


def main():
    p = parser(__doc__)
    p.add_argument("--records", type=int, default=1_000_000)
    p.add_argument("--bursts", type=int, default=5)
    p.add_argument("--burst-size", type=int, default=50_000)
    p.add_argument("--reads", type=int, default=20_000)
    p.add_argument("--partition-cap", type=int, default=64 << 10)
    p.add_argument("--modes", nargs="+", default=list(MODES))
    a = p.parse_args()
    rows = []
    for mode in a.modes:
        e = Engine(EngineConfig(mode=mode, partition_cap_bytes=a.partition_cap, gc_every=0))
        n = int(a.records * a.scale)
        load(e, n, 16)
        rng = random.Random(a.seed)
        run(WorkloadSpec.preset("C", n, a.reads, 16), engine=e, do_load=False, flush_at_end=False, seed=a.seed + 99)
        for burst in range(a.bursts):
            for _ in range(int(a.burst_size * a.scale)):
                e.put1(key_of(n), rng.randbytes(16))
                n += 1
            e.checkpoint()
            e.run_maintenance()
            r = run(WorkloadSpec.preset("C", n, a.reads, 16), engine=e, do_load=False, flush_at_end=False,
                    seed=a.seed + burst)
            rows.append({"mode": mode, "burst": burst + 1, "records": n, "partitions": e.tree.n_partitions,
                         "cached_partitions": e.tree.n_cached, "read_ops_per_s": round(r.throughput())})
    emit(rows, a.out)


if __name__ == "__main__":
    main()
