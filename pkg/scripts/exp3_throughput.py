"""Workload A over time: accumulated operations per simulated second for each mode."""

from _common import MODES, emit, parser

from mvpbt import EngineConfig
from mvpbt.bench import WorkloadSpec, run


def main():
    p = parser(__doc__)
    p.add_argument("--records", type=int, default=100_000)
    p.add_argument("--ops", type=int, default=1_000_000)
    p.add_argument("--value-size", type=int, default=1000)
    p.add_argument("--modes", nargs="+", default=list(MODES))
    a = p.parse_args()
    rows = []
    for mode in a.modes:
        spec = WorkloadSpec.preset("A", int(a.records * a.scale), int(a.ops * a.scale), a.value_size)
        r = run(spec, mode, EngineConfig(mode=mode), seed=a.seed)
        for row in r.rows:
            rows.append({"mode": mode, "ops_done": row.ops_done, "elapsed_s": round(row.elapsed_s, 3),
                         "partitions": row.partitions, "cached_partitions": row.cached_partitions,
                         "write_amp": round(row.write_amp, 3)})
        print(f"# {mode}: {r.throughput():.0f} ops per simulated second")
    emit(rows, a.out)


if __name__ == "__main__":
    main()
