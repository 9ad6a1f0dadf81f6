"""Workloads A-E at three value sizes, with record counts scaled to a constant dataset size."""

from _common import MODES, emit, parser

from mvpbt import EngineConfig
from mvpbt.bench import WorkloadSpec, run


def main():
    p = parser(__doc__)
    p.add_argument("--dataset-bytes", type=int, default=30 << 20)
    p.add_argument("--ops", type=int, default=100_000)
    p.add_argument("--value-sizes", type=int, nargs="+", default=[16, 100, 1000])
    p.add_argument("--workloads", nargs="+", default=["A", "B", "C", "D", "E"])
    p.add_argument("--modes", nargs="+", default=list(MODES))
    a = p.parse_args()
    rows = []
    for vs in a.value_sizes:
        records = int(a.dataset_bytes * a.scale) // (13 + vs)
        for wl in a.workloads:
            ops = int(a.ops * a.scale) if wl != "E" else int(a.ops * a.scale) // 10
            for mode in a.modes:
                r = run(WorkloadSpec.preset(wl, records, ops, vs), mode, EngineConfig(mode=mode), seed=a.seed)
                rows.append({"value_size": vs, "workload": wl, "mode": mode, "records": records, "ops": ops,
                             "ops_per_s": round(r.throughput()), "write_amp": round(r.last.write_amp, 3)})
                print(f"# {vs}B {wl} {mode}: {rows[-1]['ops_per_s']}", flush=True)
    emit(rows, a.out)


if __name__ == "__main__":
    main()
