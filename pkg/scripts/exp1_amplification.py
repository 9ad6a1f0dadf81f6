"""Bulk load, then random inserts: page writes per insert and live-space growth per mode."""

from _common import emit, parser

from mvpbt import EngineConfig
from mvpbt.bench import WorkloadSpec, run

KEY_B, VAL_B = 13, 16


def main():
    p = parser(__doc__)
    p.add_argument("--records", type=int, default=1_000_000)
    p.add_argument("--inserts", type=int, default=50_000)
    a = p.parse_args()
    records, inserts = int(a.records * a.scale), int(a.inserts * a.scale)
    rows = []
    for mode in ("mvpbt", "btree-baseline"):
        r = run(WorkloadSpec.preset("load", records, inserts, VAL_B), mode, EngineConfig(mode=mode), seed=a.seed)
        s, l = r.final_stats, r.load_stats
        rows.append({
            "mode": mode,
            "load_live_bytes": l["live_bytes"],
            "writes_per_insert": round(r.page_writes() / inserts, 5),
            "growth_per_inserted_byte": round((s["live_bytes"] - l["live_bytes"]) / (inserts * (KEY_B + VAL_B)), 4),
            "space_amp": round(s["space_amp"], 4),
            "partitions": s["partitions"],
        })
    emit(rows, a.out)


if __name__ == "__main__":
    main()
