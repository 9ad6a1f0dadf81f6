import csv
import math
import random

import pytest

from mvpbt import EngineConfig
from mvpbt.bench import WorkloadSpec, gen_op, key_of, plot_trace, run
from mvpbt.bench.cli import main
from mvpbt.bench.runner import METRICS_HEADER
from mvpbt.bench.trace import ascending_runs
from mvpbt.bench.workload import Zipfian
from mvpbt.errors import InvalidArgument, TraceParseError


def cfg(mode="mvpbt", **kw):
    base = dict(mode=mode, page_size=1024, cache_bytes=64 * 1024, partition_cap_bytes=8 * 1024)
    base.update(kw)
    return EngineConfig(**base)


def test_key_of_is_13_bytes_and_injective():
    keys = {key_of(i) for i in range(100_000)}
    assert len(keys) == 100_000
    assert all(len(k) == 13 for k in list(keys)[:100])


def test_op_stream_deterministic():
    spec = WorkloadSpec.preset("A", 1000, 2000)
    a = list(gen_op(spec, 7))
    assert a == list(gen_op(spec, 7))
    assert a != list(gen_op(spec, 8))


def test_presets_fractions():
    for name in ("load", "A", "B", "C", "D", "E"):
        s = WorkloadSpec.preset(name, 10, 10)
        assert math.isclose(s.read_fraction + s.update_fraction + s.insert_fraction + s.scan_fraction, 1.0)
    with pytest.raises(InvalidArgument):
        WorkloadSpec.preset("Z", 10, 10)


def test_zipfian_top_frequency():
    n = 10 ** 6
    z = Zipfian(n, random.Random(1))
    harmonic = math.fsum(i ** -0.99 for i in range(1, n + 1))
    expected = 1 / harmonic
    draws = 10 ** 6
    top = sum(1 for _ in range(draws) if z.next() == 0) / draws
    assert abs(top - expected) <= 0.1 * expected


def test_workload_d_insert_fraction():
    ops = list(gen_op(WorkloadSpec.preset("D", 1000, 10 ** 5), 3))
    frac = sum(o.kind == "insert" for o in ops) / len(ops)
    assert abs(frac - 0.05) <= 0.005
    inserted = [o.key for o in ops if o.kind == "insert"]
    assert len(set(inserted)) == len(inserted)


def test_workload_c_writes_nothing():
    res = run(WorkloadSpec.preset("C", 3000, 3000), "mvpbt", cfg(), flush_at_end=False)
    assert res.last.bytes_written == 0 and res.last.write_amp == 0


@pytest.mark.parametrize("mode", ["mvpbt", "mvpbt-nocache-nogc", "btree-baseline"])
def test_metric_rows_consistent(mode):
    res = run(WorkloadSpec.preset("A", 2000, 4000), mode, cfg(mode), interval_ops=500)
    assert len(res.rows) == 8
    for r in res.rows:
        assert math.isclose(r.write_amp * r.bytes_user, r.bytes_written, rel_tol=1e-9) or r.bytes_user == 0
    if mode == "btree-baseline":
        assert all(r.partitions == 1 and r.cached_partitions == 0 for r in res.rows)
        assert {p for p, *_ in res.engine.tree.scan_records()} <= {0}


def test_identical_runs_identical_results():
    a = run(WorkloadSpec.preset("A", 1000, 2000), "mvpbt", cfg(), seed=4)
    b = run(WorkloadSpec.preset("A", 1000, 2000), "mvpbt", cfg(), seed=4)
    assert a.rows == b.rows
    assert a.engine.scan1(b"", None) == b.engine.scan1(b"", None)


def test_plot_trace_empty(tmp_path):
    p = tmp_path / "t.csv"
    p.write_text("tick,op,offset,length\n")
    assert plot_trace(p) == []


def test_plot_trace_single_flush_ascending(tmp_path):
    trace = tmp_path / "t.csv"
    res = run(WorkloadSpec.preset("load", 0, 0), "mvpbt", cfg(trace=True), do_load=False)
    e = res.engine
    for i in range(300):
        e.put1(b"k%05d" % random.Random(i).randrange(10 ** 5), b"v" * 16)
    w0 = len(e.store.trace.writes())
    e.switch()
    e.store.trace.dump(trace)
    pts = plot_trace(trace, tmp_path / "out.csv")[w0:]
    assert len(pts) > 1
    assert all(a[1] < b[1] for a, b in zip(pts, pts[1:]))
    assert len(ascending_runs(pts)) == 1
    with open(tmp_path / "out.csv") as fh:
        assert next(csv.reader(fh)) == ["tick", "offset"]


def test_plot_trace_parse_error_names_line(tmp_path):
    p = tmp_path / "t.csv"
    p.write_text("tick,op,offset,length\n1,W,0,1024\nnot,a,row\n")
    with pytest.raises(TraceParseError) as exc:
        plot_trace(p)
    assert exc.value.lineno == 3


def test_cli_smoke(tmp_path, capsys):
    out = tmp_path / "m.csv"
    trace = tmp_path / "t.csv"
    rc = main(["--mode", "mvpbt", "--workload", "A", "--records", "500", "--ops", "1000", "--page-size", "1024",
               "--cache-bytes", "65536", "--partition-cap", "8192", "--csv", str(out), "--trace", str(trace)])
    assert rc == 0
    with open(out) as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == METRICS_HEADER and len(rows) == 11
    assert plot_trace(trace)
    assert main(["--workload", "C", "--records", "100", "--ops", "10", "--page-size", "1024"]) == 0
    assert capsys.readouterr().out.splitlines()[0] == ",".join(METRICS_HEADER)


def test_cli_rejects_unknown_mode():
    with pytest.raises(SystemExit) as exc:
        main(["--mode", "lsm"])
    assert exc.value.code == 2
