import random

import pytest
from hypothesis import given, settings, strategies as st

from mvpbt import Engine, EngineConfig
from mvpbt.errors import InvalidArgument, TransactionStateError
from mvpbt.records import RecordType

from oracle import History, fuzz

MODES = ("mvpbt", "mvpbt-nocache-nogc", "btree-baseline")


def small(mode="mvpbt", **kw):
    cfg = dict(mode=mode, page_size=1024, cache_bytes=32 * 1024, partition_cap_bytes=4 * 1024,
               cached_every=3, gc_every=7, quantum=50)
    cfg.update(kw)
    return EngineConfig(**cfg)


def record_types(engine, key):
    return [RecordType(rt) for _p, k, rt, _ts, _v in sorted(engine.tree.scan_records(), key=lambda r: r[3])
            if k == key]


def test_empty_commit_gets_fresh_timestamp():
    e = Engine(small())
    tx = e.begin()
    assert e.commit(tx) > tx.snapshot.read_ts


def test_concurrent_transactions_are_isolated():
    e = Engine(small())
    e.put1(b"k", b"0")
    t1, t2 = e.begin(), e.begin()
    assert t1.id in t2.snapshot.active_set
    t2.put(b"k", b"2")
    assert t1.get(b"k") == b"0"
    t2.commit()
    assert t1.get(b"k") == b"0"
    assert e.get1(b"k") == b"2"
    t1.commit()


def test_commit_after_abort_is_rejected():
    e = Engine(small())
    tx = e.begin()
    tx.put(b"a", b"1")
    tx.abort()
    with pytest.raises(TransactionStateError):
        tx.commit()
    assert e.get1(b"a") is None


def test_bad_keys_rejected():
    e = Engine(small())
    tx = e.begin()
    with pytest.raises(InvalidArgument):
        tx.put(b"", b"x")
    with pytest.raises(InvalidArgument):
        tx.put("str", b"x")


@pytest.mark.parametrize("mode", MODES)
def test_interleaved_blind_writes_match_serial_replay(mode):
    e = Engine(small(mode))
    rng = random.Random(8)
    txs = [e.begin() for _ in range(1000)]
    for tx in txs:
        for _ in range(rng.randrange(1, 4)):
            tx.put(b"k%03d" % rng.randrange(200), b"%d" % tx.id)
    rng.shuffle(txs)
    hist = History()
    for tx in txs:
        ws = dict(tx.write_set)
        hist.apply(e.commit(tx), ws)
    assert e.scan1(b"", None) == hist.scan(b"", None, 1 << 60)


def test_read_own_writes_and_delete():
    e = Engine(small())
    with e.begin() as tx:
        tx.put(b"a", b"1")
        assert tx.get(b"a") == b"1"
    with e.begin() as tx:
        tx.delete(b"a")
        assert tx.get(b"a") is None
    assert e.get1(b"a") is None


def test_record_typing():
    e = Engine(small())
    e.put1(b"k", b"1")
    e.put1(b"k", b"2")
    e.delete1(b"k")
    e.delete1(b"k")  # nothing visible: no-op
    e.delete1(b"never")
    assert record_types(e, b"k") == [RecordType.REGULAR, RecordType.REPLACEMENT, RecordType.TOMBSTONE]
    assert record_types(e, b"never") == []


def test_newest_partition_wins():
    e = Engine(small("mvpbt-nocache-nogc"))
    for i in range(10):
        if i in (2, 7):
            e.put1(b"hot", b"p%d" % e.tree.meta.max_pnr)
        e.put1(b"filler%d" % i, b"x")
        e.switch()
    assert e.get1(b"hot") == b"p7"


def test_scan_skips_deleted_across_partitions():
    e = Engine(small("mvpbt-nocache-nogc"))
    for k in (b"a", b"b", b"c"):
        e.put1(k, k.upper())
        e.switch()
    e.delete1(b"b")
    assert e.scan1(b"a", b"z") == [(b"a", b"A"), (b"c", b"C")]
    assert e.scan1(b"b", b"b") == []
    assert e.scan1(b"x", b"z") == []


@pytest.mark.parametrize("mode", MODES)
def test_fuzz_matches_oracle(mode):
    e = Engine(small(mode))
    bad, checks = fuzz(e, 8000, seed=5)
    assert checks > 3000 and bad == 0


def test_fuzz_exercises_maintenance():
    e = Engine(small())
    bad, _ = fuzz(e, 8000, seed=9)
    s = e.stats()
    assert bad == 0 and s["jobs_run"] > 0 and s["partitions_truncated"] > 0


@settings(max_examples=30, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 40), st.booleans()), max_size=120),
       st.integers(0, 40), st.integers(0, 45))
def test_scan_strictly_ascending(ops, lo, hi):
    e = Engine(small())
    for k, dele in ops:
        key = b"k%02d" % k
        if dele:
            e.delete1(key)
        else:
            e.put1(key, b"v")
    keys = [k for k, _ in e.scan1(b"k%02d" % lo, b"k%02d" % hi)]
    assert all(a < b for a, b in zip(keys, keys[1:]))


def test_absent_key_no_reads_when_filters_reject():
    e = Engine(small("mvpbt-nocache-nogc", cache_bytes=1 << 20))
    for p in range(10):
        for i in range(20):
            e.put1(b"p%02dk%02d" % (p, i), b"x")
        e.switch()
    assert e.tree.n_partitions >= 10
    reads, fps = e.store.reads, e.tree.stats.filter_false_positives
    misses = 0
    for i in range(200):
        tx = e.begin()
        assert tx.get(b"absent%03d" % i) is None
        tx.commit()
        if e.tree.stats.filter_false_positives == fps:
            misses += 1
            assert e.store.reads == reads
        reads, fps = e.store.reads, e.tree.stats.filter_false_positives
    assert misses > 150


def test_read_amplification_bound():
    e = Engine(small("mvpbt-nocache-nogc", cache_bytes=8 * 1024))
    rng = random.Random(2)
    for i in range(3000):
        e.put1(b"k%04d" % rng.randrange(1500), b"v" * 20)
    st_ = e.tree.stats
    height = max(p.height for p in e.tree.parts.values()) + len(e.tree.top_ids)
    for i in range(300):
        r0, pr0, neg0 = e.store.reads, st_.filter_probes, st_.filter_negatives
        e.get1(b"k%04d" % rng.randrange(1500))
        positives = (st_.filter_probes - pr0) - (st_.filter_negatives - neg0) + 1  # +1: mutable partition
        assert e.store.reads - r0 <= positives * height


@pytest.mark.parametrize("mode", MODES)
def test_reopen_preserves_flushed_state(tmp_path, mode):
    path = str(tmp_path / "db")
    e = Engine(small(mode), path)
    hist = History()
    rng = random.Random(3)
    for i in range(1500):
        k = b"k%04d" % rng.randrange(400)
        if rng.random() < 0.1:
            ts = e.delete1(k)
            hist.apply(ts, {k: __import__("mvpbt.engine").engine._DELETE})
        else:
            hist.apply(e.put1(k, b"v%d" % i), {k: b"v%d" % i})
    e.close()
    e2 = Engine(small(mode), path)
    assert e2.scan1(b"", None) == hist.scan(b"", None, 1 << 60)
    e2.put1(b"after", b"1")
    assert e2.get1(b"after") == b"1"
    e2.close()


def test_stats_mapping():
    e = Engine.open({"mode": "mvpbt", "page_size": 1024, "cache_bytes": 65536})
    e.put1(b"a", b"b")
    s = e.stats()
    for key in ("bytes_written", "bytes_user", "write_amp", "space_amp", "partitions", "elapsed_s"):
        assert key in s
