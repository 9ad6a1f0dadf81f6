import random
from dataclasses import dataclass, field

import pytest

from mvpbt.btree import decode_node
from mvpbt.errors import FilterNotBuilt, SwitchInProgress
from mvpbt.partitions import (
    GlobalMeta, PartitionFilter, PartitionMeta, TreeMeta, begin_switch, build_filter, expected_fp_rate,
    maybe_trigger_switch, metadata_dump, probe, read_sidecar, recover_metadata, write_sidecar,
)
from mvpbt.records import RecordType
from mvpbt.store import PageStore, SimulatedCrash
from mvpbt.tree import MVPBTree, TreeConfig

MB = 1024 * 1024


@dataclass
class FakeTree:
    mutable_dirty: int
    meta: TreeMeta = field(default_factory=TreeMeta)


def test_trigger_below_threshold():
    g = GlobalMeta(cache_bytes=100 * MB, buffer_share=0.2)
    assert maybe_trigger_switch(g, [FakeTree(5 * MB)]) is None
    assert not g.require_switch


def test_trigger_picks_max_dirty():
    g = GlobalMeta(cache_bytes=100 * MB, buffer_share=0.2)
    trees = [FakeTree(3 * MB, TreeMeta(relation_id=1)), FakeTree(18 * MB, TreeMeta(relation_id=2))]
    assert maybe_trigger_switch(g, trees) == 2 and g.require_switch


def test_trigger_skips_switching_tree():
    g = GlobalMeta(cache_bytes=10 * MB, buffer_share=0.2)
    busy = FakeTree(9 * MB, TreeMeta(relation_id=1, is_switching=True))
    assert maybe_trigger_switch(g, [busy, FakeTree(1 * MB, TreeMeta(relation_id=7))]) == 7


def test_switch_increments_by_one_and_guards():
    m = TreeMeta(max_pnr=4, next_pnr=5)
    assert begin_switch(m) == (4, 5)
    assert m.max_pnr == 5
    with pytest.raises(SwitchInProgress):
        begin_switch(m)


def tree(page_size=1024, cache=64 * 1024, path=None, **kw):
    store = PageStore(path, page_size=page_size)
    return MVPBTree(store, TreeConfig(page_size=page_size, cache_bytes=cache, **kw),
                    sidecar_path=None if path is None else f"{path}.meta")


def flush(t):
    t.switch_partition()
    return t.complete_victim()


def test_switch_tree_inserts_carry_new_pnr():
    t = tree()
    for _ in range(4):
        t.insert(b"x", RecordType.REGULAR, t.meta.max_pnr + 1, b"")
        flush(t)
    assert t.meta.max_pnr == 4
    assert t.switch_partition() == 4
    assert t.insert(b"y", RecordType.REGULAR, 99, b"") == 5


def test_switch_on_empty_partition_is_a_noop_flush():
    t = tree()
    writes = t.store.writes
    t.switch_partition()
    assert t.complete_victim() is None
    assert t.store.writes == writes
    assert t.meta.max_pnr == 1


def test_filter_no_false_negatives_and_fences():
    rng = random.Random(1)
    keys = {b"m" + rng.randbytes(8) for _ in range(5000)}
    f = build_filter(keys)
    assert all(probe(f, k) for k in keys)
    assert f.fence_low == min(keys) and f.fence_high == max(keys)
    f.bits = bytearray(b"\xff" * len(f.bits))  # bloom would answer yes for anything
    assert not probe(f, b"a")
    assert not probe(f, b"z")


def test_filter_false_positive_rate():
    rng = random.Random(2)
    present = {rng.randbytes(12) for _ in range(100_000)}
    f = build_filter(present)
    absent = []
    while len(absent) < 100_000:
        k = rng.randbytes(12)
        if k not in present and f.fence_low <= k <= f.fence_high:
            absent.append(k)
    fp = sum(probe(f, k) for k in absent) / len(absent)
    expect = expected_fp_rate(10, 7)
    assert abs(expect - 0.0082) < 0.0002
    assert fp <= 1.5 * expect


def test_unbuilt_filter_rejects_probe():
    with pytest.raises(FilterNotBuilt):
        probe(PartitionFilter(), b"a")


def test_handover_accounting_and_cached_reads():
    t = tree(cache=256 * 1024)
    for i in range(400):
        t.insert(b"k%04d" % i, RecordType.REGULAR, i + 1, b"v" * 20)
    dirty_before = t.buffer_bytes()
    resident_before = t.cache.resident_bytes
    flush(t)
    assert dirty_before > 0 and t.buffer_bytes() == 0
    victim_pages = len(t.parts[0].page_ids)
    assert t.cache.resident_bytes == resident_before + victim_pages * t.config.page_size
    reads = t.store.reads
    assert any(v[2] == b"v" * 20 for v in t.partition_versions(t.parts[0], b"k0123"))
    assert t.store.reads == reads
    assert t.global_meta.buffer_share == t.global_meta.buffer_share_max


def test_handover_pages_evicted_before_hot_inner_nodes():
    t = tree(cache=8 * 1024 + 64 * 1024)
    t.cache.min_pages = 1
    for i in range(2000):
        t.insert(b"k%05d" % i, RecordType.REGULAR, i + 1, b"v" * 20)
    flush(t)
    part = t.parts[0]
    order = t.cache.order()
    assert part.root in order
    # touch the root so it is hotter than the freshly handed-over leaves
    t.load(part.root)
    t.cache.budget = lambda: 4 * t.config.page_size
    t.cache.enforce()
    assert part.root in t.cache.order()


def test_sidecar_round_trip(tmp_path):
    metas = [PartitionMeta(0, True, 10), PartitionMeta(3, True, 5, type="C", cover_lo=1, cover_hi=2)]
    write_sidecar(tmp_path / "m", metas)
    assert read_sidecar(tmp_path / "m") == [(0, "R", True, 10), (3, "C", True, 5)]


def test_recover_empty_tree(tmp_path):
    path = tmp_path / "db"
    PageStore(path, page_size=1024).close()
    meta, parts = recover_metadata(path)
    assert meta.max_pnr == 0 and parts == []


def _load(t, n, start=0, ts0=1):
    for i in range(n):
        t.insert(b"k%05d" % (start + i), RecordType.REGULAR, ts0 + i, b"v%d" % i)


def test_recover_after_flush_before_sidecar(tmp_path):
    path = tmp_path / "db"
    t = tree(path=path, sidecar=False)
    _load(t, 500)
    flush(t)
    _load(t, 300, start=1000, ts0=1000)
    flush(t)
    _load(t, 10, start=5000, ts0=5000)  # unflushed, lost on crash
    before = metadata_dump(t.meta, t.partition_metas(include_unsynced=False))
    t.store.abandon()
    meta, parts = recover_metadata(path)
    assert metadata_dump(meta, parts) == before


def test_recover_after_mid_flush_crash(tmp_path):
    path = tmp_path / "db"
    t = tree(path=path)
    _load(t, 500)
    flush(t)
    synced = metadata_dump(t.meta, t.partition_metas(include_unsynced=False))["partitions"]
    _load(t, 2000, start=1000, ts0=1000)
    t.switch_partition()
    t.store.inject_crash_after(3)
    with pytest.raises(SimulatedCrash):
        t.complete_victim()
    t.store.abandon()
    store = PageStore(path)
    t2 = MVPBTree(store, TreeConfig(page_size=1024))
    assert metadata_dump(t2.meta, t2.partition_metas(include_unsynced=False))["partitions"] == synced
    t2.audit()
    got = sorted(k for _p, k, *_ in t2.scan_records())
    assert got == [b"k%05d" % i for i in range(500)]


def test_record_count_matches_scan():
    t = tree()
    for r in range(3):
        _load(t, 300, start=r * 150, ts0=1 + r * 1000)
        flush(t)
    visible = sum(p.n_records for p in t.partition_metas())
    assert visible == sum(1 for _ in t.scan_records())


def test_scan_rebuilds_filters(tmp_path):
    path = tmp_path / "db"
    t = tree(path=path)
    _load(t, 400)
    flush(t)
    t.store.close()
    t2 = MVPBTree(PageStore(path), TreeConfig(page_size=1024))
    f = t2.parts[0].filter
    assert f.built and all(f.might_contain(b"k%05d" % i) for i in range(400))
