import random
import threading

import pytest

from mvpbt.btree import (
    FLAG_TOP, HEADER_SIZE, BulkBuilder, MemTree, Node, decode_node, descend, encode_node, encoded_size,
    fill_factor, flush_sequential, iter_entries, iter_leaves, leaf_versions, reconcile, separator, traverse,
)
from mvpbt.errors import Busy, DuplicateRecord, StalePartition
from mvpbt.keys import partition_floor
from mvpbt.partitions import REGULAR
from mvpbt.records import RecordType, record_size
from mvpbt.store import PageStore
from mvpbt.tree import MVPBTree, TreeConfig

PS = 4096


def small_tree(page_size=1024, cap=8 * 1024, trace=False):
    store = PageStore(page_size=page_size, trace=trace)
    return MVPBTree(store, TreeConfig(page_size=page_size, cache_bytes=64 * 1024, partition_cap_bytes=cap))


def fill(tree, keys, ts0=1):
    for i, k in enumerate(keys):
        tree.insert(k, RecordType.REGULAR, ts0 + i, b"v" + k)


def test_insert_into_empty_tree_gives_single_leaf():
    t = MemTree(0, 4 * PS)
    t.insert(b"a", RecordType.REGULAR, 1, b"x")
    assert t.root.level == 0 and t.root.keys == [b"a"]
    with pytest.raises(DuplicateRecord):
        t.insert(b"a", RecordType.REGULAR, 1, b"y")


def test_random_inserts_walk_in_order():
    rng = random.Random(1)
    t = MemTree(0, 512)
    keys = [rng.randbytes(rng.randint(1, 12)) for _ in range(10_000)]
    for i, k in enumerate(keys):
        t.insert(k, RecordType.REGULAR, i + 1, b"")
    walked = [k for leaf in t.leaves() for k in leaf.keys]
    assert walked == sorted(keys)
    assert t.height >= 3


def test_versions_newest_first_across_leaf_boundaries():
    t = MemTree(0, 300)
    for ts in range(1, 200):
        t.insert(b"hot", RecordType.REPLACEMENT, ts, b"%d" % ts)
        t.insert(b"k%03d" % ts, RecordType.REGULAR, ts, b"")
    got = [v[1] for v in t.versions(b"hot")]
    assert got == list(range(199, 0, -1))


def test_rightmost_split_is_uneven():
    t = MemTree(0, 2000)
    for i in range(200):
        t.insert(b"k%05d" % i, RecordType.REGULAR, i + 1, b"x" * 10)
    leaves = list(t.leaves())
    assert len(leaves) > 2
    # appends leave the left part nearly full
    assert all(leaf.nbytes > 0.9 * 2000 for leaf in leaves[:-1])


def test_traverse_examples():
    leaf = Node(0, 0, [b"m"], [(0, 1, b"")])
    assert traverse(leaf, b"zzz") is leaf
    t = MemTree(0, 600)
    for i in range(500):
        t.insert(b"k%04d" % i, RecordType.REGULAR, i + 1, b"")
    first = next(t.leaves())
    assert t.traverse(b"\x00") is first


def test_traverse_agrees_with_chain_scan_on_persisted_tree():
    rng = random.Random(5)
    store = PageStore(page_size=512)
    keys = sorted(set(rng.randbytes(6) for _ in range(100_000)))
    b = BulkBuilder(store, 0)
    for k in keys:
        b.add(k, RecordType.REGULAR, 1, b"")
    built = b.finish()
    assert built.height >= 3
    load = lambda pid: decode_node(store.read_page(pid))
    owner = {}
    for leaf in iter_leaves(built.root_id, load):
        for k in leaf.keys:
            owner[k] = leaf.page_id
    for k in rng.sample(keys, 2000):
        assert traverse(built.root_id, k, load).page_id == owner[k]


def _payload_node(n_bytes, vsize=100):
    keys, vals = [], []
    i = 0
    while sum(record_size(len(k), len(v[2])) for k, v in zip(keys, vals)) < n_bytes:
        keys.append(b"key%06d" % i)
        vals.append((0, 1, b"x" * vsize))
        i += 1
    return Node(0, 0, keys, vals, sum(record_size(len(k), len(v[2])) for k, v in zip(keys, vals)))


def test_reconcile_exact_page():
    # records of 100-byte values: 9 + 1 + 9 + 1 + 100 = 120 bytes each; trim key prefix sharing away
    n = Node(0, 0, [], [])
    size = 0
    i = 0
    while True:
        k = bytes([65 + i % 26, 65 + (i // 26) % 26])
        rs = record_size(len(k), 100)
        if HEADER_SIZE + size + rs > PS:
            break
        n.keys.append(k)
        n.vals.append((0, 1, b"x" * 100))
        size += rs
        i += 1
    n.keys.sort()
    n.nbytes = size
    levels = reconcile([n], PS, 0)
    assert len(levels) == 1 and len(levels[0]) == 1
    assert fill_factor(levels[0][0], PS) > 0.97


def test_reconcile_two_and_a_half_pages():
    n = _payload_node(int(2.5 * PS))
    leaves = reconcile([n], PS, 0)[0]
    assert len(leaves) == 3
    assert all(fill_factor(l, PS) >= 0.75 for l in leaves)
    assert all(len(encode_node(l, PS)) == PS for l in leaves)


def test_reconcile_empty_emits_nothing():
    assert reconcile([], PS, 0) == []
    assert reconcile([Node(0, 0)], PS, 0) == []


def test_dense_pack_bound_on_large_partition():
    n = _payload_node(40 * PS, vsize=37)
    leaves = reconcile([n], PS, 0)[0]
    assert len(leaves) >= 10
    assert all(fill_factor(l, PS) >= 0.9 for l in leaves[:-1])


def test_encoded_size_is_an_upper_bound():
    rng = random.Random(9)
    for _ in range(50):
        keys = sorted(b"pre" + rng.randbytes(rng.randint(1, 8)) for _ in range(30))
        vals = [(0, 1, rng.randbytes(rng.randint(0, 40))) for _ in keys]
        n = Node(0, 0, keys, vals, sum(record_size(len(k), len(v[2])) for k, v in zip(keys, vals)))
        img = encode_node(n, 8192)
        used = len(img.rstrip(b"\0"))
        assert used <= encoded_size(n)
        back = decode_node(img)
        assert back.keys == keys and back.vals == vals


def test_separator_is_shortest_distinguishing_prefix():
    assert separator(b"apple", b"banana") == b"b"
    assert separator(b"abc1", b"abd") == b"abd"
    assert separator(b"k", b"k") == b"k"
    s = separator(b"user00101", b"user00200")
    assert b"user00101" < s <= b"user00200" and len(s) == 7


def test_flush_of_hundred_leaves_is_sequential():
    store = PageStore(page_size=PS, trace=True)
    levels = reconcile([_payload_node(110 * PS, vsize=60)], PS, 0)
    assert len(levels[0]) >= 100
    report = flush_sequential(levels, store)
    assert report.offsets == sorted(report.offsets) and len(set(report.offsets)) == len(report.offsets)
    assert report.pages_written == sum(len(l) for l in levels)
    n_leaves = len(levels[0])
    assert all(lv == 0 for lv in report.levels[:n_leaves])
    assert all(lv > 0 for lv in report.levels[n_leaves:])
    writes = store.trace.writes()
    assert [w[2] for w in writes] == report.offsets


def test_height_bound():
    import math
    store = PageStore(page_size=1024)
    b = BulkBuilder(store, 0)
    n = 20_000
    for i in range(n):
        b.add(b"k%07d" % i, RecordType.REGULAR, 1, b"")
    built = b.finish()
    load = lambda pid: decode_node(store.read_page(pid))
    root = load(built.root_id)
    inner = [node for node in _walk(root, load) if node.level > 0]
    f = min(len(node.vals) for node in inner if node is not root) if len(inner) > 1 else len(root.vals)
    assert built.height <= math.ceil(math.log(n, f)) + 1


def _walk(root, load):
    stack = [root]
    while stack:
        node = stack.pop()
        yield node
        if node.level > 0:
            stack.extend(load(c) for c in node.vals)


def test_stale_pnr_insert_is_redirected():
    t = small_tree()
    for _ in range(4):
        t.insert(b"a", RecordType.REGULAR, t.stats.switches + 1, b"")
        t.switch_partition()
        t.complete_victim()
    assert t.meta.max_pnr == 4
    held = {}
    ready, go = threading.Barrier(2), threading.Barrier(2)

    def writer():
        held["pnr"] = t.meta.max_pnr
        ready.wait()
        go.wait()
        held["landed"] = t.insert(b"race", RecordType.REGULAR, 100, b"x", held_pnr=held["pnr"])

    th = threading.Thread(target=writer)
    th.start()
    ready.wait()
    before = t.parts[4].meta.n_records
    assert t.switch_partition() == 4
    go.wait()
    th.join()
    assert held == {"pnr": 4, "landed": 5}
    assert t.parts[4].meta.n_records == before
    with pytest.raises(StalePartition):
        t.tree_insert(4, b"late", RecordType.REGULAR, 101, b"")


def test_fence_sandwich_audit_during_random_operations():
    rng = random.Random(2)
    t = small_tree()
    ts = 0
    for i in range(1, 6001):
        ts += 1
        t.insert(b"k%05d" % rng.randrange(3000), RecordType.REGULAR, ts, b"v")
        if t.mutable_dirty > t.config.partition_cap_bytes:
            t.switch_partition()
            t.complete_victim()
        if i % 1000 == 0:
            t.audit()


def test_persisted_pages_written_once():
    t = small_tree(trace=True)
    fill(t, [b"k%05d" % i for i in range(3000)])
    t.switch_partition()
    t.complete_victim()
    offs = [w[2] for w in t.store.trace.writes()]
    assert len(offs) == len(set(offs))


def _four_partitions():
    t = small_tree(cap=1 << 30)
    expect = {}
    ts = 0
    for pnr in range(4):
        for i in range(300):
            ts += 1
            k = b"p%d-%04d" % (pnr, i)
            t.insert(k, RecordType.REGULAR, ts, b"v")
            expect[(pnr, k)] = ts
        t.switch_partition()
        t.complete_victim()
    return t, expect


def test_range_truncate_examples():
    t, expect = _four_partitions()
    assert t.range_truncate(partition_floor(1), partition_floor(1)) == 0
    removed = t.range_truncate(partition_floor(1), partition_floor(3))
    assert removed == 600
    left = {(pnr, k): ts for pnr, k, _r, ts, _v in t.scan_records()}
    assert left == {key: ts for key, ts in expect.items() if key[0] in (0, 3)}
    removed = t.range_truncate(partition_floor(3), partition_floor(4))
    assert removed == 300 and 3 not in t.parts


def test_range_truncate_partial_partition_rebuilds():
    t, expect = _four_partitions()
    from mvpbt.keys import make_key
    removed = t.range_truncate(make_key(2, b"p2-0100"), make_key(2, b"p2-0200"))
    assert removed == 100
    assert t.parts[2].meta.n_records == 200
    t.audit()


def test_range_truncate_busy_with_cursor():
    t, _ = _four_partitions()
    children, pinned = t.scan_children(b"p1", b"p2")
    with pytest.raises(Busy):
        t.range_truncate(partition_floor(1), partition_floor(2))
    t.unpin(pinned)
    assert t.range_truncate(partition_floor(1), partition_floor(2)) == 300


def test_root_levels_flagged_and_partition_separated():
    t, _ = _four_partitions()
    root = decode_node(t.store.read_page(t.store.root_page_id))
    assert root.flags & FLAG_TOP
    assert root.keys == [partition_floor(p) for p in (1, 2, 3)]
