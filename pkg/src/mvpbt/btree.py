"""B+-Tree core shared by every partition and by the in-place baseline.

Leaf entries are kept as parallel lists: ``keys`` (user keys, ascending) and
``vals`` (``(rtype, ts, value)`` tuples). All versions of one user key are
adjacent and ordered newest first, so ``bisect_left`` on ``keys`` lands on
the newest version. Versions of one key may straddle a leaf boundary; the
separator then equals that key, which is how readers know to continue into
the right sibling.

Inner nodes hold ``keys`` = separators and ``vals`` = children; child ``j``
covers ``[keys[j-1], keys[j])``. Children are either live ``Node`` objects
(the in-memory mutable partition) or page ids of persisted pages.
"""

from __future__ import annotations

import struct
from bisect import bisect_left
from collections.abc import Callable, Iterator, Sequence
from dataclasses import dataclass, field
from typing import Optional

from .errors import DuplicateRecord, EngineError
from .records import RecordType, get_varint, put_varint, record_size, varint_len
from .store import NO_PAGE, PAGE_MAGIC, PageStore, seal

HEADER_FORMAT = "<4sQIBBHHHQ"  # magic, page_id, crc, level, flags, count, pnr, prefix_len, next
HEADER_SIZE = struct.calcsize(HEADER_FORMAT)
assert HEADER_SIZE == 32
FLAG_TOP = 1  # node of the root levels spanning partitions
CHILD_REF_SIZE = 8

_header = struct.Struct(HEADER_FORMAT)


class Node:
    __slots__ = ("page_id", "level", "pnr", "keys", "vals", "next", "nbytes", "dirty", "flags")

    def __init__(self, level=0, pnr=0, keys=None, vals=None, nbytes=0, page_id=NO_PAGE, flags=0):
        self.page_id = page_id
        self.level = level
        self.pnr = pnr
        self.keys = keys if keys is not None else []
        self.vals = vals if vals is not None else []
        self.next = None
        self.nbytes = nbytes
        self.dirty = False
        self.flags = flags

    @property
    def is_leaf(self) -> bool:
        return self.level == 0

    def __repr__(self):
        kind = "leaf" if self.level == 0 else f"inner(L{self.level})"
        return f"<Node {kind} pid={self.page_id} pnr={self.pnr} n={len(self.keys)}>"


def lcp_len(a: bytes, b: bytes) -> int:
    n = min(len(a), len(b))
    i = 0
    while i < n and a[i] == b[i]:
        i += 1
    return i


def inner_entry_size(sep: bytes) -> int:
    return varint_len(len(sep)) + len(sep) + CHILD_REF_SIZE


def leaf_nbytes(keys: Sequence[bytes], vals: Sequence[tuple]) -> int:
    return sum(record_size(len(k), len(v[2])) for k, v in zip(keys, vals))


def encoded_size(node: Node) -> int:
    """Upper bound on the encoded page size of ``node``."""
    if node.level == 0 and node.keys:
        plen = lcp_len(node.keys[0], node.keys[-1])
        return HEADER_SIZE + plen + node.nbytes - len(node.keys) * plen
    return HEADER_SIZE + node.nbytes


def fill_factor(node: Node, page_size: int) -> float:
    return encoded_size(node) / page_size


# -- page codec -----------------------------------------------------------------


def _child_id(child) -> int:
    pid = child if type(child) is int else child.page_id
    if pid == NO_PAGE:
        raise EngineError("child has no page id; children must be flushed first")
    return pid


def encode_node(node: Node, page_size: int) -> bytearray:
    out = bytearray(HEADER_SIZE)
    nxt = node.next
    next_id = NO_PAGE if nxt is None else (nxt if type(nxt) is int else nxt.page_id)
    if node.level == 0:
        keys = node.keys
        prefix = keys[0][:lcp_len(keys[0], keys[-1])] if keys else b""
        plen = len(prefix)
        out += prefix
        for k, (rtype, ts, value) in zip(keys, node.vals):
            out.append(rtype)
            out += ts.to_bytes(8, "little")
            sfx = k[plen:]
            put_varint(out, len(sfx))
            out += sfx
            put_varint(out, len(value))
            out += value
        count = len(keys)
    else:
        seps = node.keys
        if len(seps) >= 2:
            prefix = seps[0][:lcp_len(seps[0], seps[-1])]
        elif seps:
            prefix = b""
        else:
            prefix = b""
        plen = len(prefix)
        out += prefix
        out += _child_id(node.vals[0]).to_bytes(8, "little")
        for sep, child in zip(seps, node.vals[1:]):
            sfx = sep[plen:]
            put_varint(out, len(sfx))
            out += sfx
            out += _child_id(child).to_bytes(8, "little")
        count = len(node.vals)
    if len(out) > page_size:
        raise EngineError(f"node encodes to {len(out)} bytes > page size {page_size}")
    _header.pack_into(out, 0, PAGE_MAGIC, node.page_id, 0, node.level, node.flags,
                      count, node.pnr, plen, next_id)
    out += bytes(page_size - len(out))
    return seal(out)


def decode_node(image) -> Node:
    magic, pid, _crc, level, flags, count, pnr, plen, next_id = _header.unpack_from(image, 0)
    if magic != PAGE_MAGIC:
        raise EngineError(f"bad page magic in page {pid}")
    pos = HEADER_SIZE
    prefix = bytes(image[pos:pos + plen])
    pos += plen
    keys: list = []
    vals: list = []
    mv = memoryview(image)
    if level == 0:
        nbytes = 0
        kapp = keys.append
        vapp = vals.append
        for _ in range(count):
            start = pos
            rtype = image[pos]
            ts = int.from_bytes(mv[pos + 1:pos + 9], "little")
            klen = image[pos + 9]
            pos += 10
            if klen >= 0x80:
                klen, pos = get_varint(image, pos - 1)
            kapp(prefix + bytes(mv[pos:pos + klen]))
            pos += klen
            vlen = image[pos]
            pos += 1
            if vlen >= 0x80:
                vlen, pos = get_varint(image, pos - 1)
            vapp((rtype, ts, bytes(mv[pos:pos + vlen])))
            pos += vlen
            nbytes += pos - start + plen
    else:
        vals.append(int.from_bytes(mv[pos:pos + 8], "little"))
        pos += 8
        nbytes = CHILD_REF_SIZE
        for _ in range(count - 1):
            slen, pos = get_varint(image, pos)
            sep = prefix + bytes(mv[pos:pos + slen])
            pos += slen
            keys.append(sep)
            vals.append(int.from_bytes(mv[pos:pos + 8], "little"))
            pos += 8
            nbytes += inner_entry_size(sep)
    node = Node(level, pnr, keys, vals, nbytes, pid, flags)
    node.next = next_id if next_id != NO_PAGE else None
    return node


# -- navigation -------------------------------------------------------------------

Loader = Callable[[int], Node]


def _deref(child, load: Optional[Loader]) -> Node:
    return child if type(child) is Node else load(child)


def descend(root, key: bytes, load: Optional[Loader] = None) -> tuple[Node, Optional[bytes], int]:
    """Walk from ``root`` to the leftmost leaf that may hold ``key``.

    Returns ``(leaf, hi_fence, depth)``; ``hi_fence`` is the tightest upper
    separator seen on the way (None for the rightmost leaf).
    """
    node = _deref(root, load)
    hi = None
    depth = 1
    while node.level > 0:
        seps = node.keys
        j = bisect_left(seps, key)
        if j < len(seps):
            hi = seps[j]
        node = _deref(node.vals[j], load)
        depth += 1
    return node, hi, depth


def traverse(root, key: bytes, load: Optional[Loader] = None) -> Node:
    return descend(root, key, load)[0]


def leaf_versions(leaf: Node, hi: Optional[bytes], key: bytes,
                  load: Optional[Loader] = None) -> Iterator[tuple[int, int, bytes]]:
    """Yield ``(rtype, ts, value)`` of ``key`` newest first, crossing siblings if needed."""
    while True:
        keys = leaf.keys
        pos = bisect_left(keys, key)
        n = len(keys)
        while pos < n and keys[pos] == key:
            yield leaf.vals[pos]
            pos += 1
        if pos < n or hi != key or leaf.next is None:
            return
        leaf = _deref(leaf.next, load)
        hi = key if (leaf.keys and leaf.keys[-1] == key) else None


def iter_leaves(root, load: Optional[Loader] = None, start_key: Optional[bytes] = None) -> Iterator[Node]:
    if start_key is None:
        node = _deref(root, load)
        while node.level > 0:
            node = _deref(node.vals[0], load)
    else:
        node = descend(root, start_key, load)[0]
    while node is not None:
        yield node
        node = None if node.next is None else _deref(node.next, load)


def iter_entries(root, load: Optional[Loader] = None, low: Optional[bytes] = None,
                 high: Optional[bytes] = None) -> Iterator[tuple[bytes, tuple]]:
    """Yield ``(key, (rtype, ts, value))`` for keys in ``[low, high)`` in tree order."""
    first = True
    for leaf in iter_leaves(root, load, low):
        keys = leaf.keys
        pos = bisect_left(keys, low) if (first and low is not None) else 0
        first = False
        for i in range(pos, len(keys)):
            k = keys[i]
            if high is not None and k >= high:
                return
            yield k, leaf.vals[i]


def walk_pages(root, load: Loader) -> Iterator[Node]:
    """Every node of a persisted subtree, top-down (used for audits and frees)."""
    stack = [root]
    while stack:
        node = _deref(stack.pop(), load)
        yield node
        if node.level > 0:
            stack.extend(reversed(node.vals))


# -- dense packing ----------------------------------------------------------------


def separator(left_last: bytes, right_first: bytes) -> bytes:
    """Shortest prefix of ``right_first`` that is greater than ``left_last``."""
    if left_last == right_first:
        return right_first
    return right_first[:lcp_len(left_last, right_first) + 1]


def _fits(keys, prefix_sums, a, b, page_size) -> bool:
    plen = lcp_len(keys[a], keys[b - 1])
    return HEADER_SIZE + plen + (prefix_sums[b] - prefix_sums[a]) - (b - a) * plen <= page_size


def _group_start(keys, i, floor):
    k = keys[i]
    while i > floor and keys[i - 1] == k:
        i -= 1
    return i


def greedy_cuts(keys: Sequence[bytes], sizes: Sequence[int], page_size: int) -> list[int]:
    """Cut points packing records into pages filled up to ``page_size``.

    Cuts avoid splitting the versions of one key unless a single key's
    versions overflow a page.
    """
    n = len(keys)
    cuts = []
    a = 0
    while a < n:
        first = keys[a]
        plen = len(first)
        total = 0
        b = a
        while b < n:
            k = keys[b]
            if k[:plen] != first[:plen]:
                plen = lcp_len(first, k)
            cand = total + sizes[b]
            if b > a and HEADER_SIZE + plen + cand - (b - a + 1) * plen > page_size:
                break
            total = cand
            b += 1
        if b < n and keys[b] == keys[b - 1]:
            g = _group_start(keys, b, a)
            if g > a:
                b = g
        cuts.append(b)
        a = b
    return cuts


def even_cuts(keys: Sequence[bytes], sizes: Sequence[int], page_size: int) -> list[int]:
    """Cut into the minimal page count, balancing bytes across pages."""
    greedy = greedy_cuts(keys, sizes, page_size)
    npages = len(greedy)
    if npages <= 1:
        return greedy
    prefix = [0]
    for s in sizes:
        prefix.append(prefix[-1] + s)
    total = prefix[-1]
    cuts = []
    a = 0
    n = len(keys)
    for p in range(1, npages):
        target = total * p / npages
        c = bisect_left(prefix, target, a + 1, n)
        c = min(max(c, a + 1), n - (npages - p))
        if keys[c] == keys[c - 1]:
            g = _group_start(keys, c, a)
            if g > a:
                c = g
        cuts.append(c)
        a = c
    cuts.append(n)
    a = 0
    for c in cuts:
        if c <= a or not _fits(keys, prefix, a, c, page_size):
            return greedy
        a = c
    return cuts


def pack_leaves(keys: list, vals: list, page_size: int, pnr: int, even: bool = True) -> list[Node]:
    if not keys:
        return []
    sizes = [record_size(len(k), len(v[2])) for k, v in zip(keys, vals)]
    cuts = (even_cuts if even else greedy_cuts)(keys, sizes, page_size)
    leaves = []
    a = 0
    for c in cuts:
        leaves.append(Node(0, pnr, keys[a:c], vals[a:c], sum(sizes[a:c])))
        a = c
    for left, right in zip(leaves, leaves[1:]):
        left.next = right
    return leaves


def build_inner_levels(children: list, low_keys: list, page_size: int, pnr: int,
                       base_level: int = 1, flags: int = 0) -> list[list[Node]]:
    """Build inner levels bottom-up over ``children`` until one root remains.

    ``low_keys[i]`` is the separator in front of child ``i`` (``low_keys[0]``
    is ignored at the top). Returns the new levels, lowest first; an empty
    list if ``children`` already is a single node.
    """
    levels: list[list[Node]] = []
    level = base_level
    while len(children) > 1:
        nodes: list[Node] = []
        node_lows: list = []
        cur: Optional[Node] = None
        for child, low in zip(children, low_keys):
            esize = inner_entry_size(low)
            if cur is None or (HEADER_SIZE + cur.nbytes + esize > page_size and len(cur.vals) >= 2):
                cur = Node(level, pnr, [], [child], CHILD_REF_SIZE, flags=flags)
                nodes.append(cur)
                node_lows.append(low)
            else:
                cur.keys.append(low)
                cur.vals.append(child)
                cur.nbytes += esize
        if len(nodes) == len(children):
            raise EngineError("page size too small for inner fanout")
        levels.append(nodes)
        children, low_keys = nodes, node_lows
        level += 1
    return levels


def leaf_low_keys(leaves: Sequence[Node]) -> list:
    lows: list = [b""]
    for left, right in zip(leaves, leaves[1:]):
        lows.append(separator(left.keys[-1], right.keys[0]))
    return lows


def reconcile(leaves: Sequence[Node], page_size: int, pnr: int) -> list[list[Node]]:
    """Re-cut flexible in-memory leaves into dense disk pages plus inner levels.

    Returns levels lowest first: ``[leaves, inner_1, ..., root_level]``.
    An empty input yields ``[]``.
    """
    keys: list = []
    vals: list = []
    for leaf in leaves:
        keys.extend(leaf.keys)
        vals.extend(leaf.vals)
    new_leaves = pack_leaves(keys, vals, page_size, pnr, even=True)
    if not new_leaves:
        return []
    return [new_leaves] + build_inner_levels(new_leaves, leaf_low_keys(new_leaves), page_size, pnr)


@dataclass
class FlushReport:
    pages_written: int = 0
    bytes_written: int = 0
    offsets: list[int] = field(default_factory=list)
    levels: list[int] = field(default_factory=list)
    page_ids: list[int] = field(default_factory=list)


def flush_sequential(levels: Sequence[Sequence[Node]], store: PageStore) -> FlushReport:
    """Assign ascending page ids level by level (leaves first) and write them in one call."""
    nodes = [n for lvl in levels for n in lvl]
    report = FlushReport()
    if not nodes:
        return report
    ids = store.reserve(len(nodes))
    for node, pid in zip(nodes, ids):
        node.page_id = pid
    if levels and levels[0] and levels[0][0].level == 0:
        leaves = levels[0]
        for left, right in zip(leaves, leaves[1:]):
            left.next = right.page_id
        leaves[-1].next = None
    images = [encode_node(n, store.page_size) for n in nodes]
    extents = store.allocate_and_write(images)
    for node in nodes:
        node.dirty = False
        if node.level > 0:
            node.vals = [_child_id(c) for c in node.vals]
    report.pages_written = len(extents)
    report.bytes_written = sum(e.length for e in extents)
    report.offsets = [e.offset for e in extents]
    report.levels = [n.level + (100 if n.flags & FLAG_TOP else 0) for n in nodes]
    report.page_ids = ids
    return report


# -- flexible in-memory tree (mutable partition) -----------------------------------------


class MemTree:
    """In-memory B+-Tree for the mutable partition.

    Leaves grow flexibly up to ``flex_limit`` bytes before splitting; the
    rightmost leaf splits unevenly since inserts there tend to be appends.
    """

    def __init__(self, pnr: int, flex_limit: int, rightmost_split: float = 0.95):
        self.pnr = pnr
        self.flex_limit = flex_limit
        self.rightmost_split = rightmost_split
        self.root = Node(0, pnr)
        self.dirty_bytes = 0
        self.n_records = 0
        self.height = 1

    def insert(self, key: bytes, rtype: int, ts: int, value: bytes) -> int:
        path = []
        node = self.root
        hi = None
        while node.level > 0:
            j = bisect_left(node.keys, key)
            if j < len(node.keys):
                hi = node.keys[j]
            path.append((node, j))
            node = node.vals[j]
        keys = node.keys
        pos = bisect_left(keys, key)
        if pos < len(keys) and keys[pos] == key and node.vals[pos][1] == ts:
            raise DuplicateRecord(f"version ({key!r}, ts={ts}) already present")
        if pos == len(keys) and hi == key and node.next is not None:
            nxt = node.next
            if nxt.keys and nxt.keys[0] == key and nxt.vals[0][1] == ts:
                raise DuplicateRecord(f"version ({key!r}, ts={ts}) already present")
        size = record_size(len(key), len(value))
        keys.insert(pos, key)
        node.vals.insert(pos, (int(rtype), ts, value))
        node.nbytes += size
        self.dirty_bytes += size
        self.n_records += 1
        if node.nbytes > self.flex_limit:
            self._split(node, path)
        return size

    def _split_point(self, node: Node, ratio: float) -> Optional[int]:
        keys = node.keys
        if node.level == 0:
            target = node.nbytes * ratio
            acc = 0
            cut = len(keys) - 1
            for i, (k, v) in enumerate(zip(keys, node.vals)):
                acc += record_size(len(k), len(v[2]))
                if acc >= target:
                    cut = i + 1
                    break
            cut = min(max(cut, 1), len(keys) - 1)
        else:
            cut = max(1, min(len(node.vals) - 1, int(len(node.vals) * ratio)))
        if node.level == 0 and keys[cut] == keys[cut - 1]:
            g = _group_start(keys, cut, 0)
            if g == 0:
                k = keys[cut]
                while cut < len(keys) and keys[cut] == k:
                    cut += 1
                if cut == len(keys):
                    return None
            else:
                cut = g
        return cut

    def _split(self, node: Node, path) -> None:
        while True:
            if len(node.vals) < 2:
                return
            rightmost = node.next is None if node.level == 0 else not path or all(
                j == len(p.vals) - 1 for p, j in path)
            ratio = self.rightmost_split if rightmost else 0.5
            cut = self._split_point(node, ratio)
            if cut is None:
                return
            if node.level == 0:
                right = Node(0, self.pnr, node.keys[cut:], node.vals[cut:])
                right.nbytes = leaf_nbytes(right.keys, right.vals)
                del node.keys[cut:]
                del node.vals[cut:]
                node.nbytes -= right.nbytes
                right.next = node.next
                node.next = right
                sep = right.keys[0]
            else:
                sep = node.keys[cut - 1]
                right = Node(node.level, self.pnr, node.keys[cut:], node.vals[cut:])
                del node.keys[cut - 1:]
                del node.vals[cut:]
                node.nbytes = CHILD_REF_SIZE + sum(inner_entry_size(s) for s in node.keys)
                right.nbytes = CHILD_REF_SIZE + sum(inner_entry_size(s) for s in right.keys)
            if not path:
                self.root = Node(node.level + 1, self.pnr, [sep], [node, right],
                                 2 * CHILD_REF_SIZE + varint_len(len(sep)) + len(sep))
                self.height += 1
                return
            parent, j = path.pop()
            parent.keys.insert(j, sep)
            parent.vals.insert(j + 1, right)
            parent.nbytes += inner_entry_size(sep)
            if parent.nbytes <= self.flex_limit:
                return
            node = parent

    def leaves(self) -> Iterator[Node]:
        return iter_leaves(self.root)

    def versions(self, key: bytes) -> Iterator[tuple[int, int, bytes]]:
        leaf, hi, _ = descend(self.root, key)
        return leaf_versions(leaf, hi, key)

    def traverse(self, key: bytes) -> Node:
        return traverse(self.root, key)


# -- streaming bulk builder --------------------------------------------------------------


@dataclass
class BuiltSubtree:
    root_id: int
    height: int
    page_ids: list
    n_records: int
    leaf_ids: list


class BulkBuilder:
    """Append sorted records and stream dense leaves to the store as they fill.

    Inner levels are written after the last leaf. Memory stays bounded by one
    leaf plus one ``(separator, page_id)`` pair per leaf.
    """

    def __init__(self, store: PageStore, pnr: int, on_leaf: Optional[Callable[[Node], None]] = None):
        self.store = store
        self.page_size = store.page_size
        self.pnr = pnr
        self.on_leaf = on_leaf
        self.keys: list = []
        self.vals: list = []
        self.total = 0
        self.plen = 0
        self.pending: Optional[Node] = None
        self.lows: list = []
        self.leaf_ids: list = []
        self.n_records = 0
        self.last_key: Optional[bytes] = None

    def add(self, key: bytes, rtype: int, ts: int, value: bytes) -> None:
        if self.last_key is not None and key < self.last_key:
            raise EngineError("bulk builder requires ascending keys")
        self.last_key = key
        size = record_size(len(key), len(value))
        keys = self.keys
        if keys:
            first = keys[0]
            plen = self.plen
            if key[:plen] != first[:plen]:
                plen = lcp_len(first, key)
            n = len(keys) + 1
            if HEADER_SIZE + plen + self.total + size - n * plen > self.page_size:
                cut = len(keys)
                if keys[-1] == key:
                    g = _group_start(keys, cut - 1, 0)
                    if g > 0:
                        cut = g
                self._emit(cut)
                keys = self.keys
                plen = lcp_len(keys[0], key) if keys else len(key)
            self.plen = plen
        else:
            self.plen = len(key)
        keys.append(key)
        self.vals.append((int(rtype), ts, value))
        self.total += size
        self.n_records += 1

    def _emit(self, cut: int) -> None:
        keys, vals = self.keys, self.vals
        leaf = Node(0, self.pnr, keys[:cut], vals[:cut], leaf_nbytes(keys[:cut], vals[:cut]))
        self.keys = keys[cut:]
        self.vals = vals[cut:]
        self.total -= leaf.nbytes
        if self.keys:
            self.plen = lcp_len(self.keys[0], self.keys[-1])
        prev = self.pending
        leaf.page_id = self.store.reserve(1)[0]
        self._write_pending(next_id=leaf.page_id)
        self.lows.append(b"" if prev is None else separator(prev.keys[-1], leaf.keys[0]))
        self.pending = leaf

    def _write_pending(self, next_id) -> None:
        leaf = self.pending
        if leaf is None:
            return
        leaf.next = next_id
        self.store.allocate_and_write([encode_node(leaf, self.page_size)])
        self.leaf_ids.append(leaf.page_id)
        if self.on_leaf is not None:
            self.on_leaf(leaf)
        self.pending = None

    def finish(self) -> Optional[BuiltSubtree]:
        if self.keys:
            self._emit(len(self.keys))
        self._write_pending(next_id=None)
        if not self.leaf_ids:
            return None
        levels = build_inner_levels(list(self.leaf_ids), self.lows, self.page_size, self.pnr)
        report = flush_sequential(levels, self.store)
        root_id = levels[-1][0].page_id if levels else self.leaf_ids[0]
        return BuiltSubtree(root_id, len(levels) + 1, self.leaf_ids + report.page_ids,
                            self.n_records, list(self.leaf_ids))
