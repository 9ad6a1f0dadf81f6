"""Append-based page store with monotone extent allocation and I/O accounting.

Pages are fixed-size extents addressed by page id; page id ``n`` lives at
byte offset ``SUPERBLOCK_SIZE + (n - 1) * page_size``, so handing out ids in
ascending order *is* the monotone offset allocation. Every page image starts
with ``magic | page_id (u64 LE) | crc32 (u32 LE)``; the store seals and
verifies the checksum and leaves the rest of the layout to the tree.

The store also keeps a simulated device clock (``busy_us``) so throughput can
be compared between engine modes independently of the host machine.
"""

from __future__ import annotations

import csv
import os
import struct
import zlib
from collections.abc import Iterable, Sequence
from dataclasses import dataclass
from enum import Enum
from typing import Optional

from .errors import CorruptPage, EngineError, StorageFull, TraceParseError, UseAfterFree

SUPERBLOCK_SIZE = 4096
PAGE_MAGIC = b"MVPB"
SB_MAGIC = b"MVPBSTOR"
SB_FORMAT = "<8sIQQQQQ"  # magic, page_size, next_page_id, root_page_id, generation, aux0, aux1
CHECKSUM_SLICE = slice(12, 16)
NO_PAGE = 0


class SimulatedCrash(EngineError):
    """Raised by fault injection to emulate the process dying mid-write."""


@dataclass(frozen=True)
class DeviceModel:
    """Per-page latencies of a flash device: reads cheap, random writes expensive."""

    read_us: float = 80.0
    seq_write_us: float = 30.0
    rand_write_us: float = 300.0


class ExtentState(Enum):
    LIVE = "Live"
    DEAD = "Dead"


@dataclass
class Extent:
    offset: int
    length: int
    page_id: int
    state: ExtentState = ExtentState.LIVE


def page_id_of(image) -> int:
    return int.from_bytes(image[4:12], "little")


def seal(image: bytearray) -> bytearray:
    image[CHECKSUM_SLICE] = b"\0\0\0\0"
    image[CHECKSUM_SLICE] = zlib.crc32(image).to_bytes(4, "little")
    return image


def checksum_ok(image) -> bool:
    stored = bytes(image[CHECKSUM_SLICE])
    buf = bytearray(image)
    buf[CHECKSUM_SLICE] = b"\0\0\0\0"
    return zlib.crc32(buf).to_bytes(4, "little") == stored


class IoTrace:
    """Append-only ``(tick, op, offset, length)`` event log."""

    def __init__(self):
        self.events: list[tuple[int, str, int, int]] = []

    def append(self, tick: int, op: str, offset: int, length: int) -> None:
        self.events.append((tick, op, offset, length))

    def __len__(self):
        return len(self.events)

    def writes(self):
        return [e for e in self.events if e[1] == "W"]

    def dump(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["tick", "op", "offset", "length"])
            w.writerows(self.events)

    @staticmethod
    def load(path) -> "IoTrace":
        trace = IoTrace()
        with open(path, newline="") as fh:
            for lineno, line in enumerate(fh, 1):
                line = line.strip()
                if not line or (lineno == 1 and line.startswith("tick")):
                    continue
                parts = line.split(",")
                try:
                    tick, op, offset, length = parts
                    if op not in ("R", "W"):
                        raise ValueError(op)
                    trace.append(int(tick), op, int(offset), int(length))
                except ValueError:
                    raise TraceParseError(lineno, line) from None
        return trace


class PageStore:
    def __init__(
        self,
        path: Optional[str | os.PathLike] = None,
        page_size: int = 16384,
        capacity_bytes: Optional[int] = None,
        device: DeviceModel = DeviceModel(),
        trace: bool = False,
    ):
        self.path = os.fspath(path) if path is not None else None
        self.page_size = page_size
        self.capacity_bytes = capacity_bytes
        self.device = device
        self.trace: Optional[IoTrace] = IoTrace() if trace else None
        self.extents: dict[int, Extent] = {}
        self.next_page_id = 1
        self.root_page_id = NO_PAGE
        self.generation = 0
        # Two words owned by the tree layered on top (it keeps partition counters there).
        self.aux = (0, 0)
        self._mem: dict[int, bytes] = {}
        self._fh = None
        self._tick = 0
        self._last_write_end = -1
        self._crash_after: Optional[int] = None
        self.bytes_written = 0
        self.bytes_read = 0
        self.writes = 0
        self.reads = 0
        self.reclaimed_bytes = 0
        self.superblock_writes = 0
        self.busy_us = 0.0
        # Device time spent on behalf of background maintenance (a subset of busy_us).
        self.bg_busy_us = 0.0
        self.background = False
        if self.path is not None:
            exists = os.path.exists(self.path) and os.path.getsize(self.path) >= SUPERBLOCK_SIZE
            self._fh = open(self.path, "r+b" if exists else "w+b")
            if exists:
                self._load_superblock()
            else:
                self.write_superblock(NO_PAGE)

    # -- layout ------------------------------------------------------------

    def offset_of(self, page_id: int) -> int:
        return SUPERBLOCK_SIZE + (page_id - 1) * self.page_size

    def reserve(self, n: int = 1) -> list[int]:
        """Hand out ``n`` fresh page ids with strictly ascending offsets."""
        first = self.next_page_id
        self.next_page_id += n
        return list(range(first, first + n))

    @property
    def live_bytes(self) -> int:
        return sum(e.length for e in self.extents.values() if e.state is ExtentState.LIVE)

    @property
    def allocated_bytes(self) -> int:
        return sum(e.length for e in self.extents.values())

    # -- superblock ----------------------------------------------------------

    def write_superblock(self, root_page_id: int, aux: Optional[tuple[int, int]] = None) -> None:
        self.root_page_id = root_page_id
        if aux is not None:
            self.aux = aux
        self.generation += 1
        self.superblock_writes += 1
        if self._fh is None:
            return
        sb = struct.pack(SB_FORMAT, SB_MAGIC, self.page_size, self.next_page_id,
                         root_page_id, self.generation, *self.aux)
        self._fh.seek(0)
        self._fh.write(sb.ljust(SUPERBLOCK_SIZE, b"\0"))
        self.sync()

    def _load_superblock(self) -> None:
        self._fh.seek(0)
        raw = self._fh.read(struct.calcsize(SB_FORMAT))
        magic, page_size, next_id, root, gen, aux0, aux1 = struct.unpack(SB_FORMAT, raw)
        if magic != SB_MAGIC:
            raise CorruptPage(0, "bad superblock magic")
        self.page_size = page_size
        self.next_page_id = next_id
        self.root_page_id = root
        self.generation = gen
        self.aux = (aux0, aux1)
        # Every id below the durable allocation mark may be live; recovery
        # frees what it cannot reach from the root.
        for pid in range(1, next_id):
            self.extents[pid] = Extent(self.offset_of(pid), page_size, pid)

    # -- I/O -------------------------------------------------------------------

    def _charge(self, us: float) -> None:
        self.busy_us += us
        if self.background:
            self.bg_busy_us += us

    def _account_write(self, offset: int, length: int) -> None:
        self._tick += 1
        self.writes += 1
        self.bytes_written += length
        if offset == self._last_write_end:
            self._charge(self.device.seq_write_us)
        else:
            self._charge(self.device.rand_write_us)
        self._last_write_end = offset + length
        if self.trace is not None:
            self.trace.append(self._tick, "W", offset, length)

    def _put(self, page_id: int, image) -> None:
        if self._crash_after is not None:
            if self._crash_after <= 0:
                raise SimulatedCrash(f"crash injected before writing page {page_id}")
            self._crash_after -= 1
        if self._fh is None:
            self._mem[page_id] = bytes(image)
        else:
            self._fh.seek(self.offset_of(page_id))
            self._fh.write(image)

    def allocate_and_write(self, pages: Sequence) -> list[Extent]:
        """Write freshly reserved pages, in input order, at ascending offsets.

        The call is all-or-nothing with respect to capacity: nothing is
        written if the batch does not fit.
        """
        if not pages:
            return []
        ps = self.page_size
        ids = [page_id_of(p) for p in pages]
        for a, b in zip(ids, ids[1:]):
            if b <= a:
                raise EngineError("pages must be written at strictly ascending offsets")
        for pid, p in zip(ids, pages):
            if pid >= self.next_page_id or pid < 1:
                raise EngineError(f"page id {pid} was never reserved")
            if pid in self.extents:
                raise EngineError(f"page {pid} already written; pages are write-once")
            if len(p) > ps:
                raise EngineError(f"page {pid} image exceeds page size ({len(p)} > {ps})")
        if self.capacity_bytes is not None:
            live = sum(1 for e in self.extents.values() if e.state is ExtentState.LIVE)
            if (live + len(pages)) * ps > self.capacity_bytes:
                raise StorageFull(f"{len(pages)} pages do not fit")
        out = []
        for pid, p in zip(ids, pages):
            image = bytes(p).ljust(ps, b"\0")
            self._put(pid, image)
            ext = Extent(self.offset_of(pid), ps, pid)
            self.extents[pid] = ext
            self._account_write(ext.offset, ps)
            out.append(ext)
        return out

    def overwrite(self, image) -> Extent:
        """Rewrite a live page in place (in-place B+-Tree baseline only)."""
        pid = page_id_of(image)
        ext = self.extents.get(pid)
        if ext is None:
            if pid >= self.next_page_id or pid < 1:
                raise EngineError(f"page id {pid} was never reserved")
            if self.capacity_bytes is not None and self.live_bytes + self.page_size > self.capacity_bytes:
                raise StorageFull("no room for page")
            ext = self.extents[pid] = Extent(self.offset_of(pid), self.page_size, pid)
        elif ext.state is ExtentState.DEAD:
            raise UseAfterFree(pid)
        self._put(pid, bytes(image).ljust(self.page_size, b"\0"))
        self._account_write(ext.offset, self.page_size)
        return ext

    def read_page(self, page_id: int) -> bytes:
        ext = self.extents.get(page_id)
        if ext is None:
            raise EngineError(f"page {page_id} does not exist")
        if ext.state is ExtentState.DEAD:
            raise UseAfterFree(page_id)
        if self._fh is None:
            image = self._mem[page_id]
        else:
            self._fh.seek(ext.offset)
            image = self._fh.read(self.page_size)
        self._tick += 1
        self.reads += 1
        self.bytes_read += self.page_size
        self._charge(self.device.read_us)
        if self.trace is not None:
            self.trace.append(self._tick, "R", ext.offset, self.page_size)
        if image[:4] != PAGE_MAGIC or page_id_of(image) != page_id or not checksum_ok(image):
            raise CorruptPage(page_id)
        return image

    def free_extents(self, page_ids: Iterable[int]) -> int:
        reclaimed = 0
        for pid in page_ids:
            ext = self.extents.get(pid)
            if ext is None or ext.state is ExtentState.DEAD:
                continue
            ext.state = ExtentState.DEAD
            reclaimed += ext.length
            self._mem.pop(pid, None)
        self.reclaimed_bytes += reclaimed
        return reclaimed

    def report(self) -> dict:
        return {
            "bytes_written": self.bytes_written,
            "bytes_read": self.bytes_read,
            "writes": self.writes,
            "reads": self.reads,
            "live_bytes": self.live_bytes,
        }

    # -- lifecycle -------------------------------------------------------------

    def inject_crash_after(self, n_pages: Optional[int]) -> None:
        """Let ``n_pages`` more page writes succeed, then raise SimulatedCrash."""
        self._crash_after = n_pages

    def sync(self) -> None:
        if self._fh is not None:
            self._fh.flush()
            os.fsync(self._fh.fileno())

    def close(self) -> None:
        if self._fh is not None:
            self._fh.flush()
            self._fh.close()
            self._fh = None

    def abandon(self) -> None:
        """Drop the handle without a superblock update, as a crash would."""
        if self._fh is not None:
            self._fh.flush()
            self._fh.close()
            self._fh = None
