"""Version records, timestamps and snapshot visibility (new-to-old, one-point invalidation)."""

from __future__ import annotations

from collections.abc import Iterable
from dataclasses import dataclass, field
from enum import IntEnum
from typing import Optional

from .errors import InvalidArgument
from .keys import PartitionedKey

BULK_TS = 0
MAX_TS = (1 << 64) - 1


class RecordType(IntEnum):
    REGULAR = 0
    REPLACEMENT = 1
    ANTI = 2
    TOMBSTONE = 3
    CACHED_INDEX = 4


# Record types whose visibility ends the logical tuple for the reader.
INVALIDATING_END = frozenset({RecordType.TOMBSTONE, RecordType.ANTI})


@dataclass(slots=True)
class VersionRecord:
    rtype: RecordType
    ts: int
    key: PartitionedKey
    value: bytes = b""

    @property
    def is_deletion(self) -> bool:
        return self.rtype in INVALIDATING_END


@dataclass(frozen=True, slots=True)
class Snapshot:
    read_ts: int
    active_set: frozenset = field(default_factory=frozenset)

    def __post_init__(self):
        if any(t > self.read_ts for t in self.active_set):
            raise InvalidArgument("active transaction ids must not exceed read_ts")

    def sees(self, ts: int) -> bool:
        return ts <= self.read_ts and ts not in self.active_set


def is_visible(r: VersionRecord, s: Snapshot) -> bool:
    return r.ts <= s.read_ts and r.ts not in s.active_set


def resolve_chain(candidates: Iterable[VersionRecord], s: Snapshot) -> Optional[VersionRecord]:
    """Return the version of one logical tuple that ``s`` sees, or None.

    ``candidates`` must be ordered newest first. The first visible record
    decides: it either is the answer or, being a Tombstone/Anti record,
    invalidates everything older. Iteration stops there, so lazily produced
    candidates beyond it are never materialised.
    """
    read_ts = s.read_ts
    active = s.active_set
    for r in candidates:
        if r.ts > read_ts or r.ts in active:
            continue
        if r.rtype in INVALIDATING_END:
            return None
        return r
    return None


# -- on-page record codec -------------------------------------------------
# 1 byte rtype | 8 bytes ts (LE) | varint klen | key | varint vlen | value


def varint_len(n: int) -> int:
    size = 1
    while n >= 0x80:
        n >>= 7
        size += 1
    return size


def put_varint(out: bytearray, n: int) -> None:
    while n >= 0x80:
        out.append((n & 0x7F) | 0x80)
        n >>= 7
    out.append(n)


def get_varint(buf, pos: int) -> tuple[int, int]:
    b = buf[pos]
    if b < 0x80:
        return b, pos + 1
    result = 0
    shift = 0
    while True:
        b = buf[pos]
        pos += 1
        result |= (b & 0x7F) << shift
        if b < 0x80:
            return result, pos
        shift += 7


def record_size(key_len: int, value_len: int) -> int:
    return 9 + varint_len(key_len) + key_len + varint_len(value_len) + value_len


def encode_record(out: bytearray, rtype: int, ts: int, key: bytes, value: bytes) -> None:
    out.append(rtype)
    out += ts.to_bytes(8, "little")
    put_varint(out, len(key))
    out += key
    put_varint(out, len(value))
    out += value


def decode_record(buf, pos: int) -> tuple[int, int, bytes, bytes, int]:
    rtype = buf[pos]
    ts = int.from_bytes(buf[pos + 1:pos + 9], "little")
    klen, pos = get_varint(buf, pos + 9)
    key = bytes(buf[pos:pos + klen])
    pos += klen
    vlen, pos = get_varint(buf, pos)
    value = bytes(buf[pos:pos + vlen])
    return rtype, ts, key, value, pos + vlen
