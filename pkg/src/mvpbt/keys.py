"""Partitioned keys: a 2-byte big-endian partition number fused with the user key.

Keys are plain ``bytes`` so that the built-in byte-wise comparison is the
partitioned order: the fixed-width big-endian prefix dominates, the user key
breaks ties.
"""

from __future__ import annotations

from enum import IntEnum

from .errors import InvalidArgument

PNR_BYTES = 2
MAX_PNR = (1 << (8 * PNR_BYTES)) - 1

PartitionedKey = bytes


class Ordering(IntEnum):
    LESS = -1
    EQUAL = 0
    GREATER = 1


def _check_pnr(pnr: int) -> None:
    if not 0 <= pnr <= MAX_PNR:
        raise InvalidArgument(f"partition number {pnr} outside 0..{MAX_PNR}")


def make_key(pnr: int, user_key: bytes) -> PartitionedKey:
    if not user_key:
        raise InvalidArgument("user key must be non-empty")
    _check_pnr(pnr)
    return pnr.to_bytes(PNR_BYTES, "big") + bytes(user_key)


def partition_floor(pnr: int) -> PartitionedKey:
    """Smallest partitioned key of partition ``pnr`` (the bare prefix).

    Not a valid record key; used as a fence/separator and for partition
    descriptors.
    """
    _check_pnr(pnr)
    return pnr.to_bytes(PNR_BYTES, "big")


def pnr_of(key: PartitionedKey) -> int:
    return int.from_bytes(key[:PNR_BYTES], "big")


def strip_prefix(key: PartitionedKey) -> bytes:
    return key[PNR_BYTES:]


def split_key(key: PartitionedKey) -> tuple[int, bytes]:
    return pnr_of(key), key[PNR_BYTES:]


def compare(a: PartitionedKey, b: PartitionedKey) -> Ordering:
    if a < b:
        return Ordering.LESS
    if a > b:
        return Ordering.GREATER
    return Ordering.EQUAL
