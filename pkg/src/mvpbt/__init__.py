"""MV-PBT: a multi-version partitioned B+-Tree key-value engine."""

from .engine import Engine, EngineConfig, MergeCursor, Transaction, TxState
from .errors import (
    Busy, CorruptPage, DuplicateRecord, EngineError, FilterNotBuilt, InvalidArgument, OverlappingJob,
    StalePartition, StorageFull, SwitchInProgress, TraceParseError, TransactionStateError, UseAfterFree,
)
from .records import RecordType, Snapshot, VersionRecord

__all__ = [
    "Engine", "EngineConfig", "MergeCursor", "Transaction", "TxState",
    "RecordType", "Snapshot", "VersionRecord",
    "EngineError", "InvalidArgument", "StalePartition", "DuplicateRecord", "SwitchInProgress",
    "StorageFull", "CorruptPage", "UseAfterFree", "Busy", "FilterNotBuilt", "TransactionStateError",
    "OverlappingJob", "TraceParseError",
]
