"""Exception hierarchy shared by all engine layers."""


class EngineError(Exception):
    pass


class InvalidArgument(EngineError, ValueError):
    pass


class StalePartition(EngineError):
    """Raised when an insertion carries a partition number that was switched away."""

    def __init__(self, held: int, current: int):
        super().__init__(f"partition {held} is no longer mutable (current {current})")
        self.held = held
        self.current = current


class DuplicateRecord(EngineError):
    pass


class SwitchInProgress(EngineError):
    pass


class StorageFull(EngineError):
    pass


class CorruptPage(EngineError):
    def __init__(self, page_id: int, reason: str = "checksum mismatch"):
        super().__init__(f"page {page_id}: {reason}")
        self.page_id = page_id


class UseAfterFree(EngineError):
    def __init__(self, page_id: int):
        super().__init__(f"page {page_id} has been freed")
        self.page_id = page_id


class Busy(EngineError):
    """An active cursor pins the range an operation wants to remove."""


class FilterNotBuilt(EngineError):
    pass


class TransactionStateError(EngineError):
    pass


class OverlappingJob(EngineError):
    pass


class TraceParseError(EngineError):
    def __init__(self, lineno: int, line: str):
        super().__init__(f"line {lineno}: malformed trace record {line!r}")
        self.lineno = lineno
