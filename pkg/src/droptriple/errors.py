"""Exception hierarchy shared by every module."""


class DropTripleError(Exception):
    """Base class for all package errors."""


class ZeroVector(DropTripleError, ValueError):
    pass


class DimensionMismatch(DropTripleError, ValueError):
    pass


class NonUnitRows(DropTripleError, ValueError):
    pass


class InvalidRange(DropTripleError, ValueError):
    pass


class OddDimension(DropTripleError, ValueError):
    pass


class TokenOutOfRange(DropTripleError, ValueError):
    pass


class StaleCache(DropTripleError, RuntimeError):
    """Backward called with a cache that no longer matches the parameters."""


class InvalidConfig(DropTripleError, ValueError):
    def __init__(self, field: str, message: str):
        self.field = field
        super().__init__(f"{field}: {message}")


class InvalidBatch(DropTripleError, ValueError):
    pass


class ShapeMismatch(DropTripleError, ValueError):
    pass


class EmptySplit(DropTripleError, ValueError):
    pass


class MissingRelevance(DropTripleError, ValueError):
    pass


class EmptyRanks(DropTripleError, ValueError):
    pass


class MissingK(DropTripleError, KeyError):
    pass


class FormatVersionMismatch(DropTripleError, ValueError):
    def __init__(self, found, expected):
        self.found = found
        self.expected = expected
        super().__init__(f"format version {found!r} is not supported (expected {expected!r})")


class CorruptRecord(DropTripleError, ValueError):
    def __init__(self, index, reason: str):
        self.index = index
        super().__init__(f"record {index}: {reason}")
