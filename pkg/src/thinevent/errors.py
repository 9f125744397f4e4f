"""Exception hierarchy shared by every module in the package."""


class ThinEventError(Exception):
    """Base class for all package errors."""


class FormatError(ThinEventError):
    """A file does not conform to its on-disk layout."""


class MalformedHeader(FormatError):
    pass


class TruncatedRecord(FormatError):
    pass


class OutOfBounds(FormatError):
    pass


class NonMonotonicTime(FormatError):
    pass


class RejectedInvariant(ThinEventError):
    """A value violates its type invariants and cannot be written or used."""


class InvalidWindow(ThinEventError):
    pass


class DegenerateSpec(ThinEventError):
    pass


class InvalidTau(ThinEventError):
    pass


class InvalidConfig(ThinEventError):
    pass


class ShapeMismatch(ThinEventError):
    pass


class EmptyDataset(ThinEventError):
    pass


class EmptyInput(ThinEventError):
    pass


class DivergedLoss(ThinEventError):
    pass


class MissingModel(ThinEventError):
    pass
