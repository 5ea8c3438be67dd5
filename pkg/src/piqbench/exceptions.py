"""Exception hierarchy shared by all piqbench modules."""


class PiqError(Exception):
    """Base class for every error raised by piqbench."""


class ParseError(PiqError, ValueError):
    """A document or file could not be parsed."""


class SchemaError(PiqError, ValueError):
    """A task schema violates the taxonomy invariants."""


class FormatError(PiqError, ValueError):
    """A binary or tabular file does not match its declared layout."""


class DimensionMismatch(PiqError, ValueError):
    pass


class LengthMismatch(PiqError, ValueError):
    pass


class RangeError(PiqError, ValueError):
    pass


class IndexOutOfRange(PiqError, IndexError):
    pass


class EmptyInput(PiqError, ValueError):
    pass


class DegenerateQuery(PiqError, ValueError):
    """A query has no relevant gallery item and cannot be scored."""


class EmptyQuerySet(PiqError, ValueError):
    pass


class EmptyGroundTruthSet(PiqError, ValueError):
    pass


class EmptyHistogram(PiqError, ValueError):
    pass


class ImageDecodeError(PiqError, ValueError):
    pass


class TooSmall(PiqError, ValueError):
    pass


class ZeroRow(PiqError, ValueError):
    pass


class NotUnit(PiqError, ValueError):
    pass


class BatchTooSmall(PiqError, ValueError):
    pass


class NoValidTriplet(PiqError, ValueError):
    pass


class TooFewDims(PiqError, ValueError):
    pass


class UnknownView(PiqError, KeyError):
    pass


class NotEnoughIdentities(PiqError, ValueError):
    pass


class InfeasibleSeparation(PiqError, ValueError):
    pass


class TooLarge(PiqError, ValueError):
    pass
