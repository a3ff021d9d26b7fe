"""Exception hierarchy.

Every error raised on purpose by the library derives from
:class:`ProjBankError`, so callers (and the CLI) can tell data problems
apart from programming errors.
"""


class ProjBankError(Exception):
    """Base class for all library errors."""


class FormatError(ProjBankError):
    """A file does not follow one of the binary formats."""


class BadMagic(FormatError):
    pass


class UnsupportedVersion(FormatError):
    pass


class ShapeMismatch(FormatError):
    pass


class NonFiniteValue(ProjBankError):
    def __init__(self, index, value=None):
        self.index = index
        self.value = value
        super().__init__(f"non-finite value {value!r} at index {index}")


class IoFailure(ProjBankError):
    pass


class TooManyClusters(ProjBankError):
    pass


class KTooLarge(ProjBankError):
    pass


class NotEnoughPairs(ProjBankError):
    pass


class NTooLarge(ProjBankError):
    pass


class DimensionMismatch(ProjBankError):
    pass


class FingerprintMismatch(ProjBankError):
    pass


class BitWidthMismatch(ProjBankError):
    pass


class NoRelevantItems(ProjBankError):
    def __init__(self, queries):
        self.queries = list(queries)
        super().__init__(f"queries without relevant gallery items: {self.queries[:10]}")


class TooManyPairs(ProjBankError):
    pass


class DegenerateSubspaceWarning(UserWarning):
    """All training samples coincide inside a subspace; a fixed unit vector is used."""
