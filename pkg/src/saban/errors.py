"""Exception hierarchy.

``SabanError`` subclasses signal bad user input (CLI exit status 1).
``InvariantViolation`` subclasses signal a broken internal guarantee
(CLI exit status 2).
"""


class SabanError(Exception):
    """Base class for user-facing input errors."""


class InvariantViolation(Exception):
    """Base class for internal invariant violations."""


# protein_vocab
class UnknownSymbol(SabanError):
    def __init__(self, symbol, position=None, alphabet="residue/geometry"):
        self.symbol = symbol
        self.position = position
        where = "" if position is None else f" at position {position}"
        super().__init__(f"unknown {alphabet} symbol {symbol!r}{where}")


class OddLength(SabanError):
    pass


class EmptySequence(SabanError):
    pass


# selfies_codec
class UnbalancedBracket(SabanError):
    def __init__(self, offset):
        self.offset = offset
        super().__init__(f"unbalanced bracket at offset {offset}")


class UnknownToken(SabanError):
    def __init__(self, text, offset=None):
        self.text = text
        self.offset = offset
        super().__init__(f"unknown SELFIES token {text!r}")


# embedding_store
class FormatError(SabanError):
    pass


class BadMagic(FormatError):
    pass


class DimMismatch(FormatError):
    pass


class TruncatedFile(FormatError):
    pass


class MissingColumn(SabanError):
    pass


class BadLabel(SabanError):
    pass


class MissingEntity(SabanError):
    pass


# tensor_core and model blocks
class ShapeMismatch(SabanError, ValueError):
    pass


class LengthMismatch(SabanError, ValueError):
    pass


class ZeroVector(SabanError, ValueError):
    pass


class NonFiniteError(InvariantViolation, FloatingPointError):
    pass


class NonFiniteLoss(NonFiniteError):
    pass


class NonFiniteGradient(NonFiniteError):
    pass


# trainer / metrics
class TooFewSamples(SabanError, ValueError):
    pass


class DegenerateLabels(SabanError, ValueError):
    pass


class ConfigError(SabanError, ValueError):
    pass
