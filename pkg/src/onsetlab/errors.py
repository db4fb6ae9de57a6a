"""Exception hierarchy shared by all onsetlab modules."""


class OnsetLabError(Exception):
    """Base class for every error raised by onsetlab."""


class FormatError(OnsetLabError):
    """A file is not in the expected container or codec."""


class CorruptionError(OnsetLabError):
    """A file header promises more data than the payload holds."""


class ParseError(OnsetLabError):
    """A text file contains a token that cannot be parsed."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class DomainError(OnsetLabError, ValueError):
    """An input value lies outside the domain an operation accepts."""


class ParameterError(OnsetLabError, ValueError):
    """A combination of parameters cannot be satisfied."""


class ContractViolation(OnsetLabError, ValueError):
    """Shapes or lengths of the arguments are inconsistent."""


class UsageError(OnsetLabError, RuntimeError):
    """An object was used out of order (e.g. backward before forward)."""


class DataError(OnsetLabError, ValueError):
    """The supplied data set cannot support the requested operation."""


class DivergenceError(OnsetLabError, ArithmeticError):
    """Training produced a non-finite loss."""

    def __init__(self, epoch):
        super().__init__(f"non-finite loss in epoch {epoch}")
        self.epoch = epoch


class InfeasiblePhraseError(DomainError):
    """A phrase has fewer frames than syllables."""
