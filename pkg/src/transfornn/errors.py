"""Exception hierarchy shared by every module of the package."""


class TransfoRnnError(Exception):
    """Base class for all errors raised by this package."""


class DimensionError(TransfoRnnError, ValueError):
    pass


class DegenerateRowError(TransfoRnnError, ValueError):
    """A softmax row had no unmasked entry."""


class ContractError(TransfoRnnError, RuntimeError):
    pass


class ConfigError(TransfoRnnError, ValueError):
    pass


class StateError(TransfoRnnError, ValueError):
    """Recurrent carry does not match the model configuration."""


class DataError(TransfoRnnError, ValueError):
    pass


class FormatError(TransfoRnnError, ValueError):
    """A text file (vocab, reference, N-best) violates its line format."""

    def __init__(self, message, path=None, lineno=None):
        where = ""
        if path is not None:
            where = f"{path}:"
        if lineno is not None:
            where += f"{lineno}:"
        super().__init__(f"{where} {message}" if where else message)
        self.path = path
        self.lineno = lineno


class CheckpointError(TransfoRnnError, ValueError):
    pass


class BadMagicError(CheckpointError):
    pass


class VersionError(CheckpointError):
    pass


class TruncatedCheckpointError(CheckpointError):
    pass


class ShapeMismatchError(CheckpointError):
    pass


class TrainingDiverged(TransfoRnnError, FloatingPointError):
    """Raised when a non-finite gradient reaches the optimizer."""
