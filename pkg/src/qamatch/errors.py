"""Exception hierarchy shared by all qamatch modules."""


class QamatchError(Exception):
    """Base class for every error raised by this package."""


class DimensionError(QamatchError):
    """Tensor shapes are incompatible with the requested operation."""


class ContractError(QamatchError):
    """A documented precondition of an operation was violated."""


class NumericsError(QamatchError):
    """An operation produced a non-finite value (NaN or Inf)."""


class ConfigError(QamatchError):
    """A configuration value violates a model or run invariant."""


class InputError(QamatchError):
    """User-supplied input (CLI argument, file, request) is invalid."""


class IntegrityError(QamatchError):
    """Internal data is inconsistent (e.g. an id outside its table)."""


class DatasetError(QamatchError):
    """A dataset violates its invariants (dangling links, duplicates)."""


class PersistenceError(QamatchError):
    """Writing an artifact to disk failed."""


class CheckpointError(QamatchError):
    """A checkpoint file is corrupt, mismatched, or unsupported."""
