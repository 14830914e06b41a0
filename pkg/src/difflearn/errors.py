"""Exception types raised across the simulator."""


class DifflearnError(Exception):
    """Base class for all errors raised by this package."""


# -- topology ----------------------------------------------------------------

class InvalidAgentIdError(DifflearnError):
    """An agent id is out of range for the topology."""


class SelfLoopError(DifflearnError):
    """An edge connects an agent to itself."""


class DisconnectedGraphError(DifflearnError):
    """The agent graph is not connected."""


class GenerationFailedError(DifflearnError):
    """Random topology generation exhausted its attempt budget."""


# -- data --------------------------------------------------------------------

class BadMagicError(DifflearnError):
    """An IDX file does not start with the expected magic number."""


class CountMismatchError(DifflearnError):
    """Image and label files disagree on the number of samples."""


class TruncatedFileError(DifflearnError):
    """An IDX file ended before the declared payload."""


class InsufficientSamplesError(DifflearnError):
    """The sample pool cannot fill a shard under the given restrictions."""


class EmptyShardError(DifflearnError):
    """A batch sampler was created over an empty shard."""


# -- model / rules -----------------------------------------------------------

class DimensionMismatchError(DifflearnError):
    """Vector or feature dimensions do not agree."""


class NonFiniteValueError(DifflearnError):
    """A loss or gradient evaluated to NaN or infinity."""


class EmptyNeighborhoodError(DifflearnError):
    """A combination rule was evaluated over an empty neighbor list."""


class NonpositiveSizeError(DifflearnError):
    """A shard size used in a weight rule is zero or negative."""


class NonpositiveStepSizeError(DifflearnError):
    """A step size used in gradient reconstruction is zero or negative."""


class KeyMismatchError(DifflearnError):
    """Per-neighbor maps do not cover the same agent ids."""


# -- metrics / persistence ---------------------------------------------------

class SchemaVersionMismatchError(DifflearnError):
    """A record file carries an unknown header or schema version."""


class FingerprintMismatchError(DifflearnError):
    """Records aggregated together were produced by different configs."""


# -- cli ---------------------------------------------------------------------

class ValidationError(DifflearnError):
    """A config field failed validation."""

    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field


class MissingDataError(DifflearnError):
    """A required dataset file is absent (downloads are never automatic)."""
