"""Exception hierarchy shared across the package.

The CLI maps these onto exit codes: configuration problems exit 2, data
problems exit 3, training divergence exits 4.
"""


class CruplError(Exception):
    """Base class for all package errors."""


class DimensionError(CruplError):
    """Array shapes are incompatible for the requested operation."""


class InvalidValueError(CruplError):
    """Input contains NaN or Inf where finite values are required."""


class DegenerateBatchError(CruplError):
    """Batch statistics are undefined (batch of one in training mode)."""


class PreconditionError(CruplError):
    """A required input (e.g. feature statistics) is missing."""


class ConfigError(CruplError):
    """Invalid or inconsistent configuration."""


class DataError(CruplError):
    """Base class for dataset ingestion and splitting problems."""


class ParseError(DataError):
    """Malformed CSV content; carries the offending line number."""

    def __init__(self, message: str, line: int | None = None):
        super().__init__(message)
        self.line = line


class SchemaError(DataError):
    """Dataset content does not match the declared schema."""


class StratificationError(DataError):
    """A class is too small to stratify across the requested splits."""


class JoinError(DataError):
    """Two files that should share sample ids do not."""


class DivergenceError(CruplError):
    """Training produced a non-finite loss or gradient."""

    def __init__(self, message: str, epoch: int | None = None):
        super().__init__(message)
        self.epoch = epoch


class CurriculumDivergenceError(DivergenceError):
    """Fine-tuning diverged; carries the iteration index and the last
    parameter snapshot that was still finite."""

    def __init__(self, message: str, iteration: int, last_good_params=None):
        super().__init__(message)
        self.iteration = iteration
        self.last_good_params = last_good_params
