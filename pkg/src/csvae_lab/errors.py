"""Exception hierarchy shared across the package.

The CLI maps these onto exit codes: ConfigError -> 2, DataError -> 3,
NumericalError -> 4. Plain ValueError is reserved for programming errors
(bad shapes, wrong model kind) that should never escape a correct caller.
"""


class CsvaeLabError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(CsvaeLabError):
    """Malformed or inconsistent run configuration."""


class DataError(CsvaeLabError):
    """Dataset or checkpoint files that cannot be read or used."""


class DatasetMagicError(DataError):
    """File does not start with the expected magic bytes."""


class DatasetVersionError(DataError):
    """File declares a format version this code does not understand."""


class DatasetTruncatedError(DataError):
    """File ends before the declared payload is complete."""


class DatasetChecksumError(DataError):
    """Stored CRC32 does not match the file contents."""


class NumericalError(CsvaeLabError):
    """Non-finite values or diverging optimization."""


class NonFiniteTensorError(NumericalError):
    """A tensor involved in a computation contains NaN or Inf."""


class TrainingDivergedError(NumericalError):
    """Training produced a non-finite loss."""

    def __init__(self, epoch: int, message: str = ""):
        self.epoch = epoch
        super().__init__(message or f"training diverged at epoch {epoch}")
