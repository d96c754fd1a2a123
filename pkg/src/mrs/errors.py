"""Exception hierarchy shared by the library and the command line."""


class MRSError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(MRSError):
    """Invalid configuration or hyperparameters."""


class DataError(MRSError):
    """Input data could not be ingested or is inconsistent."""


class SchemaMismatchError(DataError):
    """A row, rule or model does not conform to the schema it is used with."""


class ModelFormatError(DataError):
    """A model file is malformed or refers to unknown features/values."""


class InvariantError(MRSError):
    """An internal consistency check failed."""


class SearchSpaceTooLarge(MRSError):
    """Exhaustive enumeration refused because the space exceeds the ceiling."""

    def __init__(self, size: int, ceiling: int):
        super().__init__(f"search space has {size} states, ceiling is {ceiling}")
        self.size = size
        self.ceiling = ceiling
