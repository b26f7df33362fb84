"""Exception hierarchy shared across the package."""


class MSMWError(Exception):
    """Base class for all package errors."""


class ShapeError(MSMWError, ValueError):
    """Arrays are not conformable for the requested operation."""


class ValidationError(MSMWError, ValueError):
    """A model specification is inconsistent with itself or the data."""


class RankConstraintError(ValidationError):
    pass


class FamilyMismatchError(ValidationError):
    pass


class PartitionMismatchError(ValidationError):
    pass


class ChainSettingsError(ValidationError):
    pass


class PriorError(ValidationError):
    pass


class ConditioningError(MSMWError, ArithmeticError):
    """A posterior precision matrix could not be factorized."""

    def __init__(self, message, iteration=None):
        if iteration is not None:
            message = f"{message} (iteration {iteration})"
        super().__init__(message)
        self.iteration = iteration


class UndefinedMetricError(MSMWError, ValueError):
    """A metric is undefined for the given inputs (zero norm, constant vector)."""


class DegenerateFoldError(MSMWError, ValueError):
    pass


class ConfigError(MSMWError, ValueError):
    pass


class DataLoadError(MSMWError, ValueError):
    """Base class for predictor/outcome file problems."""


class MissingCellError(DataLoadError):
    pass


class DuplicateKeyError(DataLoadError):
    pass


class UnmatchedSampleError(DataLoadError):
    pass


class NonNumericValueError(DataLoadError):
    pass


class HeaderError(DataLoadError):
    pass
