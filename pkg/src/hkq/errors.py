"""Exception hierarchy.

Every error raised on purpose by the package derives from :class:`HkqError`,
which the CLI maps to exit code 1.
"""


class HkqError(ValueError):
    pass


class ParameterDomainError(HkqError):
    pass


class EmptySetError(HkqError):
    pass


class DegenerateInputError(HkqError):
    pass


class InsufficientDataError(HkqError):
    pass


class ConfigurationError(HkqError):
    pass


class DimensionError(HkqError):
    pass


class FeatureError(HkqError):
    """A per-statistic failure, tagged with the statistic that failed."""

    def __init__(self, statistic, cause):
        super().__init__(f"{statistic}: {cause}")
        self.statistic = statistic
        self.cause = cause


class NumericalAccuracyError(HkqError):
    def __init__(self, message, residual):
        super().__init__(f"{message} (residual {residual:.3e})")
        self.residual = residual


class NumericalError(HkqError):
    def __init__(self, message, batch_index=None):
        super().__init__(message if batch_index is None else f"{message} (batch {batch_index})")
        self.batch_index = batch_index


class TrainingFailureError(HkqError):
    def __init__(self, message, step):
        super().__init__(f"{message} at step {step}")
        self.step = step


class DegenerateTargetError(HkqError):
    pass


class TableBuildError(HkqError):
    pass


class FormatError(HkqError):
    def __init__(self, message, line=None, field=None):
        where = []
        if line is not None:
            where.append(f"line {line}")
        if field is not None:
            where.append(f"field {field!r}")
        super().__init__(f"{message} ({', '.join(where)})" if where else message)
        self.line = line
        self.field = field
