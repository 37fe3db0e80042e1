"""Exception types shared across the package."""


class RecoveryForgeError(Exception):
    """Base class for every error raised by this package."""


class MalformedGraphError(RecoveryForgeError):
    pass


class NonConvergenceError(RecoveryForgeError):
    def __init__(self, message: str, residual: float | None = None):
        super().__init__(message)
        self.residual = residual


class LengthMismatchError(RecoveryForgeError):
    pass


class EmptyInputError(RecoveryForgeError):
    pass


class DimensionMismatchError(RecoveryForgeError):
    pass


class TooFewSamplesError(RecoveryForgeError):
    pass


class NonFiniteInputError(RecoveryForgeError):
    pass


class EmptyComponentError(RecoveryForgeError):
    pass


class DegenerateLabelsError(RecoveryForgeError):
    pass


class CollectionTimeoutError(RecoveryForgeError):
    pass


class NonFiniteRewardsError(RecoveryForgeError):
    pass


class OracleFailureError(RecoveryForgeError):
    def __init__(self, message: str, theta=None):
        super().__init__(message)
        self.theta = theta


class EmptyDatasetError(RecoveryForgeError):
    pass


class InvalidProbabilityError(RecoveryForgeError):
    pass


class InvalidDfError(RecoveryForgeError):
    pass


class InsufficientHistoryError(RecoveryForgeError):
    pass


class InvalidThetaError(RecoveryForgeError):
    pass


class InvalidParameterError(RecoveryForgeError):
    pass


class SchemaError(RecoveryForgeError):
    pass


class InvariantViolationError(RecoveryForgeError):
    pass


class ConfigError(RecoveryForgeError):
    pass
