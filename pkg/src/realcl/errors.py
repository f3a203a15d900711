"""Exception hierarchy.

Validation problems derive from ``ValidationError`` (CLI exit code 1),
numerical breakdowns from ``NumericalError`` (exit code 2).
"""


class RealCLError(Exception):
    pass


class ValidationError(RealCLError):
    pass


class NumericalError(RealCLError):
    pass


class DegenerateNorm(NumericalError):
    pass


class NonFiniteLoss(NumericalError):
    pass


class DimensionMismatch(ValidationError):
    pass


# Manifests use the shorter name.
DimMismatch = DimensionMismatch


class InvalidShape(ValidationError):
    pass


class ParseError(ValidationError):
    pass


class SchemaError(ValidationError):
    pass


class InsufficientData(ValidationError):
    pass


class ConfigError(ValidationError):
    def __init__(self, message, key_path=None):
        self.key_path = key_path
        if key_path:
            message = f"{key_path}: {message}"
        super().__init__(message)


class NoIntraClassCandidates(ValidationError):
    pass


class EmptyBatch(ValidationError):
    pass


class EmptySplit(ValidationError):
    pass


class SingleClass(ValidationError):
    pass


class UnknownCommand(ValidationError):
    pass
