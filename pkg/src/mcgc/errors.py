"""Exception hierarchy. Anything deriving from ValidationError maps to CLI exit code 1."""


class ValidationError(ValueError):
    pass


class ShapeError(ValidationError):
    pass


class SchemaError(ValidationError):
    pass


class FormatError(ValidationError):
    pass


class UnknownAddressError(ValidationError, KeyError):
    def __str__(self):
        return Exception.__str__(self)


class NumericalError(ArithmeticError):
    pass


class TrainingError(RuntimeError):
    pass
