"""Exception hierarchy.

Every error carries the CLI exit code it maps to, so the command layer can
translate failures without a lookup table.
"""


class GeofairError(Exception):
    exit_code = 1


class ConfigError(GeofairError, ValueError):
    exit_code = 2


class MissingInputError(GeofairError, FileNotFoundError):
    exit_code = 3


class DataError(GeofairError, ValueError):
    """Bad or inconsistent input data."""

    exit_code = 4


class SchemaError(DataError):
    pass


class IntegrityError(DataError):
    pass


class ParseError(DataError):
    pass


class DomainError(DataError):
    pass


class DegenerateError(DataError):
    """A statistic is undefined for the given input (zero variance, empty group)."""


class DimensionError(DataError):
    pass


class CoverageError(DataError):
    pass


class ClassError(DataError):
    pass


class SingularityError(GeofairError, ArithmeticError):
    exit_code = 4


class FeasibilityError(DataError):
    pass


class UnknownGroupError(DataError):
    pass
