"""Exception hierarchy.

Errors fall into three families that the CLI maps to exit codes:
configuration (2), data (3) and numerical (4).
"""


class PrefRankError(Exception):
    pass


class ConfigError(PrefRankError):
    pass


class DataError(PrefRankError):
    pass


class NumericalError(PrefRankError):
    pass


class IngestionError(DataError):
    pass


class InvalidPairError(DataError, ValueError):
    pass


class DegenerateRankingError(DataError, ValueError):
    pass


class DegenerateLabelsError(DataError, ValueError):
    pass


class InvalidPropensityError(DataError, ValueError):
    pass


class InvalidWeightError(DataError, ValueError):
    pass


class DimensionError(DataError, ValueError):
    pass


class SchemaVersionError(DataError):
    pass


class NoEvaluableUsersError(DataError, ValueError):
    pass


class DegenerateConfigError(ConfigError, ValueError):
    pass


class DivergenceError(NumericalError):
    pass
