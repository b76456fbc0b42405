"""Exception hierarchy.

Every error raised by the library derives from :class:`LifetestError`.  The CLI
maps :class:`DataError` subclasses to exit status 3 and :class:`ModelError`
subclasses to exit status 4.
"""


class LifetestError(Exception):
    """Base class for all library errors."""


class DataError(LifetestError):
    """Input data is malformed, incomplete or inconsistent."""


class ModelError(LifetestError):
    """A model cannot be trained, found or applied."""


# core model
class NoMatch(DataError):
    pass


class Ambiguous(DataError):
    pass


class UnitMismatch(DataError):
    pass


# numerics
class TooFewPoints(DataError):
    pass


class NonMonotoneX(DataError):
    pass


class GridOutOfDomain(DataError):
    pass


class LengthMismatch(DataError):
    pass


class MapeUndefined(DataError):
    pass


class R2Undefined(DataError):
    pass


class ConstantInput(DataError):
    pass


# forest
class EmptyInput(DataError):
    pass


class NonFiniteInput(DataError):
    pass


class DimensionMismatch(ModelError):
    pass


class TooFewSamples(DataError):
    pass


# sisso
class GridMismatch(DataError):
    pass


class ConstantTarget(DataError):
    pass


class EmptyFeasibleSet(ModelError):
    pass


# pcdp / lpalt
class InsufficientRange(DataError):
    pass


class FrequencyMissing(DataError):
    pass


class FrequencyGridMismatch(DataError):
    pass


class NoTrainingRows(ModelError):
    pass


class ModelMissing(ModelError):
    pass


class NoGroundTruth(DataError):
    pass


class MissingT1Indicator(DataError):
    pass


class ZeroT2Time(DataError):
    pass


# data_io
class ParseError(DataError):
    def __init__(self, path, message, line=None, column=None):
        self.path = str(path)
        self.line = line
        self.column = column
        where = self.path
        if line is not None:
            where += f":{line}"
            if column is not None:
                where += f":{column}"
        super().__init__(f"{where}: {message}")


class SchemaError(DataError):
    pass


class ValidationError(DataError):
    def __init__(self, violations):
        self.violations = list(violations)
        lines = [str(v) for v in self.violations[:10]]
        more = len(self.violations) - len(lines)
        if more > 0:
            lines.append(f"... and {more} more")
        super().__init__("invalid collection:\n  " + "\n  ".join(lines))


class ConfigError(DataError):
    pass


class UnknownId(DataError):
    pass


def reject_unknown_keys(d: dict, known, what: str) -> None:
    """Raise ConfigError if ``d`` has keys outside ``known``."""
    unknown = set(d) - set(known)
    if unknown:
        raise ConfigError(f"unknown {what} keys: {sorted(unknown)}")
