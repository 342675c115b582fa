"""Exception hierarchy.

Every error raised on purpose by the package derives from :class:`InkSegError`
and carries a short ``kind`` used by the CLI for its machine-parsable prefix.
"""


class InkSegError(Exception):
    kind = "error"


class ParseError(InkSegError):
    kind = "parse"

    def __init__(self, message, line=None, column=None):
        if line is not None:
            message = f"{message} (line {line}, column {column})"
        super().__init__(message)
        self.line = line
        self.column = column


class SchemaError(InkSegError):
    kind = "schema"


class ValidationError(InkSegError):
    kind = "validation"


class InputError(InkSegError):
    kind = "input"


class ConfigError(InkSegError):
    kind = "config"


class UsageError(InkSegError):
    kind = "usage"


class DimensionError(InkSegError):
    kind = "dimension"


class ParameterError(InkSegError):
    kind = "parameter"


class CapacityError(InkSegError):
    kind = "capacity"


class ScorerError(InkSegError):
    kind = "scorer"


class DivergenceError(InkSegError):
    kind = "divergence"
