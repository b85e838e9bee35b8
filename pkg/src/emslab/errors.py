"""Exception hierarchy. ``category`` is what the CLI prints before the message."""


class EmslabError(Exception):
    category = "error"
    exit_code = 1


class ParseError(EmslabError):
    category = "parse"
    exit_code = 3


class ValidationError(EmslabError, ValueError):
    category = "validation"
    exit_code = 3


class SchemaError(ValidationError):
    category = "schema"


class ArgumentError(EmslabError, ValueError):
    category = "argument"
    exit_code = 2


class LookupFailure(EmslabError, KeyError):
    category = "lookup"
    exit_code = 4

    def __str__(self):
        return str(self.args[0]) if self.args else ""


class ShapeError(EmslabError, ValueError):
    category = "shape"
    exit_code = 5


class UsageError(EmslabError, RuntimeError):
    category = "usage"
    exit_code = 2


class CheckpointError(EmslabError):
    category = "checkpoint"
    exit_code = 5


class TrainingDivergence(EmslabError, FloatingPointError):
    category = "divergence"
    exit_code = 6
