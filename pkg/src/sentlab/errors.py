"""Exception hierarchy. Every error raised on purpose derives from SentlabError."""


class SentlabError(Exception):
    pass


class ConfigError(SentlabError, ValueError):
    """Invalid configuration value; ``field`` names the offending setting."""

    def __init__(self, field: str, message: str):
        self.field = field
        super().__init__(f"{field}: {message}")


class ShapeError(SentlabError, ValueError):
    pass


class NumericalError(SentlabError, ArithmeticError):
    def __init__(self, message: str, batch_id=None):
        self.batch_id = batch_id
        super().__init__(f"{message} (batch {batch_id})")


class StateError(SentlabError, RuntimeError):
    pass


class ConsistencyError(SentlabError, KeyError):
    def __init__(self, sample_id, message: str = "missing signal vector"):
        self.sample_id = sample_id
        super().__init__(f"{message} for sample {sample_id!r}")

    def __str__(self):
        return self.args[0]


class DegenerateSelectionError(SentlabError, ValueError):
    """Selection set contains a single class, so no selector can be trained."""


class SchemaError(SentlabError, ValueError):
    pass


class ParseError(SentlabError, ValueError):
    def __init__(self, line: int, message: str):
        self.line = line
        super().__init__(f"line {line}: {message}")


class EvaluationError(SentlabError, ValueError):
    pass
