"""Selection-enhanced noisy-label training on small dense networks."""

from sentlab.errors import (
    ConfigError,
    ConsistencyError,
    DegenerateSelectionError,
    EvaluationError,
    NumericalError,
    ParseError,
    SchemaError,
    SentlabError,
    ShapeError,
    StateError,
)

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "ConsistencyError",
    "DegenerateSelectionError",
    "EvaluationError",
    "NumericalError",
    "ParseError",
    "SchemaError",
    "SentlabError",
    "ShapeError",
    "StateError",
]
