"""Voice conversion through dual-flow training with a frozen speaker judge,
plus the feature pipeline, evaluation tooling, and listening-test backend
around it."""

__version__ = "0.1.0"
