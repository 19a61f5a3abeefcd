"""Categorical fitted distributional iteration: losses, projections, target
decomposition and the experiment runner."""

from ._fzilab import (
    ConfigError,
    Error,
    InfeasibleError,
    NumericError,
    ParameterError,
    ShapeError,
    SizeError,
    SupportGrid,
    __version__,
    categorical_gradient,
    categorical_loss,
    cramer_distance,
    decompose,
    max_stable_step,
    minimal_epsilon,
    project,
    run,
    softmax,
    validate,
    value_iteration,
    wasserstein1_distance,
)

__all__ = [
    "ConfigError",
    "Error",
    "InfeasibleError",
    "NumericError",
    "ParameterError",
    "ShapeError",
    "SizeError",
    "SupportGrid",
    "categorical_gradient",
    "categorical_loss",
    "cramer_distance",
    "decompose",
    "max_stable_step",
    "minimal_epsilon",
    "project",
    "run",
    "softmax",
    "validate",
    "value_iteration",
    "wasserstein1_distance",
]
