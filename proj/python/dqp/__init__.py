"""Python bindings for the distributed QP solver and its learned variants."""

from ._core import (
    SCHEMA_VERSION,
    ConfigError,
    DimensionError,
    IntegrityError,
    NumericError,
    adapt_rho,
    dqp_solve,
    generate,
    kl_bernoulli,
    kl_inverse,
    label,
    loss,
    optimality_gap,
    osqp_solve,
    pac_bound,
    penalty_sweep,
    progress_metric,
    sample_convergence_bound,
    train,
    unrolled_gaps,
)

__all__ = [
    "SCHEMA_VERSION",
    "ConfigError",
    "DimensionError",
    "IntegrityError",
    "NumericError",
    "adapt_rho",
    "dqp_solve",
    "generate",
    "kl_bernoulli",
    "kl_inverse",
    "label",
    "loss",
    "optimality_gap",
    "osqp_solve",
    "pac_bound",
    "penalty_sweep",
    "progress_metric",
    "sample_convergence_bound",
    "train",
    "unrolled_gaps",
]
