"""Asymptotic variance and optimal biasing for overdamped Langevin importance sampling."""

from ._langbias import (
    Expression,
    Grid,
    GridMismatch,
    NumericalError,
    ParseError,
    asym_variance,
    functional_gradient,
    iid_variance,
    minimize_theta,
    optimal_density_1d,
    optimize,
    philox,
    regularize_density,
    run_cli,
    sigma_star_1d,
    subsampled_variance,
)

__all__ = [
    "Expression",
    "Grid",
    "GridMismatch",
    "NumericalError",
    "ParseError",
    "asym_variance",
    "functional_gradient",
    "iid_variance",
    "minimize_theta",
    "optimal_density_1d",
    "optimize",
    "philox",
    "regularize_density",
    "run_cli",
    "sigma_star_1d",
    "subsampled_variance",
]
