"""Least favorable additive noise for Bayesian prediction."""

from .conditional import (
    PosteriorMap,
    dual_penalty,
    envelope_gradient,
    objective_phi,
    posterior_mean,
    prediction_error,
)
from .distributions import (
    GridPmf,
    MomentSpec,
    center,
    convolve,
    example_pmf,
    make_grid_pmf,
    moments,
)
from .certificate import DualCertificate, duality_gap, fit_certificate, verify_certificate
from .solver import SolveReport, SolverConfig, lp_oracle, solve
from .closedform import BinomialSolution, binomial_small_eps, critical_point, iid_solution, levy_solution_poisson
from .experiments import coin_counterexample, monotonicity_curve, reproduce_figure
from .io import FormatError, read_pmf, write_pmf

__version__ = "0.1.0"

__all__ = [
    "BinomialSolution",
    "DualCertificate",
    "FormatError",
    "GridPmf",
    "MomentSpec",
    "PosteriorMap",
    "SolveReport",
    "SolverConfig",
    "binomial_small_eps",
    "center",
    "coin_counterexample",
    "convolve",
    "critical_point",
    "dual_penalty",
    "duality_gap",
    "envelope_gradient",
    "example_pmf",
    "fit_certificate",
    "iid_solution",
    "levy_solution_poisson",
    "lp_oracle",
    "make_grid_pmf",
    "moments",
    "monotonicity_curve",
    "objective_phi",
    "posterior_mean",
    "prediction_error",
    "read_pmf",
    "reproduce_figure",
    "solve",
    "verify_certificate",
    "write_pmf",
]
