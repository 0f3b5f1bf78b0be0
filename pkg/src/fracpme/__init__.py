"""Spectral solver and estimate checker for the porous medium equation with a
spectral fractional Laplacian on a bounded box."""

__version__ = "0.1.0"

from .errors import FracPMEError
from .spectral import (DomainSpec, EigenBasis, Field, FractionalOperator, build_basis,
                       phi1_profile, transform)
from .solver import SolverConfig, Trajectory, exact_linear, solve, step
from .elliptic import EllipticConfig, giant_trajectory, solve_elliptic
from .green import GreenEvaluator, fit_envelopes, green_eval
from .constants import ConstantSet, evaluate_formulas, fit_empirical, theta

__all__ = [
    "FracPMEError", "DomainSpec", "EigenBasis", "Field", "FractionalOperator",
    "build_basis", "phi1_profile", "transform", "SolverConfig", "Trajectory",
    "exact_linear", "solve", "step", "EllipticConfig", "giant_trajectory",
    "solve_elliptic", "GreenEvaluator", "fit_envelopes", "green_eval", "ConstantSet",
    "evaluate_formulas", "fit_empirical", "theta",
]
