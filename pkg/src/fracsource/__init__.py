"""Forward simulation and moment-based source inversion for time-fractional
diffusion driven by fractional Brownian noise."""

__version__ = "0.1.0"

from .fbm import TimeGrid, sample_bm_increments, sample_fbm_circulant, sample_fbm_cholesky
from .fintegral import KernelParams, QuadratureError, WeightedFunction, second_moment_matrix
from .forward import Interval, Rectangle, SimConfig, SourceSpec, TimeProfile, simulate_ensemble
from .inverse import FactorPositivityError, compute_factors, instability_report, reconstruct
from .mlf import MLConvergenceError, ml_eval, ml_phi, mittag_leffler

__all__ = [
    "TimeGrid", "sample_bm_increments", "sample_fbm_circulant", "sample_fbm_cholesky",
    "KernelParams", "QuadratureError", "WeightedFunction", "second_moment_matrix",
    "Interval", "Rectangle", "SimConfig", "SourceSpec", "TimeProfile", "simulate_ensemble",
    "FactorPositivityError", "compute_factors", "instability_report", "reconstruct",
    "MLConvergenceError", "ml_eval", "ml_phi", "mittag_leffler",
]
