"""Stochastic shell models of turbulence: simulation, stationary statistics and scaling analysis."""

from .grid import ShellGrid, apply_a_power, component, inner_product, norm_vs, wavenumber
from .integrator import BlowUpError, ModelSpec, StepScheme, Trajectory, simulate
from .noise import NoiseSpec, sample_increments, trace_q
from .nonlinearity import ModelKind, b_dyadic, b_goy, b_sabra, nonlinear_term
from .statistics import MomentAccumulator, StationaryEstimates

__version__ = "0.1.0"

__all__ = [
    "ShellGrid", "wavenumber", "component", "norm_vs", "apply_a_power", "inner_product",
    "ModelKind", "b_dyadic", "b_goy", "b_sabra", "nonlinear_term",
    "NoiseSpec", "sample_increments", "trace_q",
    "ModelSpec", "StepScheme", "Trajectory", "simulate", "BlowUpError",
    "MomentAccumulator", "StationaryEstimates",
]
