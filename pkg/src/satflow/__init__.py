"""Finite-volume solvers for continuity equations with saturation mobility.

Explicit and implicit upwind schemes keep densities non-negative and the
total density below its saturation level; the gradient-flow schemes also
dissipate a discrete free energy.
"""
from .core import (
    Boundary,
    CflDriven,
    FixedDt,
    Grid1D,
    Grid2D,
    SaturationSpec,
    Scheme,
    SchemeConfig,
    SolverOptions,
    compute_gamma,
    cosine_saturation,
    linear_saturation,
    no_saturation,
    power_saturation,
    saturation_eval,
)
from .diagnostics import DiagnosticsSeries, error_norms, overlap_integral
from .gradientflow import EnergySpec, boltzmann, discrete_energy, porous_medium, quadratic
from .integration import Dynamics, StepReport, evolve, explicit_step, implicit_step, step_2d

__version__ = "0.1.0"

__all__ = [
    "Boundary", "CflDriven", "DiagnosticsSeries", "Dynamics", "EnergySpec", "FixedDt", "Grid1D",
    "Grid2D", "SaturationSpec", "Scheme", "SchemeConfig", "SolverOptions", "StepReport",
    "boltzmann", "compute_gamma", "cosine_saturation", "discrete_energy", "error_norms", "evolve",
    "explicit_step", "implicit_step", "linear_saturation", "no_saturation", "overlap_integral",
    "porous_medium", "power_saturation", "quadratic", "saturation_eval", "step_2d",
]
