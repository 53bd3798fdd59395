"""
Cell-cell adhesion
==================

Two cell populations with quadratic self and cross attraction.  The
complete-engulfment coefficients make eta surround rho.  The run is short
and coarse; the energy must decrease at every step.
"""
import numpy as np

from satflow import evolve, overlap_integral
from satflow.experiments import Engulfment, adhesion_problem, with_resolution

for engulfment in Engulfment:
    problem = with_resolution(adhesion_problem(engulfment, num_cells=24), final_time=6.0)
    grid = problem.grid()
    series = evolve(problem.initial(grid), problem.dynamics, grid, problem.config(), problem.final_time)
    energy = np.asarray(series.energy)
    rho, eta = series.final_state
    X, Y = grid.mesh()
    centre = lambda f: (np.sum(f * X) / f.sum(), np.sum(f * Y) / f.sum())
    print(f"{engulfment.value}: energy {energy[0]:.5f} -> {energy[-1]:.5f}, "
          f"largest increase {np.diff(energy).max():.2e}, max sigma {max(series.max_sigma):.4f}")
    print(f"  centres rho {np.round(centre(rho), 3)}, eta {np.round(centre(eta), 3)}, "
          f"overlap {overlap_integral(rho, eta, grid):.4f}")
