"""
Saturated drift-diffusion and the kink profile
==============================================

With mobility rho (1 - rho), diffusion D log rho and confinement C x^2 / 2,
mass above a critical value cannot all fit under a Gaussian.  The
steady state is flat at the saturation level up to a radius l, then decays.
"""
import numpy as np

from satflow import error_norms, evolve
from satflow.diagnostics import critical_mass, mass_of_l, solve_l_from_mass
from satflow.experiments import kink_problem

print(f"critical mass (1D, alpha = C = D = 1): {critical_mass():.6f}")
for M in (1.0, 1.66, 3.0):
    l, sub = solve_l_from_mass(M)
    print(f"M = {M:5.2f}: l = {l:.6f}{' (subcritical, half Gaussian)' if sub else ''}")
print(f"mass_of_l(1) = {mass_of_l(1.0):.6f}")

problem = kink_problem(1, M=1.66, num_cells=128)  # dx = dt = 2^-5 for a quick run
grid = problem.grid()
series = evolve(problem.initial(grid), problem.dynamics, grid, problem.config(), problem.final_time)
final = series.final_state
l1, l2, linf = error_norms(final, problem.exact, problem.final_time, grid)
print(f"t = {problem.final_time}: L1 {l1:.3e}, L2 {l2:.3e}, Linf {linf:.3e}")
print(f"max rho {final.max():.8f}, energy {series.energy[0]:.5f} -> {series.energy[-1]:.5f}")
plateau = grid.centers[final[0] > 0.99]
print(f"cells above 0.99 reach x = {plateau.max():.3f} (l = {problem.parameters['l']:.3f})")
print("steps with rising energy:", int(np.sum(np.diff(series.energy) > 0)))
