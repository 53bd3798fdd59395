"""
Freezing in place
=================

Two species share a quadratic pressure but feel different confinements, so
without saturation they segregate completely.  With psi = 1 - sigma the
saturated regions block the exchange and the initial mixing freezes.
"""
from satflow import evolve, overlap_integral
from satflow.experiments import freeze_problem

for saturated in (True, False):
    problem = freeze_problem(1, with_saturation=saturated)
    grid = problem.grid()
    rho0 = problem.initial(grid)
    series = evolve(rho0, problem.dynamics, grid, problem.config(), problem.final_time)
    rho, eta = series.final_state
    print(f"{'saturated' if saturated else 'psi = 1  '}: overlap {overlap_integral(rho0[0], rho0[1], grid):.4f}"
          f" -> {overlap_integral(rho, eta, grid):.4f}, max sigma {max(series.max_sigma):.4f}")

# the datum exactly as printed has sigma = 1.6 at the origin and is refused
try:
    literal = freeze_problem(1, literal_datum=True)
    literal.initial(literal.grid())
except ValueError as exc:
    print("literal datum:", exc)
