"""
Manufactured solutions for SKT cross diffusion
==============================================

The SKT system is solved on the periodic square with source terms chosen so
that rho = (1 + sin(x + t)) / 4 and eta = (1 + cos(y + t)) / 4 is exact.
Halving dx and dt should halve the error.
"""
from satflow import evolve
from satflow.diagnostics import convergence_study
from satflow.experiments import get_problem, with_resolution

for name in ("skt", "skt-saturated"):
    problem = get_problem(name)

    def solve(k):
        cells, dt = problem.refinement(k)
        p = with_resolution(problem, cells, dt)
        grid = p.grid()
        series = evolve(p.initial(grid), p.dynamics, grid, p.config(), p.final_time)
        return series.final_state, grid, p.final_time, dt

    table = convergence_study(solve, range(1, 6), problem.exact)
    print(name)
    print(table.format())
    print()
