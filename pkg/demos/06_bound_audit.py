"""
Randomized bound audit
======================

Random admissible data on small grids, random velocities and saturations,
every scheme.  Explicit schemes run at 0.9 and 1.0 times their CFL bound,
implicit ones at dt = dx and dt = 10 dx.
"""
from collections import Counter

from satflow.experiments import random_bound_trials

outcomes = random_bound_trials(seed=1, trials=60, max_cells=32)
by_kind = Counter(o.label.split(", ")[0].split(": ")[1] for o in outcomes)
failed = [o for o in outcomes if not o.passed()]
print("trials per scheme:", dict(by_kind))
print(f"worst min rho {min(o.min_density for o in outcomes):.3e}")
print(f"worst sigma - alpha {max(o.max_sigma - o.alpha for o in outcomes):.3e}")
print(f"{len(outcomes) - len(failed)}/{len(outcomes)} trials kept 0 <= rho and sigma <= alpha")
