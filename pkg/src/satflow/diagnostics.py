"""Error norms, invariant audits, convergence tables and analytic reference states."""
from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq
from scipy.special import erfcx

from .core import total_mass
from .gradientflow import discrete_energy


@dataclass
class DiagnosticsSeries:
    """Per-step scalar diagnostics of a run; entry 0 is the initial state."""

    times: list = field(default_factory=list)
    mass: list = field(default_factory=list)
    min_density: list = field(default_factory=list)
    max_density: list = field(default_factory=list)
    max_sigma: list = field(default_factory=list)
    energy: list = field(default_factory=list)
    iterations: list = field(default_factory=list)
    final_state: np.ndarray | None = None
    aborted: str | None = None

    def record(self, t, rho, grid, energy_spec=None, iterations=0):
        self.times.append(float(t))
        self.mass.append(total_mass(rho, grid))
        self.min_density.append(float(rho.min()))
        self.max_density.append(float(rho.max()))
        self.max_sigma.append(float(rho.sum(axis=0).max()))
        if energy_spec is not None:
            self.energy.append(discrete_energy(rho, energy_spec, grid))
        self.iterations.append(int(iterations))

    @property
    def mass_per_species(self):
        """Array of shape ``(P, steps + 1)``."""
        return np.array(self.mass).T

    @property
    def mass_array(self):
        return np.array(self.mass)

    def __len__(self):
        return len(self.times)

    def columns(self):
        """Column names of :meth:`rows`."""
        P = len(self.mass[0])
        names = ["t"] + [f"mass_{p + 1}" for p in range(P)] + ["min_rho", "max_rho", "max_sigma"]
        return names + (["energy"] if self.energy else [])

    def rows(self):
        for n, t in enumerate(self.times):
            row = [t, *self.mass[n], self.min_density[n], self.max_density[n], self.max_sigma[n]]
            if self.energy:
                row.append(self.energy[n])
            yield row


# -- audits -------------------------------------------------------------------


@dataclass
class AuditResult:
    name: str
    passed: bool
    worst: float
    detail: str = ""

    def __str__(self):
        status = "PASS" if self.passed else "FAIL"
        return f"{status} {self.name}: worst {self.worst:.3e} {self.detail}".rstrip()


def audit_bounds(series, alpha=math.inf, tol=1e-12):
    """``min rho >= -tol`` and ``max sigma <= alpha + tol`` at every recorded step."""
    low = min(series.min_density)
    high = max(series.max_sigma) - alpha if math.isfinite(alpha) else -math.inf
    worst = max(-low, high)
    return AuditResult("bounds", bool(low >= -tol and high <= tol), worst,
                       f"(min rho {low:.3e}, max sigma {max(series.max_sigma):.6g})")


def audit_mass(series, rtol=1e-10):
    """Per-species mass equal to its initial value to ``rtol`` relative."""
    m = series.mass_array
    scale = np.maximum(np.abs(m[0]), np.finfo(float).tiny)
    drift = float(np.max(np.abs(m - m[0]) / scale))
    return AuditResult("mass", drift <= rtol, drift)


def audit_energy(series, tol=1e-10):
    """``E[n+1] <= E[n] + tol (1 + |E[n]|)`` for every step."""
    e = np.asarray(series.energy)
    if e.size < 2:
        return AuditResult("energy", True, 0.0, "(no steps)")
    excess = np.diff(e) / (1 + np.abs(e[:-1]))
    worst = float(excess.max())
    return AuditResult("energy", worst <= tol, worst)


# -- errors and convergence ------------------------------------------------------


def error_norms(numerical, reference, t, grid):
    """``(L1, L2, Linf)`` of ``numerical - reference(t, *centres)`` over all species."""
    ref = np.asarray(reference(t, *grid.mesh()), dtype=float)
    diff = np.abs(np.asarray(numerical, dtype=float) - ref)
    dv = grid.cell_volume
    return float(diff.sum() * dv), float(np.sqrt((diff**2).sum() * dv)), float(diff.max())


@dataclass
class ConvergenceTable:
    resolutions: list = field(default_factory=list)  # (dx, dt)
    errors: list = field(default_factory=list)  # (L1, L2, Linf)

    @property
    def observed_orders(self):
        """``log2(e_k / e_{k+1})`` per norm between successive rows, shape ``(rows - 1, 3)``."""
        e = np.asarray(self.errors, dtype=float)
        if len(e) < 2:
            return np.zeros((0, 3))
        dx = np.asarray(self.resolutions, dtype=float)[:, 0]
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.log(e[:-1] / e[1:]) / np.log(dx[:-1, None] / dx[1:, None])

    def format(self):
        lines = [f"{'dx':>12} {'dt':>12} {'L1':>12} {'L2':>12} {'Linf':>12} {'order L1':>9}"]
        orders = self.observed_orders
        for n, ((dx, dt), (e1, e2, ei)) in enumerate(zip(self.resolutions, self.errors)):
            order = f"{orders[n - 1, 0]:9.3f}" if n else " " * 9
            lines.append(f"{dx:12.5e} {dt:12.5e} {e1:12.5e} {e2:12.5e} {ei:12.5e} {order}")
        return "\n".join(lines)


def convergence_study(solve, resolutions, reference, threads=None):
    """Run ``solve(resolution) -> (field, grid, t, dt)`` per resolution and tabulate errors.

    Rows are independent and run on up to ``threads`` worker threads
    (default ``SATFLOW_THREADS`` or 1).
    """
    resolutions = list(resolutions)
    if len(resolutions) < 2:
        raise ValueError("a convergence study needs at least two resolutions")
    if threads is None:
        threads = int(os.environ.get("SATFLOW_THREADS", "1"))

    def row(resolution):
        values, grid, t, dt = solve(resolution)
        dx = grid.cell_size if grid.ndim == 1 else grid.grid_x.cell_size
        return (dx, dt), error_norms(values, reference, t, grid)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            rows = list(pool.map(row, resolutions))
    else:
        rows = [row(r) for r in resolutions]
    table = ConvergenceTable()
    for res, err in rows:
        table.resolutions.append(res)
        table.errors.append(err)
    return table


def overlap_integral(rho, eta, grid):
    """``sum_i min(rho_i, eta_i) |C_i|``, zero for segregated species."""
    return float(np.minimum(rho, eta).sum() * grid.cell_volume)


# -- kink steady states ------------------------------------------------------------


def kink_steady_state(position, alpha=1.0, C=1.0, D=1.0, l=0.0):
    """``alpha exp(-C/(2D) [|x|^2 - l^2]^+)``.

    ``position`` is an array of coordinates (1D) or a tuple of coordinate
    arrays (2D).
    """
    if l < 0:
        raise ValueError("plateau radius l must be non-negative")
    coords = position if isinstance(position, tuple) else (position,)
    r2 = sum(np.asarray(c, dtype=float) ** 2 for c in coords)
    return alpha * np.exp(-C / (2 * D) * np.maximum(r2 - l * l, 0.0))


def mass_of_l(l, alpha=1.0, C=1.0, D=1.0, dimension=1):
    """Mass of the kink profile on the half line (1D) or the quadrant (2D)."""
    if l < 0:
        raise ValueError("plateau radius l must be non-negative")
    if dimension == 1:
        # exp(a l^2) (1 - erf(l sqrt a)) written with erfcx to avoid overflow
        return alpha * (l + math.sqrt(math.pi * D / (2 * C)) * erfcx(l * math.sqrt(C / (2 * D))))
    if dimension == 2:
        return alpha * math.pi / 2 * (l * l / 2 + D / C)
    raise ValueError("dimension must be 1 or 2")


def critical_mass(alpha=1.0, C=1.0, D=1.0, dimension=1):
    return mass_of_l(0.0, alpha, C, D, dimension)


def solve_l_from_mass(M, alpha=1.0, C=1.0, D=1.0, dimension=1):
    """Plateau radius of the kink with mass ``M``; returns ``(l, subcritical)``.

    For ``M <= M_c`` the steady state is a Gaussian, reported as ``l = 0``
    with ``subcritical = True``.
    """
    m_c = critical_mass(alpha, C, D, dimension)
    if M <= m_c:
        return 0.0, True
    if dimension == 2:
        return math.sqrt(4 * M / (alpha * math.pi) - 2 * D / C), False
    upper = M / alpha + 1.0  # mass_of_l(l) > alpha l
    l = brentq(lambda s: mass_of_l(s, alpha, C, D, 1) - M, 0.0, upper, xtol=1e-14, rtol=1e-14)
    return l, False
