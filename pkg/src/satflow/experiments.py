"""Problem definitions: manufactured SKT solutions, kink steady states, freeze-in-place
data and the two-species cell-cell adhesion model.

Each factory returns a :class:`ProblemSpec` that knows how to build its grid,
initial datum, dynamics and default scheme configuration.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from .core import (
    Boundary,
    FixedDt,
    Grid1D,
    Grid2D,
    Scheme,
    SchemeConfig,
    SolverOptions,
    linear_saturation,
    no_saturation,
)
from .diagnostics import kink_steady_state, solve_l_from_mass
from .gradientflow import EnergySpec, boltzmann, quadratic, quadratic_kernel, quadratic_potential
from .integration import Dynamics


class InadmissibleDatum(ValueError):
    """Initial datum violates positivity or the saturation bound."""


@dataclass(frozen=True, eq=False)
class ProblemSpec:
    """Everything needed to run one experiment.

    ``datum(*coords)`` returns a ``(P, ...)`` array; ``exact(t, *coords)``
    (optional) is a reference solution.  ``num_cells`` counts cells per
    dimension.  ``refinement(k) -> (num_cells, dt)`` defines the grid law of
    a convergence study.
    """

    name: str
    dimension: int
    bounds: tuple
    num_species: int
    datum: Callable
    dynamics: Dynamics
    final_time: float
    num_cells: int
    dt: float
    boundary: Boundary = Boundary.NO_FLUX
    exact: Callable | None = None
    refinement: Callable | None = None
    parameters: dict = field(default_factory=dict)

    @property
    def saturation(self):
        return self.dynamics.saturation

    @property
    def energy(self):
        return self.dynamics.energy

    @property
    def gradient_flow(self):
        return self.dynamics.gradient_flow

    def grid(self, num_cells=None):
        n = self.num_cells if num_cells is None else num_cells
        if n < 4:
            raise ValueError("resolution must be at least 4 cells per dimension")
        lower, upper = self.bounds
        if self.dimension == 1:
            return Grid1D.from_bounds(lower, upper, n, self.boundary)
        return Grid2D.square(lower, upper, n, self.boundary)

    def initial(self, grid, check=True):
        values = np.asarray(self.datum(*grid.mesh()), dtype=float)
        values = np.broadcast_to(values, (self.num_species,) + grid.shape).copy()
        if check:
            check_admissible(values, self.saturation.alpha)
        return values

    def default_scheme(self, explicit=False):
        if self.gradient_flow:
            if explicit:
                return Scheme.EXPLICIT_SCALAR if self.num_species == 1 else Scheme.EXPLICIT_SYSTEM
            return Scheme.GRADIENT_FLOW_SCALAR if self.num_species == 1 else Scheme.GRADIENT_FLOW_SYSTEM
        if explicit:
            return Scheme.EXPLICIT_SCALAR if self.num_species == 1 else Scheme.EXPLICIT_SYSTEM
        return Scheme.IMPLICIT_SCALAR if self.num_species == 1 else Scheme.IMPLICIT_SYSTEM

    def config(self, dt=None, explicit=False, solver=None):
        return SchemeConfig(
            self.default_scheme(explicit),
            dt_policy=FixedDt(self.dt if dt is None else dt),
            solver=solver or SolverOptions(),
        )


def check_admissible(values, alpha=math.inf, tol=1e-12):
    """Raise :class:`InadmissibleDatum` unless ``rho >= 0`` and ``sigma <= alpha``."""
    values = np.asarray(values, dtype=float)
    if not np.all(np.isfinite(values)):
        raise InadmissibleDatum("datum contains non-finite values")
    if values.min() < -tol:
        raise InadmissibleDatum(f"datum is negative somewhere (min {values.min():.3g})")
    sigma = values.sum(axis=0).max()
    if sigma > alpha + tol:
        raise InadmissibleDatum(f"datum exceeds the saturation level: max sigma {sigma:.6g} > {alpha:g}")


# -- SKT manufactured solutions -------------------------------------------------


def skt_exact(t, x, y):
    """``rho = (1 + sin(x + t)) / 4``, ``eta = (1 + cos(y + t)) / 4``."""
    rho, eta = np.broadcast_arrays(0.25 * (1 + np.sin(x + t)), 0.25 * (1 + np.cos(y + t)))
    return np.stack([rho, eta])


def skt_sources(t, x, y):
    """Sources of the SKT system without saturation for :func:`skt_exact`."""
    sa, ca = np.sin(t + x), np.cos(t + x)
    sb, cb = np.sin(t + y), np.cos(t + y)
    s_rho = ca / 4 + 3 * sa / 16 + cb / 16 - ca**2 / 8 + sa**2 / 8 + sa * cb / 8
    s_eta = sa / 16 + 3 * cb / 16 - sb / 4 + cb**2 / 8 - sb**2 / 8 + sa * cb / 8
    return np.stack([s_rho, s_eta])


def skt_saturated_sources(t, x, y):
    """Sources of the SKT system with mobility factor ``1 - rho - eta``."""
    sa, ca = np.sin(t + x), np.cos(t + x)
    sb, cb = np.sin(t + y), np.cos(t + y)
    s_rho = (
        ca / 4 + 3 * sa / 32 + cb / 32 - ca**2 / 64
        + sa**2 / 64 - sa**3 / 32 - cb**2 / 64 + sb**2 / 64
        + ca**2 * sa / 16 - cb**2 * sa / 32 + sb**2 * sa / 64
        + 3 * ca**2 * cb / 64 - sa**2 * cb / 16
    )
    s_eta = (
        sa / 32 + 3 * cb / 32 - sb / 4 + ca**2 / 64
        - sa**2 / 64 + cb**2 / 64 - cb**3 / 32 - sb**2 / 64
        - cb**2 * sa / 16 + 3 * sb**2 * sa / 64 + ca**2 * cb / 64
        - sa**2 * cb / 32 + sb**2 * cb / 16
    )
    return np.stack([s_rho, s_eta])


def skt_mobility(rho):
    """``R(rho, eta) = [[2 rho + eta, eta], [rho, rho + 2 eta]]``."""
    r, e = rho[0], rho[1]
    return np.array([[2 * r + e, e], [r, r + 2 * e]])


def skt_level(k):
    """Cells per dimension and time step at refinement level ``k``: dx = 2^-k pi, dt = 2^-k / 10."""
    return 2 ** (k + 1), 2.0**-k / 10


def skt_manufactured(with_saturation=False, level=5):
    energy = EnergySpec(2, H_rho=boltzmann(), H_eta=boltzmann(), mobility_factor=skt_mobility)
    saturation = linear_saturation(1.0) if with_saturation else no_saturation()
    source = skt_saturated_sources if with_saturation else skt_sources
    cells, dt = skt_level(level)
    return ProblemSpec(
        name="skt-saturated" if with_saturation else "skt",
        dimension=2,
        bounds=(-math.pi, math.pi),
        num_species=2,
        datum=lambda x, y: skt_exact(0.0, x, y),
        dynamics=Dynamics(saturation, energy=energy, source=source),
        final_time=0.1,
        num_cells=cells,
        dt=dt,
        boundary=Boundary.PERIODIC,
        exact=skt_exact,
        refinement=skt_level,
        parameters={"level": level},
    )


# -- kink steady states -----------------------------------------------------------


def kink_problem(dimension=1, M=None, alpha=1.0, C=1.0, D=1.0, with_saturation=True,
                 num_cells=None, dt=None):
    """Constant datum ``M / |Omega|`` on ``(0, 4)^d`` relaxing towards a kink profile.

    Defaults: ``M = 1.66`` and ``dx = dt = 2^-7`` in 1D; ``M = 4.71`` and
    ``dx = dt = 2^-5`` in 2D.
    """
    if dimension not in (1, 2):
        raise ValueError("dimension must be 1 or 2")
    if M is None:
        M = 1.66 if dimension == 1 else 4.71
    if not M > 0:
        raise ValueError("mass must be positive")
    lower, upper = 0.0, 4.0
    if num_cells is None:
        num_cells = 512 if dimension == 1 else 128
    if dt is None:
        dt = (upper - lower) / num_cells
    density = M / (upper - lower) ** dimension
    energy = EnergySpec(1, H_rho=boltzmann(D), V_rho=quadratic_potential(C))
    saturation = linear_saturation(alpha) if with_saturation else no_saturation()
    l, subcritical = solve_l_from_mass(M, alpha, C, D, dimension)

    def exact(t, *coords):
        return kink_steady_state(coords, alpha, C, D, l)[np.newaxis]

    return ProblemSpec(
        name=f"kink-{dimension}d",
        dimension=dimension,
        bounds=(lower, upper),
        num_species=1,
        datum=lambda *coords: np.full((1,) + np.shape(coords[0]), density),
        dynamics=Dynamics(saturation, energy=energy),
        final_time=15.0,
        num_cells=num_cells,
        dt=dt,
        exact=exact if with_saturation else None,
        parameters={"M": M, "alpha": alpha, "C": C, "D": D, "l": l, "subcritical": subcritical},
    )


# -- freeze in place ------------------------------------------------------------------


def freeze_profile(r, amplitude=0.8):
    """``f(r) = amplitude (1 - (4r/3)^2)``."""
    return amplitude * (1 - (4 * np.asarray(r) / 3) ** 2)


def freeze_problem(dimension=1, with_saturation=True, literal_datum=False, num_cells=None, dt=0.1):
    """Two species with shared quadratic diffusion and unequal confinement (``C1 = 2 C2``).

    The printed amplitude ``4/5`` of ``f`` gives ``sigma = 2 f(0) = 1.6 > alpha``;
    by default the amplitude is lowered to ``alpha / 2`` so the datum is
    admissible.  ``literal_datum=True`` keeps ``4/5`` (rejected by the
    admissibility check when saturated).
    """
    if dimension not in (1, 2):
        raise ValueError("dimension must be 1 or 2")
    alpha, D, C1, C2 = 1.0, 0.1, 4.0, 2.0
    omega = 16 * math.pi if dimension == 1 else 4 * math.pi
    amplitude = 0.8 if literal_datum else alpha / 2
    if num_cells is None:
        num_cells = 512 if dimension == 1 else 64

    def datum(*coords):
        if dimension == 1:
            (x,) = coords
            f, wave = freeze_profile(x, amplitude), np.cos(omega * x)
        else:
            x, y = coords
            f, wave = freeze_profile(np.hypot(x, y), amplitude), np.cos(omega * x) * np.cos(omega * y)
        return np.stack([np.maximum(f * (1 - wave / 2), 0.0), np.maximum(f * (1 + wave / 2), 0.0)])

    energy = EnergySpec(
        2,
        H_sigma=quadratic(D),
        V_rho=quadratic_potential(C1),
        V_eta=quadratic_potential(C2),
    )
    saturation = linear_saturation(alpha) if with_saturation else no_saturation()
    return ProblemSpec(
        name=f"freeze-{dimension}d",
        dimension=dimension,
        bounds=(-1.0, 1.0),
        num_species=2,
        datum=datum,
        dynamics=Dynamics(saturation, energy=energy),
        final_time=30.0,
        num_cells=num_cells,
        dt=dt,
        parameters={"alpha": alpha, "D": D, "C1": C1, "C2": C2, "omega": omega, "amplitude": amplitude},
    )


# -- cell-cell adhesion -------------------------------------------------------------


class Engulfment(enum.Enum):
    PARTIAL = "partial"
    COMPLETE = "complete"


ADHESION_COEFFICIENTS = {
    # (c_rr, c_re, c_er, c_ee)
    Engulfment.PARTIAL: (1.0, 0.5, 0.5, 1.0),
    Engulfment.COMPLETE: (0.25, 0.5, 0.5, 1.0),
}


def adhesion_problem(engulfment=Engulfment.PARTIAL, with_saturation=True, literal_geometry=False,
                     num_cells=32, dt=None):
    """Two attracting species on ``(-2, 2)^2`` started from two disks at height 0.95.

    The printed disk data (centres ``(-0.5, 0)`` and ``(-0.4, 0)``, radii 0.5
    and 0.4) nest the second disk inside the first.  By default the second
    centre is mirrored to ``(0.4, 0)`` so the disks touch at the origin;
    ``literal_geometry=True`` uses the printed centres and gives the overlap
    to ``rho``.
    """
    engulfment = Engulfment(engulfment)
    c_rr, c_re, c_er, c_ee = ADHESION_COEFFICIENTS[engulfment]
    if c_re != c_er:
        raise ValueError("cross attraction must be symmetric")
    eps, alpha, height = 0.1, 1.0, 0.95
    centre_eta = (-0.4, 0.0) if literal_geometry else (0.4, 0.0)

    def datum(x, y):
        in_rho = (x + 0.5) ** 2 + y**2 <= 0.5**2
        in_eta = ((x - centre_eta[0]) ** 2 + (y - centre_eta[1]) ** 2 <= 0.4**2) & ~in_rho
        return height * np.stack([in_rho, in_eta]).astype(float)

    energy = EnergySpec(
        2,
        H_sigma=quadratic(eps),
        W_rho=quadratic_kernel(c_rr),
        W_eta=quadratic_kernel(c_ee),
        W_sigma=quadratic_kernel(c_re),
    )
    saturation = linear_saturation(alpha) if with_saturation else no_saturation()
    lower, upper = -2.0, 2.0
    return ProblemSpec(
        name=f"adhesion-{engulfment.value}",
        dimension=2,
        bounds=(lower, upper),
        num_species=2,
        datum=datum,
        dynamics=Dynamics(saturation, energy=energy),
        final_time=45.0,
        num_cells=num_cells,
        dt=(upper - lower) / num_cells if dt is None else dt,
        parameters={"epsilon": eps, "alpha": alpha, "coefficients": (c_rr, c_re, c_er, c_ee),
                    "eta_centre": centre_eta},
    )


# -- registry -----------------------------------------------------------------------


def _skt_saturated(saturated, **kw):
    if not saturated:
        raise ValueError("skt-saturated has sources for the saturated model only; use 'skt'")
    return skt_manufactured(True, **kw)


PROBLEMS = {
    "skt": (lambda s, **kw: skt_manufactured(False, **kw), "SKT cross diffusion, manufactured solution, periodic 2D"),
    "skt-saturated": (_skt_saturated, "SKT with mobility factor (1 - rho - eta)"),
    "kink-1d": (lambda s, **kw: kink_problem(1, with_saturation=s, **kw), "saturated drift-diffusion on (0,4)"),
    "kink-2d": (lambda s, **kw: kink_problem(2, with_saturation=s, **kw), "saturated drift-diffusion on (0,4)^2"),
    "freeze-1d": (lambda s, **kw: freeze_problem(1, s, **kw), "freeze-in-place, two species on (-1,1)"),
    "freeze-2d": (lambda s, **kw: freeze_problem(2, s, **kw), "freeze-in-place, two species on (-1,1)^2"),
    "adhesion-partial": (
        lambda s, **kw: adhesion_problem(Engulfment.PARTIAL, s, **kw),
        "cell-cell adhesion, partial engulfment",
    ),
    "adhesion-complete": (
        lambda s, **kw: adhesion_problem(Engulfment.COMPLETE, s, **kw),
        "cell-cell adhesion, complete engulfment",
    ),
}


def get_problem(name, with_saturation=True, **options):
    """Build a registered problem; ``with_saturation=False`` selects the ``psi = 1`` variant."""
    try:
        factory, _ = PROBLEMS[name]
    except KeyError:
        raise KeyError(f"unknown problem {name!r}; choose from {', '.join(PROBLEMS)}") from None
    return factory(with_saturation, **options)


def with_resolution(problem, num_cells=None, dt=None, final_time=None):
    """Copy of ``problem`` with overridden resolution, step or horizon."""
    changes = {}
    if num_cells is not None:
        changes["num_cells"] = int(num_cells)
    if dt is not None:
        changes["dt"] = float(dt)
    if final_time is not None:
        changes["final_time"] = float(final_time)
    return replace(problem, **changes)


# -- randomized admissible data -------------------------------------------------------


def random_admissible_field(rng, num_species, shape, alpha=1.0):
    """Random ``(P, *shape)`` field with ``rho >= 0`` and ``sigma <= alpha``.

    About a tenth of the cells are empty and a tenth exactly saturated, so
    both bounds are exercised.
    """
    shape = tuple(np.atleast_1d(shape))
    u = rng.uniform(size=shape)
    pick = rng.uniform(size=shape)
    u[pick < 0.1] = 0.0
    u[pick > 0.9] = 1.0
    weights = rng.dirichlet(np.ones(num_species), size=shape)  # (*shape, P)
    return np.moveaxis(weights, -1, 0) * (alpha * u)


@dataclass
class TrialOutcome:
    label: str
    min_density: float
    max_sigma: float
    alpha: float
    error: str | None = None

    def passed(self, tol=1e-12):
        return self.error is None and self.min_density >= -tol and self.max_sigma <= self.alpha + tol


def random_bound_trials(seed=0, trials=200, max_cells=64, steps=5):
    """Bound-preservation runs from random admissible data on small 1D grids.

    Cycles through explicit and implicit scalar/system schemes with random
    prescribed velocities, and the gradient-flow schemes.  Explicit schemes
    run at 0.9 and 1.0 times their CFL bound; implicit ones at ``dt = dx``
    and ``dt = 10 dx``.
    """
    from .core import cosine_saturation, power_saturation
    from .fluxes import cfl_dt_scalar, cfl_dt_system
    from .integration import explicit_dt_limit, evolve

    rng = np.random.default_rng(seed)
    saturations = [linear_saturation(1.0), linear_saturation(2.0, 0.5), power_saturation(1.0, 2.0),
                   cosine_saturation(1.0)]
    kinds = ["explicit-scalar", "explicit-system", "implicit-scalar", "implicit-system",
             "gradient-flow-scalar", "gradient-flow-system"]
    outcomes = []
    for n in range(trials):
        kind = kinds[n % len(kinds)]
        sat = saturations[rng.integers(len(saturations))]
        cells = int(rng.integers(3, max_cells + 1))
        grid = Grid1D(cells, 1.0 / cells, 0.0, Boundary.PERIODIC if rng.uniform() < 0.3 else Boundary.NO_FLUX)
        P = 1 if kind.endswith("scalar") else int(rng.integers(2, 4))
        if kind.startswith("gradient"):
            P = min(P, 2)
            if P == 1:
                energy = EnergySpec(1, H_rho=boltzmann(rng.uniform(0.05, 1.0)),
                                    V_rho=lambda x, a=rng.uniform(-5, 5): a * (x - 0.5) ** 2)
            else:
                energy = EnergySpec(2, H_sigma=quadratic(rng.uniform(0.05, 1.0)),
                                    V_rho=quadratic_potential(rng.uniform(0, 8)),
                                    V_eta=quadratic_potential(rng.uniform(0, 8)),
                                    W_sigma=quadratic_kernel(rng.uniform(-2, 2)))
            dynamics = Dynamics(sat, energy=energy)
            rho = random_admissible_field(rng, P, cells, sat.alpha)
            if energy.singular_at_zero:
                rho = np.maximum(rho, 1e-3 * sat.alpha) * (1 - 1e-3 * P)
        else:
            amp = rng.uniform(0.1, 10.0)
            phase = rng.uniform(0, 2 * np.pi, size=(P, 1))
            freq = rng.integers(1, 4, size=(P, 1))
            dynamics = Dynamics(sat, velocity=lambda x, a=amp, ph=phase, f=freq: a * np.sin(2 * np.pi * f * x + ph))
            rho = random_admissible_field(rng, P, cells, sat.alpha)
        scheme = Scheme(kind)
        if scheme.explicit:
            factor = 0.9 if n % 2 else 1.0
            u = np.atleast_2d(dynamics.velocity(grid.interfaces))
            bound = (cfl_dt_scalar if P == 1 else cfl_dt_system)(sat, u, grid.cell_size)
            if math.isinf(bound):
                bound = grid.cell_size
            dt = factor * bound
            if dynamics.gradient_flow:
                dt = factor * explicit_dt_limit(rho, dynamics, grid)
        else:
            factor = 1.0 if n % 2 else 10.0
            dt = factor * grid.cell_size
        config = SchemeConfig(scheme, dt_policy=FixedDt(dt))
        step = f"cfl={factor:g}" if scheme.explicit else f"dt={factor:g}dx"
        label = f"trial {n}: {kind}, {sat.name}, P={P}, N={cells}, {step}"
        try:
            if scheme.explicit and dynamics.gradient_flow:
                # the explicit gradient-flow velocity changes every step: one CFL-limited step
                series = evolve(rho, dynamics, grid, config, dt)
            else:
                series = evolve(rho, dynamics, grid, config, steps * dt)
            outcomes.append(TrialOutcome(label, min(series.min_density), max(series.max_sigma), sat.alpha))
        except Exception as exc:  # reported, not hidden
            outcomes.append(TrialOutcome(label, math.nan, math.nan, sat.alpha, f"{type(exc).__name__}: {exc}"))
    return outcomes
