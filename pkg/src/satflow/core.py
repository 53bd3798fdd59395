"""Grids, saturation functions and scheme configuration shared by all solvers.

Densities are stored as plain numpy arrays with the species on the leading
axis: shape ``(P, N)`` on a :class:`Grid1D` and ``(P, Nx, Ny)`` on a
:class:`Grid2D`.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np


class Boundary(enum.Enum):
    NO_FLUX = "noflux"
    PERIODIC = "periodic"


@dataclass(frozen=True)
class Grid1D:
    """Uniform cell-centred grid on ``[origin, origin + num_cells * cell_size]``."""

    num_cells: int
    cell_size: float
    origin: float = 0.0
    boundary: Boundary = Boundary.NO_FLUX

    def __post_init__(self):
        if int(self.num_cells) != self.num_cells or self.num_cells < 1:
            raise ValueError(f"num_cells must be a positive integer, got {self.num_cells}")
        if not self.cell_size > 0:
            raise ValueError(f"cell_size must be positive, got {self.cell_size}")
        object.__setattr__(self, "boundary", Boundary(self.boundary))

    @classmethod
    def from_bounds(cls, lower, upper, num_cells, boundary=Boundary.NO_FLUX):
        return cls(num_cells, (upper - lower) / num_cells, lower, boundary)

    @property
    def length(self):
        return self.num_cells * self.cell_size

    @property
    def centers(self):
        return self.origin + self.cell_size * (np.arange(self.num_cells) + 0.5)

    @property
    def interfaces(self):
        return self.origin + self.cell_size * np.arange(self.num_cells + 1)

    @property
    def periodic(self):
        return self.boundary is Boundary.PERIODIC

    @property
    def cell_volume(self):
        return self.cell_size

    @property
    def shape(self):
        return (self.num_cells,)

    @property
    def ndim(self):
        return 1

    def mesh(self):
        return (self.centers,)


@dataclass(frozen=True)
class Grid2D:
    """Tensor product of two 1D grids; index ``[i, j]`` is the cell at ``(x_i, y_j)``."""

    grid_x: Grid1D
    grid_y: Grid1D

    @classmethod
    def square(cls, lower, upper, num_cells, boundary=Boundary.NO_FLUX):
        g = Grid1D.from_bounds(lower, upper, num_cells, boundary)
        return cls(g, g)

    @property
    def shape(self):
        return (self.grid_x.num_cells, self.grid_y.num_cells)

    @property
    def ndim(self):
        return 2

    @property
    def cell_volume(self):
        return self.grid_x.cell_size * self.grid_y.cell_size

    def mesh(self):
        return tuple(np.meshgrid(self.grid_x.centers, self.grid_y.centers, indexing="ij"))


def as_field(values, grid, num_species=None):
    """Validate and return a float array of shape ``(P, *grid.shape)``."""
    arr = np.array(values, dtype=float)
    if arr.shape == grid.shape:
        arr = arr[np.newaxis]
    if arr.shape[1:] != grid.shape:
        raise ValueError(f"field shape {arr.shape} does not match grid shape {grid.shape}")
    if num_species is not None and arr.shape[0] != num_species:
        raise ValueError(f"expected {num_species} species, got {arr.shape[0]}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("field contains non-finite values")
    return arr


def total_mass(rho, grid):
    """Per-species mass ``sum_i rho_{p,i} |C_i|``."""
    axes = tuple(range(1, rho.ndim))
    return rho.sum(axis=axes) * grid.cell_volume


def _central_derivative(f, s, h=1e-6):
    s = np.asarray(s, dtype=float)
    return (f(s + h) - f(s - h)) / (2 * h)


@dataclass(frozen=True, eq=False)
class SaturationSpec:
    """A saturation ``psi`` with level ``alpha``.

    ``psi`` must be non-increasing, vanish at ``alpha`` and satisfy
    ``(alpha - s) psi(s) > 0`` away from ``alpha``.  ``gamma`` is the CFL
    constant ``inf (alpha - s) / (alpha psi(s))``; it is estimated numerically
    by :func:`compute_gamma` when not supplied.  ``alpha = inf`` denotes the
    unsaturated mobility ``psi = 1``.
    """

    psi: Callable
    alpha: float
    dpsi: Callable | None = None
    gamma: float | None = None
    name: str = "custom"
    psi_at_zero: float = field(init=False)

    def __post_init__(self):
        if not self.alpha > 0:
            raise ValueError("saturation level alpha must be positive")
        object.__setattr__(self, "psi_at_zero", float(self.psi(np.float64(0.0))))
        if math.isinf(self.alpha):
            if self.gamma is None:
                object.__setattr__(self, "gamma", math.inf)
            return
        _check_saturation_axioms(self.psi, self.alpha)
        if self.gamma is None:
            object.__setattr__(self, "gamma", compute_gamma(self.psi, self.alpha))
        elif not self.gamma > 0:
            raise ValueError("gamma must be positive")

    @property
    def saturated(self):
        return not math.isinf(self.alpha)

    def __call__(self, s):
        return self.psi(np.asarray(s, dtype=float))

    def derivative(self, s):
        if self.dpsi is not None:
            return self.dpsi(np.asarray(s, dtype=float))
        return _central_derivative(self.psi, s)

    def positive_part(self, s):
        """``max(psi(s), 0)`` and its derivative, as used by the implicit fluxes.

        At ``s = alpha`` the slope from the admissible side is kept.
        """
        value = self(s)
        slope = np.where(value >= 0, self.derivative(s), 0.0)
        return np.maximum(value, 0.0), slope

    def __repr__(self):
        return f"SaturationSpec({self.name}, alpha={self.alpha}, gamma={self.gamma:.6g})"


def _check_saturation_axioms(psi, alpha, samples=1024):
    s = np.linspace(0.0, alpha, samples)
    values = np.asarray(psi(s), dtype=float)
    if not np.all(np.isfinite(values)):
        raise ValueError("saturation is not finite on [0, alpha]")
    scale = max(abs(values[0]), 1.0)
    if np.any(np.diff(values) > 1e-12 * scale):
        raise ValueError("saturation must be non-increasing on [0, alpha]")
    if abs(values[-1]) > 1e-12 * scale:
        raise ValueError(f"saturation must vanish at alpha, psi(alpha) = {values[-1]:.3g}")
    if np.any(values[:-1] <= 0):
        raise ValueError("saturation must be positive on [0, alpha)")


def saturation_eval(spec, s):
    """Evaluate ``psi(s)``; values beyond ``alpha`` follow the user's formula."""
    return spec(s)


def compute_gamma(psi, alpha, samples=4096):
    """Lower estimate of ``inf_{[0, alpha)} (alpha - s) / (alpha psi(s))``.

    Dense uniform sampling is combined with the one-sided limit
    ``1 / (alpha * (-psi'(alpha)))`` at the saturation level.  A ratio that
    decays to zero as ``s -> alpha`` (infinite slope at ``alpha``) admits no
    positive CFL constant and raises ``ValueError``.
    """
    s = np.linspace(0.0, alpha, samples, endpoint=False)
    ratio = (alpha - s) / (alpha * np.asarray(psi(s), dtype=float))
    sampled = float(ratio.min())

    # ratio at alpha(1 - 10^-k): a slope-limited psi levels off, an infinite slope decays to 0
    near = alpha - alpha * 10.0 ** -np.arange(3, 11)
    tail = (alpha - near) / (alpha * np.asarray(psi(near), dtype=float))
    if not np.all(np.isfinite(tail)) or np.any(tail <= 0):
        raise ValueError("saturation is not positive just below alpha")
    if tail[-1] < 1e-3 * tail[0] and np.all(np.diff(tail) < 0):
        raise ValueError(
            "(alpha - s)/(alpha psi(s)) vanishes as s -> alpha; "
            "the first non-zero derivative of psi at alpha has the wrong sign or diverges"
        )
    gamma = min(sampled, float(tail.min()))
    if not gamma > 0:
        raise ValueError("no positive CFL constant exists for this saturation")
    return gamma


def linear_saturation(alpha=1.0, scale=1.0):
    """``psi(s) = scale * (alpha - s)``."""
    return SaturationSpec(
        lambda s: scale * (alpha - s),
        alpha,
        dpsi=lambda s: np.full_like(s, -scale, dtype=float),
        gamma=1.0 / (alpha * scale),
        name="linear",
    )


def power_saturation(alpha=1.0, m=1.0):
    """``psi(s) = (alpha - s)|alpha - s|^(m-1) / alpha^m`` with ``gamma = 1``."""
    if m < 1:
        raise ValueError("power saturation requires m >= 1")

    def psi(s):
        d = alpha - s
        return d * np.abs(d) ** (m - 1) / alpha**m

    def dpsi(s):
        return -m * np.abs(alpha - s) ** (m - 1) / alpha**m

    return SaturationSpec(psi, alpha, dpsi=dpsi, gamma=1.0, name=f"power(m={m:g})")


def cosine_saturation(alpha=1.0):
    """``psi(s) = cos(pi s / (2 alpha))`` with ``gamma = 2/pi``."""
    k = math.pi / (2 * alpha)
    return SaturationSpec(
        lambda s: np.cos(k * s),
        alpha,
        dpsi=lambda s: -k * np.sin(k * s),
        gamma=2 / math.pi,
        name="cosine",
    )


def no_saturation():
    """The unsaturated mobility ``psi = 1``."""
    return SaturationSpec(
        lambda s: np.ones_like(s, dtype=float),
        math.inf,
        dpsi=lambda s: np.zeros_like(s, dtype=float),
        name="none",
    )


class Scheme(enum.Enum):
    EXPLICIT_SCALAR = "explicit-scalar"
    IMPLICIT_SCALAR = "implicit-scalar"
    EXPLICIT_SYSTEM = "explicit-system"
    IMPLICIT_SYSTEM = "implicit-system"
    GRADIENT_FLOW_SCALAR = "gradient-flow-scalar"
    GRADIENT_FLOW_SYSTEM = "gradient-flow-system"

    @property
    def explicit(self):
        return self in (Scheme.EXPLICIT_SCALAR, Scheme.EXPLICIT_SYSTEM)


@dataclass(frozen=True)
class FixedDt:
    dt: float

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be positive")


@dataclass(frozen=True)
class CflDriven:
    safety: float = 0.9

    def __post_init__(self):
        if not 0 < self.safety <= 1:
            raise ValueError("CFL safety factor must lie in (0, 1]")


@dataclass(frozen=True)
class SolverOptions:
    """Nonlinear solve settings for the implicit schemes.

    ``method`` is ``"newton"`` (default) or ``"picard"`` (lagged coefficients).
    Convergence is declared when the l-infinity update drops below
    ``tolerance``.
    """

    tolerance: float = 1e-10
    max_iterations: int = 200
    damping: float = 1.0
    method: str = "newton"

    def __post_init__(self):
        if not self.tolerance > 0:
            raise ValueError("solver tolerance must be positive")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be at least 1")
        if not 0 < self.damping <= 1:
            raise ValueError("damping must lie in (0, 1]")
        if self.method not in ("newton", "picard"):
            raise ValueError(f"unknown nonlinear method {self.method!r}")


@dataclass(frozen=True)
class SchemeConfig:
    scheme: Scheme = Scheme.IMPLICIT_SCALAR
    theta: float = 2.0
    dt_policy: FixedDt | CflDriven = field(default_factory=CflDriven)
    solver: SolverOptions = field(default_factory=SolverOptions)
    max_halvings: int = 20

    def __post_init__(self):
        object.__setattr__(self, "scheme", Scheme(self.scheme))
        if not 0 <= self.theta <= 2:
            raise ValueError(f"theta must lie in [0, 2], got {self.theta}")
