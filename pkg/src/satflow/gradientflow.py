"""Free energies, entropy variables and gradient-flow interface velocities.

The energy of a ``P``-species density (``P <= 2``) is

    E = sum_p H_p(rho_p) + H_sigma(sigma) + sum_p V_p rho_p
        + 1/2 sum_{p,q} rho_p (W_pq * rho_q)

with ``W_00 = W_rho``, ``W_11 = W_eta`` and ``W_01 = W_10 = W_sigma``.  The
mobility is supplied factored, ``M(rho) = diag(rho) R(rho)``.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
import scipy.linalg
import scipy.signal
from scipy.special import xlogy

from .core import Grid1D
from .fluxes import interface_cells

DENSITY_FLOOR = 1e-300


@dataclass(frozen=True, eq=False)
class Entropy:
    """A convex internal-energy density with its first two derivatives."""

    value: Callable
    derivative: Callable
    second: Callable | None = None
    name: str = "custom"

    def __call__(self, s):
        return self.value(np.asarray(s, dtype=float))

    def d1(self, s):
        return self.derivative(np.asarray(s, dtype=float))

    def d2(self, s):
        s = np.asarray(s, dtype=float)
        if self.second is not None:
            return self.second(s)
        h = 1e-6 * np.maximum(1.0, np.abs(s))
        return (self.derivative(s + h) - self.derivative(s - h)) / (2 * h)

    @property
    def singular_at_zero(self):
        with np.errstate(all="ignore"):
            return not np.isfinite(self.derivative(np.float64(0.0)))


def boltzmann(diffusivity=1.0):
    """``D (s log s - s)``; the derivative is evaluated with a density floor at vacuum."""
    d = diffusivity
    return Entropy(
        lambda s: d * (xlogy(s, s) - s),
        lambda s: d * np.log(np.maximum(s, DENSITY_FLOOR)),
        lambda s: d / np.maximum(s, DENSITY_FLOOR),
        name=f"boltzmann(D={d:g})",
    )


def quadratic(coefficient=1.0):
    """``c s^2 / 2``."""
    c = coefficient
    return Entropy(
        lambda s: 0.5 * c * s * s,
        lambda s: c * s,
        lambda s: np.full_like(s, c, dtype=float),
        name=f"quadratic({c:g})",
    )


def porous_medium(m=2.0):
    """``s^m / (m - 1)`` for ``m > 1``."""
    if m <= 1:
        raise ValueError("porous-medium exponent must exceed 1")
    return Entropy(
        lambda s: np.maximum(s, 0.0) ** m / (m - 1),
        lambda s: m / (m - 1) * np.maximum(s, 0.0) ** (m - 1),
        lambda s: m * np.maximum(s, DENSITY_FLOOR) ** (m - 2),
        name=f"porous(m={m:g})",
    )


def quadratic_kernel(coefficient=1.0):
    """``c |x|^2 / 2`` in any dimension."""
    return lambda *d: 0.5 * coefficient * sum(np.asarray(c, dtype=float) ** 2 for c in d)


def quadratic_potential(coefficient=1.0):
    """``c |x|^2 / 2`` in any dimension."""
    return quadratic_kernel(coefficient)


@dataclass(frozen=True, eq=False)
class EnergySpec:
    """Energy and mobility of a one- or two-species gradient flow.

    Potentials take the coordinate arrays (``V(x)`` or ``V(x, y)``); kernels
    take displacement components and must be even.  ``mobility_factor`` maps
    an array of shape ``(P, ...)`` to ``(P, P, ...)``; ``None`` means
    ``R = I``, i.e. ``M = diag(rho)``.
    """

    num_species: int = 1
    H_rho: Entropy | None = None
    H_eta: Entropy | None = None
    H_sigma: Entropy | None = None
    V_rho: Callable | None = None
    V_eta: Callable | None = None
    W_rho: Callable | None = None
    W_eta: Callable | None = None
    W_sigma: Callable | None = None
    mobility_factor: Callable | None = None

    def __post_init__(self):
        if self.num_species not in (1, 2):
            raise ValueError("gradient flows support one or two species")
        if self.num_species == 1 and any(
            f is not None for f in (self.H_eta, self.V_eta, self.W_eta, self.W_sigma)
        ):
            raise ValueError("second-species terms given for a scalar energy")

    @property
    def entropies(self):
        return (self.H_rho, self.H_eta)[: self.num_species]

    @property
    def potentials(self):
        return (self.V_rho, self.V_eta)[: self.num_species]

    def kernel(self, p, q):
        if p == q:
            return (self.W_rho, self.W_eta)[p]
        return self.W_sigma

    @property
    def has_kernels(self):
        return any(
            self.kernel(p, q) is not None
            for p in range(self.num_species)
            for q in range(self.num_species)
        )

    @property
    def singular_at_zero(self):
        return any(h is not None and h.singular_at_zero for h in self.entropies)

    def potential_values(self, grid):
        coords = grid.mesh()
        out = np.zeros((self.num_species,) + grid.shape)
        for p, v in enumerate(self.potentials):
            if v is not None:
                out[p] = np.broadcast_to(v(*coords), grid.shape)
        return out

    def mobility(self, rho):
        """``R(rho)`` with shape ``(P, P, ...)``."""
        rho = np.asarray(rho, dtype=float)
        if self.mobility_factor is None:
            eye = np.eye(self.num_species).reshape((self.num_species,) * 2 + (1,) * (rho.ndim - 1))
            return np.broadcast_to(eye, (self.num_species,) * 2 + rho.shape[1:])
        return np.asarray(self.mobility_factor(rho), dtype=float)

    def mobility_derivative(self, rho, h=1e-7):
        """``dR_pr / d rho_q`` with shape ``(P, P, P, ...)`` indexed ``[p, r, q]``."""
        rho = np.asarray(rho, dtype=float)
        shape = (self.num_species,) * 3 + rho.shape[1:]
        if self.mobility_factor is None:
            return np.zeros(shape)
        out = np.empty(shape)
        for q in range(self.num_species):
            step = np.zeros_like(rho)
            step[q] = h
            out[:, :, q] = (self.mobility(rho + step) - self.mobility(rho - step)) / (2 * h)
        return out


# -- discrete convolution ---------------------------------------------------


def kernel_table(kernel, grid):
    """Kernel sampled at every cell-centre displacement, weighted by the cell volume.

    For a 1D grid entry ``d + N - 1`` holds ``W(d dx) dx``; in 2D the table
    has shape ``(2Nx - 1, 2Ny - 1)``.
    """
    if isinstance(grid, Grid1D):
        n, h = grid.num_cells, grid.cell_size
        disp = h * np.arange(-(n - 1), n)
        return np.broadcast_to(kernel(disp), disp.shape) * h
    gx, gy = grid.grid_x, grid.grid_y
    dx = gx.cell_size * np.arange(-(gx.num_cells - 1), gx.num_cells)
    dy = gy.cell_size * np.arange(-(gy.num_cells - 1), gy.num_cells)
    DX, DY = np.meshgrid(dx, dy, indexing="ij")
    return np.broadcast_to(kernel(DX, DY), DX.shape) * grid.cell_volume


def convolution_matrix(kernel, grid):
    """Dense Toeplitz matrix ``K[i, k] = W(x_i - x_k) dx`` on a 1D grid."""
    table = kernel_table(kernel, grid)
    n = grid.num_cells
    return scipy.linalg.toeplitz(table[n - 1 :], table[n - 1 :: -1])


def discrete_convolution(kernel, values, grid, method="auto"):
    """``(W * v)_i = sum_k W(x_i - x_k) v_k |C_k|`` on a 1D or 2D grid.

    ``method="direct"`` sums explicitly; ``"fft"`` exploits the Toeplitz
    structure.  ``"auto"`` picks direct summation for small 1D grids.
    """
    values = np.asarray(values, dtype=float)
    if kernel is None:
        return np.zeros_like(values)
    if method == "auto":
        method = "direct" if isinstance(grid, Grid1D) and grid.num_cells <= 512 else "fft"
    table = kernel_table(kernel, grid)
    if isinstance(grid, Grid1D):
        n = grid.num_cells
        if method == "direct":
            return values @ convolution_matrix(kernel, grid).T
        table = table.reshape((1,) * (values.ndim - 1) + table.shape)
        return scipy.signal.fftconvolve(values, table, axes=-1)[..., n - 1 : 2 * n - 1]
    nx, ny = grid.shape
    if method == "direct":
        ii, kk = np.meshgrid(np.arange(nx), np.arange(nx), indexing="ij")
        jj, ll = np.meshgrid(np.arange(ny), np.arange(ny), indexing="ij")
        # dense [i, j, k, l] weight tensor
        weights = table[(nx - 1 + ii - kk)[:, None, :, None], (ny - 1 + jj - ll)[None, :, None, :]]
        return np.einsum("ijkl,...kl->...ij", weights, values)
    table = table.reshape((1,) * (values.ndim - 2) + table.shape)
    full = scipy.signal.fftconvolve(values, table, axes=(-2, -1))
    return full[..., nx - 1 : 2 * nx - 1, ny - 1 : 2 * ny - 1]


def interaction_potentials(rho, energy, grid, method="auto"):
    """``sum_q W_pq * rho_q`` for every species ``p``."""
    out = np.zeros_like(np.asarray(rho, dtype=float))
    for p in range(energy.num_species):
        for q in range(energy.num_species):
            w = energy.kernel(p, q)
            if w is not None:
                out[p] += discrete_convolution(w, rho[q], grid, method)
    return out


# -- entropy variables, velocities, energy ----------------------------------


def local_entropy_variables(rho, energy):
    """``H_p'(rho_p) + H_sigma'(sigma)`` (no potentials or interactions)."""
    rho = np.asarray(rho, dtype=float)
    out = np.zeros_like(rho)
    for p, h in enumerate(energy.entropies):
        if h is not None:
            out[p] += h.d1(rho[p])
    if energy.H_sigma is not None:
        out += energy.H_sigma.d1(rho.sum(axis=0))
    return out


def local_entropy_hessian(rho, energy):
    """``d xi_r / d rho_q`` of the local terms, shape ``(P, P, ...)`` indexed ``[r, q]``."""
    rho = np.asarray(rho, dtype=float)
    P = energy.num_species
    out = np.zeros((P, P) + rho.shape[1:])
    for p, h in enumerate(energy.entropies):
        if h is not None:
            out[p, p] += h.d2(rho[p])
    if energy.H_sigma is not None:
        out += energy.H_sigma.d2(rho.sum(axis=0))
    return out


def entropy_variables(rho_next, rho_prev, energy, grid):
    """``xi_p = H_p'(rho_p) + H_sigma'(sigma) + V_p + sum_q W_pq * rho_q**``.

    ``rho** = (rho_next + rho_prev) / 2``.  Works on 1D and 2D grids.
    """
    rho_next = np.asarray(rho_next, dtype=float)
    mid = 0.5 * (rho_next + np.asarray(rho_prev, dtype=float))
    return (
        local_entropy_variables(rho_next, energy)
        + energy.potential_values(grid)
        + interaction_potentials(mid, energy, grid)
    )


def entropy_variables_scalar(rho_next, rho_prev, energy, grid):
    if energy.num_species != 1:
        raise ValueError("scalar entropy variables need a one-species energy")
    return entropy_variables(rho_next, rho_prev, energy, grid)


def entropy_variables_system(rho_next, eta_next, rho_prev, eta_prev, energy, grid):
    if energy.num_species != 2:
        raise ValueError("system entropy variables need a two-species energy")
    return entropy_variables(
        np.stack([rho_next, eta_next]), np.stack([rho_prev, eta_prev]), energy, grid
    )


def interface_velocity(xi, rho, energy, grid):
    """``u_{i+1/2} = -S_{i+1/2} (xi_{i+1} - xi_i) / dx`` on all ``N + 1`` interfaces.

    ``S_{i+1/2} = (R(rho_i) + R(rho_{i+1})) / 2``.  Boundary values are zero
    for no-flux grids.
    """
    from .fluxes import full_flux

    left, right = interface_cells(grid)
    xi, rho = np.asarray(xi, dtype=float), np.asarray(rho, dtype=float)
    mob = energy.mobility(rho)
    S = 0.5 * (mob[..., left] + mob[..., right])
    grad = (xi[..., right] - xi[..., left]) / grid.cell_size
    return full_flux(-np.einsum("pr...,r...->p...", S, grad), grid)


def discrete_energy(rho, energy, grid):
    """Discrete free energy ``E_Delta`` of a field of shape ``(P, *grid.shape)``."""
    rho = np.asarray(rho, dtype=float)
    dv = grid.cell_volume
    total = 0.0
    for p, h in enumerate(energy.entropies):
        if h is not None:
            total += np.sum(h(rho[p])) * dv
    if energy.H_sigma is not None:
        total += np.sum(energy.H_sigma(rho.sum(axis=0))) * dv
    total += np.sum(energy.potential_values(grid) * rho) * dv
    if energy.has_kernels:
        total += 0.5 * np.sum(rho * interaction_potentials(rho, energy, grid)) * dv
    return float(total)


class GradientFlowVelocity:
    """State-dependent velocity of one implicit gradient-flow step along one axis.

    The entropy variable of a batch of 1D lines (shape ``(P, B, N)``) is

        xi = H'(rho) + H_sigma'(sigma) + external + A rho**

    where ``external`` collects confinement and any frozen interaction terms
    and ``A[p, q]`` is an ``N x N`` convolution operator (or ``None``).
    """

    def __init__(self, energy, dx, periodic, rho_prev, external, conv=None):
        self.energy = energy
        self.dx = dx
        self.line = Grid1D(rho_prev.shape[-1], dx, 0.0, "periodic" if periodic else "noflux")
        self.rho_prev = rho_prev
        self.external = external
        self.conv = conv
        self.left, self.right = interface_cells(self.line)

    @classmethod
    def on_grid(cls, energy, grid, rho_prev):
        """Velocity model for a plain 1D step (``rho_prev`` of shape ``(P, N)``)."""
        P = energy.num_species
        conv = None
        if energy.has_kernels:
            conv = np.zeros((P, P, grid.num_cells, grid.num_cells))
            for p in range(P):
                for q in range(P):
                    w = energy.kernel(p, q)
                    if w is not None:
                        conv[p, q] = convolution_matrix(w, grid)
        return cls(
            energy,
            grid.cell_size,
            grid.periodic,
            rho_prev[:, np.newaxis],
            energy.potential_values(grid)[:, np.newaxis],
            conv,
        )

    @property
    def positivity_required(self):
        return self.energy.singular_at_zero

    def select(self, b):
        """Model restricted to line ``b`` of the batch."""
        external = self.external if self.external.shape[1] == 1 else self.external[:, b : b + 1]
        return GradientFlowVelocity(
            self.energy, self.dx, self.line.periodic, self.rho_prev[:, b : b + 1], external, self.conv
        )

    def xi(self, rho):
        out = local_entropy_variables(rho, self.energy) + self.external
        if self.conv is not None:
            mid = 0.5 * (rho + self.rho_prev)
            out = out + np.einsum("pqij,qbj->pbi", self.conv, mid)
        return out

    def velocity(self, rho):
        xi = self.xi(rho)
        L, R = self.left, self.right
        mob = self.energy.mobility(rho)
        S = 0.5 * (mob[..., L] + mob[..., R])
        grad = (xi[..., R] - xi[..., L]) / self.dx
        return -np.einsum("prbk,rbk->pbk", S, grad)

    def linearize(self, rho):
        """Velocity and its derivatives with respect to the cell densities.

        Returns ``(u, dU_left, dU_right, nonlocal)`` where ``dU_left[p, q]``
        is ``d u_p / d rho_q`` at the left cell of each interface (local
        terms only) and ``nonlocal[p, q, b, k, j]`` is the dense contribution
        of the convolution, or ``None``.
        """
        energy, L, R, dx = self.energy, self.left, self.right, self.dx
        xi = self.xi(rho)
        dxi = xi[..., R] - xi[..., L]
        mob = energy.mobility(rho)
        S = 0.5 * (mob[..., L] + mob[..., R])
        u = -np.einsum("prbk,rbk->pbk", S, dxi) / dx

        hess = local_entropy_hessian(rho, energy)
        dmob = energy.mobility_derivative(rho)
        dU_left = -(
            0.5 * np.einsum("prqbk,rbk->pqbk", dmob[..., L], dxi)
            - np.einsum("prbk,rqbk->pqbk", S, hess[..., L])
        ) / dx
        dU_right = -(
            0.5 * np.einsum("prqbk,rbk->pqbk", dmob[..., R], dxi)
            + np.einsum("prbk,rqbk->pqbk", S, hess[..., R])
        ) / dx

        nonlocal_part = None
        if self.conv is not None:
            jump = 0.5 * (self.conv[:, :, R, :] - self.conv[:, :, L, :])  # [r, q, k, j]
            nonlocal_part = -np.einsum("prbk,rqkj->pqbkj", S, jump) / dx
        return u, dU_left, dU_right, nonlocal_part
