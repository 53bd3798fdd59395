"""Upwind numerical fluxes with receiver-side saturation, and CFL bounds.

Velocities and fluxes live on the ``N + 1`` cell interfaces
``x_{1/2}, ..., x_{N+1/2}`` (last axis).  With no-flux boundaries the two
outer fluxes are exactly zero; with periodic boundaries the first and last
interface are the same face and carry the same flux.
"""
from __future__ import annotations

import math

import numpy as np


def positive(v):
    return np.maximum(v, 0.0)


def negative(v):
    return np.minimum(v, 0.0)


def interface_cells(grid):
    """Indices ``(left, right)`` of the cells adjacent to each active interface.

    Active interfaces are the interior ones, plus the wrap-around face for
    periodic grids (listed last, between cell ``N-1`` and cell ``0``).
    """
    n = grid.num_cells
    left = np.arange(n if grid.periodic else n - 1)
    return left, (left + 1) % n


def active_velocity(u, grid):
    """Restrict a velocity on all ``N + 1`` interfaces to the active ones."""
    u = np.asarray(u, dtype=float)
    n = grid.num_cells
    if u.shape[-1] != n + 1:
        raise ValueError(f"velocity needs {n + 1} interface values, got {u.shape[-1]}")
    return u[..., 1 : n + 1] if grid.periodic else u[..., 1:n]


def full_flux(active, grid):
    """Embed active-interface fluxes into the ``N + 1`` interface layout."""
    shape = active.shape[:-1] + (grid.num_cells + 1,)
    out = np.zeros(shape)
    if grid.periodic:
        out[..., 1:] = active
        out[..., 0] = active[..., -1]
    else:
        out[..., 1:-1] = active
    return out


def flux_divergence(flux):
    """``F_{i+1/2} - F_{i-1/2}`` for every cell."""
    return flux[..., 1:] - flux[..., :-1]


def explicit_flux_system(states, saturation, u, grid):
    """``diag(rho_i^E) psi_{i+1}^W u^+ + diag(rho_{i+1}^W) psi_i^E u^-``.

    ``psi`` is evaluated on the reconstructed total density, so all species
    share the same receiver-side saturation factor.
    """
    left, right = interface_cells(grid)
    ua = active_velocity(u, grid)
    psi_e = saturation(states.sigma_east)
    psi_w = saturation(states.sigma_west)
    flux = (
        states.east[..., left] * psi_w[..., right] * positive(ua)
        + states.west[..., right] * psi_e[..., left] * negative(ua)
    )
    return full_flux(flux, grid)


def explicit_flux_scalar(states, saturation, u, grid):
    """``rho_i^E psi(rho_{i+1}^W) u^+ + rho_{i+1}^W psi(rho_i^E) u^-``."""
    if states.east.shape[0] != 1:
        raise ValueError("scalar flux expects a single species")
    return explicit_flux_system(states, saturation, u, grid)


def implicit_flux_system(rho, saturation, u, grid):
    """First-order flux with the positive part of ``psi`` on the total density."""
    rho = np.asarray(rho, dtype=float)
    left, right = interface_cells(grid)
    ua = active_velocity(u, grid)
    psi_plus = positive(saturation(rho.sum(axis=0)))
    flux = rho[..., left] * psi_plus[..., right] * positive(ua) + rho[..., right] * psi_plus[
        ..., left
    ] * negative(ua)
    return full_flux(flux, grid)


def implicit_flux_scalar(rho, saturation, u, grid):
    rho = np.asarray(rho, dtype=float)
    if rho.shape[0] != 1:
        raise ValueError("scalar flux expects a single species")
    return implicit_flux_system(rho, saturation, u, grid)


def _max_speed(u):
    u = np.asarray(u, dtype=float)
    return float(np.max(np.abs(u))) if u.size else 0.0


def cfl_dt_scalar(saturation, u, dx):
    """Largest step keeping ``0 <= rho <= alpha`` for the explicit scalar scheme."""
    speed = _max_speed(u)
    if speed == 0:
        return math.inf
    big_gamma = min(1.0 / saturation.psi_at_zero, saturation.gamma)
    return big_gamma * dx / (2 * speed)


def cfl_dt_system(saturation, u, dx):
    """Largest step keeping ``rho >= 0`` and ``sigma <= alpha`` for the explicit system scheme."""
    speed = _max_speed(u)
    if speed == 0:
        return math.inf
    big_gamma = min(2.0 / saturation.psi_at_zero, saturation.gamma)
    return big_gamma * dx / (4 * speed)
