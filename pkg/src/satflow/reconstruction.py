"""Minmod-limited piecewise-linear reconstruction of cell averages."""
from __future__ import annotations

from typing import NamedTuple

import numpy as np


class InterfaceStates(NamedTuple):
    """East/west edge values per species, plus those of the total density.

    All arrays keep the layout of the input field; the last axis runs over
    cells.  ``sigma_east``/``sigma_west`` come from the limited slopes of the
    total density itself and generally differ from ``east.sum(0)``.
    """

    east: np.ndarray
    west: np.ndarray
    sigma_east: np.ndarray
    sigma_west: np.ndarray


def minmod(a, b, c):
    """Elementwise minmod: the smallest argument when all three share a strict sign, else 0."""
    a, b, c = np.broadcast_arrays(*(np.asarray(v, dtype=float) for v in (a, b, c)))
    out = np.zeros(a.shape)
    pos = (a > 0) & (b > 0) & (c > 0)
    neg = (a < 0) & (b < 0) & (c < 0)
    out[pos] = np.minimum(np.minimum(a, b), c)[pos]
    out[neg] = np.maximum(np.maximum(a, b), c)[neg]
    return out if out.ndim else float(out)


def _neighbours(values, periodic):
    if periodic:
        return np.roll(values, 1, axis=-1), np.roll(values, -1, axis=-1)
    # zero-gradient ghosts: boundary slopes vanish
    left = np.concatenate([values[..., :1], values[..., :-1]], axis=-1)
    right = np.concatenate([values[..., 1:], values[..., -1:]], axis=-1)
    return left, right


def limited_slope(values, dx, theta=2.0, periodic=False):
    left, right = _neighbours(values, periodic)
    return minmod(
        theta * (right - values) / dx,
        (right - left) / (2 * dx),
        theta * (values - left) / dx,
    )


def reconstruct(field, grid, theta=2.0):
    """Edge states ``rho^E = rho + dx/2 rho_x`` and ``rho^W = rho - dx/2 rho_x``.

    ``field`` has the species on axis 0 and cells on the last axis (extra
    batch axes in between are allowed).
    """
    if not 0 <= theta <= 2:
        raise ValueError(f"theta must lie in [0, 2], got {theta}")
    field = np.asarray(field, dtype=float)
    dx, periodic = grid.cell_size, grid.periodic

    half_jump = 0.5 * dx * limited_slope(field, dx, theta, periodic)
    sigma = field.sum(axis=0)
    sigma_jump = 0.5 * dx * limited_slope(sigma, dx, theta, periodic)
    return InterfaceStates(
        field + half_jump, field - half_jump, sigma + sigma_jump, sigma - sigma_jump
    )
