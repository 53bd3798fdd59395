"""Time stepping: explicit MUSCL steps, implicit steps and 2D sweeping splitting.

Implicit steps solve the fully implicit upwind system

    rho - rho^n + dt/dx (F_{i+1/2}(rho) - F_{i-1/2}(rho)) = 0

with Newton's method (default) or lagged-coefficient Picard iteration.  All
1D kernels operate on batches of lines shaped ``(P, B, N)`` so that the
independent rows of a dimensional sweep are solved together.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
import scipy.linalg
import scipy.signal
import scipy.sparse
import scipy.sparse.linalg

from .core import FixedDt, Grid1D, Grid2D, SaturationSpec
from .diagnostics import DiagnosticsSeries
from .fluxes import (
    active_velocity,
    cfl_dt_scalar,
    cfl_dt_system,
    explicit_flux_system,
    flux_divergence,
    full_flux,
    interface_cells,
    negative,
    positive,
)
from .gradientflow import (
    EnergySpec,
    GradientFlowVelocity,
    interaction_potentials,
    kernel_table,
    local_entropy_variables,
)
from .reconstruction import reconstruct

log = logging.getLogger(__name__)


class CflViolation(ValueError):
    """A fixed explicit time step exceeds the bound-preserving CFL limit."""


class SolverFailure(RuntimeError):
    """The implicit nonlinear solve did not converge."""

    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report


@dataclass
class StepReport:
    dt_used: float
    iterations: int = 0
    update: float = 0.0
    residual: float = 0.0
    accepted: bool = True

    @property
    def picard_iterations(self):
        return self.iterations

    @property
    def picard_residual(self):
        """l-infinity norm of the last nonlinear update."""
        return self.update

    def merge(self, other):
        return StepReport(
            self.dt_used,
            self.iterations + other.iterations,
            max(self.update, other.update),
            max(self.residual, other.residual),
            self.accepted and other.accepted,
        )


# -- velocity models ----------------------------------------------------------


class PrescribedVelocity:
    """A fixed velocity on the active interfaces of a batch of lines."""

    positivity_required = False

    def __init__(self, u_active):
        self.u = np.asarray(u_active, dtype=float)

    def velocity(self, rho):
        return self.u

    def linearize(self, rho):
        zeros = np.zeros((self.u.shape[0],) + self.u.shape)
        return self.u, zeros, zeros, None

    def select(self, b):
        return PrescribedVelocity(self.u[:, b : b + 1])


# -- implicit residual and Jacobian -------------------------------------------


def _as_lines(rho):
    rho = np.asarray(rho, dtype=float)
    return rho[:, np.newaxis] if rho.ndim == 2 else rho


def implicit_residual(rho, rho_prev, model, saturation, dt, line):
    """Residual of the implicit scheme for a batch of lines ``(P, B, N)``."""
    left, right = interface_cells(line)
    u = model.velocity(rho)
    psi_plus = positive(saturation(rho.sum(axis=0)))
    flux = rho[..., left] * psi_plus[..., right] * positive(u) + rho[..., right] * psi_plus[
        ..., left
    ] * negative(u)
    return rho - rho_prev + dt / line.cell_size * flux_divergence(full_flux(flux, line))


def _flatten(a):
    # (P, B, N) -> cell-major vector, index (b * N + i) * P + p
    return a.transpose(1, 2, 0).ravel()


def _unflatten(v, shape):
    P, B, N = shape
    return v.reshape(B, N, P).transpose(2, 0, 1)


def implicit_jacobian(rho, model, saturation, dt, line, frozen=False):
    """Jacobian of :func:`implicit_residual` in the cell-major ordering.

    With ``frozen=True`` the saturation and velocity are treated as constants
    (the lagged-coefficient operator used by Picard iteration).  Returns a
    sparse matrix, or a dense array when the velocity has a nonlocal part.
    """
    P, B, N = rho.shape
    lam = dt / line.cell_size
    left, right = interface_cells(line)
    eye = np.eye(P)[:, :, None, None]

    psi_plus, dpsi_plus = saturation.positive_part(rho.sum(axis=0))
    a, b = psi_plus[..., right], psi_plus[..., left]
    if frozen:
        u = model.velocity(rho)
        up, um = positive(u), negative(u)
        dF_left = eye * (a * up)[:, None]
        dF_right = eye * (b * um)[:, None]
        nonlocal_part = None
    else:
        u, dU_left, dU_right, nonlocal_part = model.linearize(rho)
        up, um = positive(u), negative(u)
        da, db = dpsi_plus[..., right], dpsi_plus[..., left]
        rho_l, rho_r = rho[..., left], rho[..., right]
        dF_du = rho_l * a * (u > 0) + rho_r * b * (u < 0)
        dF_left = eye * (a * up)[:, None] + (rho_r * db * um)[:, None] + dF_du[:, None] * dU_left
        dF_right = (rho_l * da * up)[:, None] + eye * (b * um)[:, None] + dF_du[:, None] * dU_right

    offset = (np.arange(B) * N)[:, None]
    cell_l, cell_r = offset + left, offset + right  # (B, K)
    p_idx = np.arange(P)[:, None, None, None]
    q_idx = np.arange(P)[None, :, None, None]
    rows, cols, vals = [], [], []
    for cells, dF in ((cell_l, dF_left), (cell_r, dF_right)):
        col = np.broadcast_to(cells * P + q_idx, dF.shape)
        for sign, target in ((1.0, cell_l), (-1.0, cell_r)):
            rows.append(np.broadcast_to(target * P + p_idx, dF.shape).ravel())
            cols.append(col.ravel())
            vals.append(sign * lam * dF.ravel())
    n = P * B * N
    rows.append(np.arange(n))
    cols.append(np.arange(n))
    vals.append(np.ones(n))
    jac = scipy.sparse.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n)
    ).tocsc()
    if nonlocal_part is None:
        return jac

    incidence = np.zeros((N, len(left)))
    np.add.at(incidence, (left, np.arange(len(left))), 1.0)
    np.add.at(incidence, (right, np.arange(len(left))), -1.0)
    dense = jac.toarray()
    for bb in range(B):
        block = lam * np.einsum(
            "ik,pk,pqkj->ipjq", incidence, dF_du[:, bb], nonlocal_part[:, :, bb]
        ).reshape(N * P, N * P)
        sl = slice(bb * N * P, (bb + 1) * N * P)
        dense[sl, sl] += block
    return dense


def _linear_solve(matrix, rhs):
    if scipy.sparse.issparse(matrix):
        return scipy.sparse.linalg.spsolve(matrix, rhs)
    return scipy.linalg.solve(matrix, rhs, check_finite=False)


@dataclass
class SolveInfo:
    iterations: int
    update: float
    residual: float
    converged: bool


def solve_implicit(rho_prev, model, saturation, dt, line, options):
    """Solve one implicit step for a batch of lines; returns ``(rho, SolveInfo)``.

    Newton (the default) solves the whole batch at once.  If that fails, the
    lines, which are independent, are solved one at a time.  A line that
    still fails is solved by continuation in the step size, and Picard
    iteration is the last resort.
    """
    rho_prev = np.asarray(rho_prev, dtype=float)
    if options.method == "picard":
        return _solve_picard(rho_prev, model, saturation, dt, line, options)
    rho, info = _solve_newton(rho_prev, model, saturation, dt, line, options)
    if info.converged:
        return rho, info
    B = rho_prev.shape[1]
    if B == 1:
        log.debug("Newton failed (%s); continuing in dt", info)
        rho, fallback = _solve_continuation(rho_prev, model, saturation, dt, line, options)
        spent = info.iterations + fallback.iterations
        if not fallback.converged:
            log.debug("continuation failed (%s); falling back to Picard", fallback)
            rho, fallback = _solve_picard(rho_prev, model, saturation, dt, line, options)
            spent += fallback.iterations
        return rho, SolveInfo(spent, fallback.update, fallback.residual, fallback.converged)
    out = np.empty_like(rho_prev)
    total = SolveInfo(info.iterations, 0.0, 0.0, True)
    for b in range(B):
        out[:, b : b + 1], part = solve_implicit(rho_prev[:, b : b + 1], model.select(b), saturation, dt, line,
                                                 options)
        total = SolveInfo(total.iterations + part.iterations, max(total.update, part.update),
                          max(total.residual, part.residual), total.converged and part.converged)
    return out, total


def _picard_update(rho, rho_prev, model, saturation, dt, line):
    """Solve the lagged-coefficient linear system once, starting from ``rho``."""
    with np.errstate(invalid="ignore", over="ignore", divide="ignore"):
        op = implicit_jacobian(rho, model, saturation, dt, line, frozen=True)
        return _unflatten(_linear_solve(op, _flatten(rho_prev)), rho.shape)


_STALL_WINDOW = 10


def _project_admissible(rho, alpha, floor=0.0):
    """Clip to ``rho >= floor`` and rescale species where ``sigma > alpha``."""
    rho = np.maximum(rho, floor)
    if math.isfinite(alpha):
        sigma = rho.sum(axis=0)
        over = sigma > alpha
        if np.any(over):
            rho = np.where(over, rho * (alpha / np.where(over, sigma, 1.0)), rho)
    return rho


def _solve_newton(rho_prev, model, saturation, dt, line, options, start=None):
    shape = rho_prev.shape
    rho = (rho_prev if start is None else start).copy()
    alpha = saturation.alpha

    def residual(r):
        with np.errstate(invalid="ignore", over="ignore"):
            return implicit_residual(r, rho_prev, model, saturation, dt, line)

    G = residual(rho)
    gnorm = np.linalg.norm(G)
    history = [gnorm]
    update = math.inf
    for it in range(1, options.max_iterations + 1):
        with np.errstate(invalid="ignore", over="ignore", divide="ignore"):
            jac = implicit_jacobian(rho, model, saturation, dt, line)
            delta = _unflatten(_linear_solve(jac, -_flatten(G)), shape)
        tau = options.damping if np.all(np.isfinite(delta)) else 0.0
        if tau and model.positivity_required:
            shrinking = delta < 0
            if np.any(shrinking):
                tau = min(tau, 0.95 * float(np.min(rho[shrinking] / -delta[shrinking])))
        while tau:
            # the solution is admissible, and inside the admissible set the
            # residual is smooth, so iterates are projected back onto it
            trial = _project_admissible(rho + tau * delta, alpha)
            G_trial = residual(trial)
            g_trial = np.linalg.norm(G_trial)
            small = tau * np.max(np.abs(delta)) <= options.tolerance
            if np.isfinite(g_trial) and (g_trial <= (1 - 1e-4 * tau) * gnorm or small):
                break
            tau *= 0.5
            if tau < 1e-10:
                tau = 0.0
        if not tau:
            return rho, SolveInfo(it, math.inf, float(np.max(np.abs(G))), False)
        update = tau * float(np.max(np.abs(delta)))
        rho, G, gnorm = trial, G_trial, g_trial
        history.append(gnorm)
        if update <= options.tolerance and np.max(np.abs(G)) <= 10 * options.tolerance:
            return rho, SolveInfo(it, update, float(np.max(np.abs(G))), True)
        if len(history) > _STALL_WINDOW and gnorm > 0.99 * history[-_STALL_WINDOW - 1]:
            # stuck on a kink of the clamped saturation
            return rho, SolveInfo(it, update, float(np.max(np.abs(G))), False)
    return rho, SolveInfo(options.max_iterations, update, float(np.max(np.abs(G))), False)


def _solve_continuation(rho_prev, model, saturation, dt, line, options, min_fraction=1e-6):
    """Newton along ``h = s dt``, ``s: 0 -> 1``, warm-started from the last accepted stage.

    Only the solution at ``s = 1`` is returned, so the equation solved is
    unchanged; small stages just give Newton a starting point inside its
    basin.  The stage length doubles after a success and halves after a
    failure.
    """
    s, ds, rho, spent = 0.0, 0.25, rho_prev.copy(), 0
    info = SolveInfo(0, math.inf, math.inf, False)
    while s < 1.0:
        target = min(1.0, s + ds)
        trial, info = _solve_newton(rho_prev, model, saturation, target * dt, line, options, start=rho)
        spent += info.iterations
        if info.converged:
            s, rho, ds = target, trial, min(2 * ds, 1.0)
        else:
            ds /= 2
            if ds < min_fraction:
                return rho, SolveInfo(spent, info.update, info.residual, False)
    return rho, SolveInfo(spent, info.update, info.residual, True)


def _solve_picard(rho_prev, model, saturation, dt, line, options):
    rho = rho_prev.copy()
    damping = options.damping
    previous = math.inf
    update = math.inf
    for it in range(1, options.max_iterations + 1):
        target = _picard_update(rho, rho_prev, model, saturation, dt, line)
        if not np.all(np.isfinite(target)):
            break
        step = target - rho
        update = float(np.max(np.abs(step)))
        if update > previous and damping > 0.5:
            damping = 0.5
        previous = update
        rho = rho + damping * step
        if damping * update <= options.tolerance:
            res = implicit_residual(rho, rho_prev, model, saturation, dt, line)
            return rho, SolveInfo(it, damping * update, float(np.max(np.abs(res))), True)
    res = implicit_residual(rho, rho_prev, model, saturation, dt, line)
    return rho, SolveInfo(options.max_iterations, update, float(np.max(np.abs(res))), False)


# -- dynamics -----------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Dynamics:
    """What drives a run: a saturation plus either a gradient-flow energy or a velocity.

    ``velocity`` maps interface coordinates to a ``(P, ...)`` array: ``u(x)``
    in 1D, ``(u_x, u_y) = u(x, y)`` in 2D.  ``source(t, *coords)`` adds an
    explicit source after the transport step.
    """

    saturation: SaturationSpec
    energy: EnergySpec | None = None
    velocity: Callable | None = None
    source: Callable | None = None

    def __post_init__(self):
        if (self.energy is None) == (self.velocity is None):
            raise ValueError("specify exactly one of energy or velocity")

    @property
    def gradient_flow(self):
        return self.energy is not None


def prescribed_velocity(dynamics, grid, axis=0):
    """Velocity of a prescribed-velocity problem on the ``N + 1`` interfaces of ``axis``."""
    if isinstance(grid, Grid1D):
        return np.atleast_2d(np.asarray(dynamics.velocity(grid.interfaces), dtype=float))
    gx, gy = grid.grid_x, grid.grid_y
    if axis == 0:
        X, Y = np.meshgrid(gx.interfaces, gy.centers, indexing="ij")
    else:
        X, Y = np.meshgrid(gx.centers, gy.interfaces, indexing="ij")
    u = np.asarray(dynamics.velocity(X, Y)[axis], dtype=float)
    return np.broadcast_to(u, (u.shape[0],) + X.shape) if u.ndim == 3 else u[np.newaxis]


def _explicit_dt_bound(saturation, u_active, dx, num_species):
    if num_species == 1:
        return cfl_dt_scalar(saturation, u_active, dx)
    return cfl_dt_system(saturation, u_active, dx)


def explicit_update(rho, u, saturation, line, dt, theta=2.0):
    """One explicit MUSCL step for a batch of lines (``u`` on all interfaces)."""
    states = reconstruct(rho, line, theta)
    flux = explicit_flux_system(states, saturation, u, line)
    return rho - dt / line.cell_size * flux_divergence(flux)


def explicit_step(state, u, saturation, config, grid, dt=None):
    """Explicit step with a prescribed interface velocity on a 1D grid.

    ``dt`` defaults to the configured policy; a fixed step above the CFL
    bound raises :class:`CflViolation`.
    """
    state = np.asarray(state, dtype=float)
    u = np.asarray(u, dtype=float)
    bound = _explicit_dt_bound(saturation, active_velocity(u, grid), grid.cell_size, state.shape[0])
    policy = config.dt_policy
    if dt is None:
        dt = policy.dt if isinstance(policy, FixedDt) else policy.safety * bound
    if isinstance(policy, FixedDt) and dt > bound * (1 + 1e-12):
        raise CflViolation(f"dt = {dt:.6g} exceeds the CFL bound {bound:.6g}")
    if math.isinf(dt):
        return state.copy(), StepReport(dt)
    new = explicit_update(state, u, saturation, grid, dt, config.theta)
    return new, StepReport(dt)


def implicit_step(state, velocity, saturation, config, grid, dt=None):
    """Implicit step on a 1D grid.

    ``velocity`` is either an interface velocity array (prescribed) or a
    velocity model exposing ``velocity``/``linearize`` (e.g.
    :class:`~satflow.gradientflow.GradientFlowVelocity`).
    """
    state = np.asarray(state, dtype=float)
    if dt is None:
        if not isinstance(config.dt_policy, FixedDt):
            raise ValueError("implicit schemes need a fixed time step")
        dt = config.dt_policy.dt
    model = velocity
    if not hasattr(velocity, "linearize"):
        model = PrescribedVelocity(active_velocity(velocity, grid)[:, np.newaxis])
    rho, info = solve_implicit(state[:, np.newaxis], model, saturation, dt, grid, config.solver)
    report = StepReport(dt, info.iterations, info.update, info.residual, info.converged)
    if not info.converged:
        raise SolverFailure(
            f"implicit solve did not converge in {info.iterations} iterations "
            f"(update {info.update:.3g}, residual {info.residual:.3g})",
            report,
        )
    return rho[:, 0], report


def gradient_flow_step(state, energy, saturation, config, grid, dt=None):
    """Implicit energy-dissipating step of a 1D gradient flow."""
    state = np.asarray(state, dtype=float)
    model = GradientFlowVelocity.on_grid(energy, grid, state)
    return implicit_step(state, model, saturation, config, grid, dt)


# -- one step of a problem in 1D or 2D -----------------------------------------


def _source_update(rho, dynamics, grid, t_new, dt):
    if dynamics.source is None:
        return rho
    return rho + dt * np.asarray(dynamics.source(t_new, *grid.mesh()), dtype=float)


def _line_grid(grid, axis):
    if isinstance(grid, Grid1D):
        return grid
    return grid.grid_x if axis == 0 else grid.grid_y


def _explicit_velocity(rho, dynamics, grid, axis):
    """Full-interface velocity along ``axis`` for an explicit step, lines layout."""
    line = _line_grid(grid, axis)
    if not dynamics.gradient_flow:
        u = prescribed_velocity(dynamics, grid, axis)
        return u if isinstance(grid, Grid1D) else np.moveaxis(u, 1 + axis, -1)
    energy = dynamics.energy
    xi = (
        local_entropy_variables(rho, energy)
        + energy.potential_values(grid)
        + interaction_potentials(rho, energy, grid)
    )
    rho_l, xi_l = _to_lines(rho, grid, axis), _to_lines(xi, grid, axis)
    # xi is frozen at the current state: pass it whole as the external part
    external = xi_l - local_entropy_variables(rho_l, energy)
    model = GradientFlowVelocity(energy, line.cell_size, line.periodic, rho_l, external)
    u = full_flux(model.velocity(rho_l), line)
    return u[:, 0] if isinstance(grid, Grid1D) else u


def _to_lines(a, grid, axis):
    if isinstance(grid, Grid1D):
        return a[:, np.newaxis]
    return np.moveaxis(a, 1 + axis, -1)


def _from_lines(a, grid, axis):
    if isinstance(grid, Grid1D):
        return a[:, 0]
    return np.moveaxis(a, -1, 1 + axis)


def explicit_dt_limit(rho, dynamics, grid):
    """CFL bound of the explicit scheme for the current state (min over sweep directions)."""
    bound = math.inf
    for axis in range(grid.ndim):
        u = _explicit_velocity(rho, dynamics, grid, axis)
        line = _line_grid(grid, axis)
        bound = min(
            bound,
            _explicit_dt_bound(dynamics.saturation, active_velocity(u, line), line.cell_size, rho.shape[0]),
        )
    return bound


def _explicit_sweep(rho, dynamics, grid, axis, dt, config):
    line = _line_grid(grid, axis)
    u = _explicit_velocity(rho, dynamics, grid, axis)
    bound = _explicit_dt_bound(
        dynamics.saturation, active_velocity(u, line), line.cell_size, rho.shape[0]
    )
    if dt > bound * (1 + 1e-12):
        raise CflViolation(f"dt = {dt:.6g} exceeds the CFL bound {bound:.6g} along axis {axis}")
    if isinstance(grid, Grid1D):
        return explicit_update(rho, u, dynamics.saturation, line, dt, config.theta)
    lines = explicit_update(_to_lines(rho, grid, axis), u, dynamics.saturation, line, dt, config.theta)
    return _from_lines(lines, grid, axis)


def _implicit_sweep(rho, dynamics, grid, axis, dt, config):
    line = _line_grid(grid, axis)
    lines = _to_lines(rho, grid, axis)
    energy = dynamics.energy
    if not dynamics.gradient_flow:
        u = prescribed_velocity(dynamics, grid, axis)
        u = u[:, np.newaxis] if isinstance(grid, Grid1D) else np.moveaxis(u, 1 + axis, -1)
        model = PrescribedVelocity(active_velocity(u, line))
        new, report = _solve_lines(lines, model, dynamics, line, dt, config)
        return _from_lines(new, grid, axis), report
    if isinstance(grid, Grid1D) or not energy.has_kernels:
        if isinstance(grid, Grid1D):
            model = GradientFlowVelocity.on_grid(energy, grid, rho)
        else:
            external = _to_lines(energy.potential_values(grid), grid, axis)
            model = GradientFlowVelocity(energy, line.cell_size, line.periodic, lines, external)
        new, report = _solve_lines(lines, model, dynamics, line, dt, config)
        return _from_lines(new, grid, axis), report
    return _sequential_nonlocal_sweep(rho, dynamics, grid, axis, dt, config)


def _solve_lines(lines, model, dynamics, line, dt, config):
    new, info = solve_implicit(lines, model, dynamics.saturation, dt, line, config.solver)
    report = StepReport(dt, info.iterations, info.update, info.residual, info.converged)
    if not info.converged:
        raise SolverFailure(
            f"implicit solve did not converge in {info.iterations} iterations "
            f"(update {info.update:.3g}, residual {info.residual:.3g})",
            report,
        )
    return new, report


def _sequential_nonlocal_sweep(rho, dynamics, grid, axis, dt, config):
    """Sweep lines one after another, refreshing the interaction field after each.

    Every line solve sees the other lines frozen at their latest values, so
    each sub-step is a 1D energy-dissipating step of the full 2D energy.
    """
    energy = dynamics.energy
    line = _line_grid(grid, axis)
    P = energy.num_species
    lines = _to_lines(rho, grid, axis).copy()  # (P, B, N)
    _, B, N = lines.shape
    potential = _to_lines(energy.potential_values(grid), grid, axis)
    interaction = _to_lines(interaction_potentials(rho, energy, grid), grid, axis).copy()

    tables = {}
    conv = np.zeros((P, P, N, N))
    for p in range(P):
        for q in range(P):
            w = energy.kernel(p, q)
            if w is None:
                continue
            table = kernel_table(w, grid)
            table = table if axis == 0 else table.T  # (2N - 1, 2B - 1) in line frame
            tables[p, q] = table
            column = table[:, B - 1]
            conv[p, q] = scipy.linalg.toeplitz(column[N - 1 :], column[N - 1 :: -1])

    total = StepReport(dt)
    for b in range(B):
        current = lines[:, b : b + 1]
        external = potential[:, b : b + 1] + interaction[:, b : b + 1] - np.einsum(
            "pqij,qbj->pbi", conv, current
        )
        model = GradientFlowVelocity(energy, line.cell_size, line.periodic, current, external, conv)
        new, info = solve_implicit(current, model, dynamics.saturation, dt, line, config.solver)
        report = StepReport(dt, info.iterations, info.update, info.residual, info.converged)
        if not info.converged:
            raise SolverFailure(f"implicit solve of line {b} did not converge", report)
        total = total.merge(report)
        change = new[:, 0] - current[:, 0]
        lines[:, b] = new[:, 0]
        for (p, q), table in tables.items():
            window = table[:, B - 1 - b : 2 * B - 1 - b]  # transverse offsets b' - b
            contrib = scipy.signal.fftconvolve(change[q][:, None], window, axes=0)[N - 1 : 2 * N - 1]
            interaction[p] += contrib.T
    return _from_lines(lines, grid, axis), total


def advance(rho, dynamics, grid, config, dt, t=0.0, step_index=0):
    """One full time step: sweeps (alternating order in 2D) followed by sources."""
    rho = np.asarray(rho, dtype=float)
    axes = list(range(grid.ndim))
    if step_index % 2 == 1:
        axes.reverse()
    report = StepReport(dt)
    for axis in axes:
        if config.scheme.explicit:
            rho = _explicit_sweep(rho, dynamics, grid, axis, dt, config)
        else:
            rho, sweep_report = _implicit_sweep(rho, dynamics, grid, axis, dt, config)
            report = report.merge(sweep_report)
    rho = _source_update(rho, dynamics, grid, t + dt, dt)
    return rho, report


def step_2d(state, dynamics, grid, config, dt, t=0.0, step_index=0):
    """One dimensionally split step on a :class:`Grid2D` (x-first on even steps)."""
    if not isinstance(grid, Grid2D):
        raise TypeError("step_2d needs a Grid2D")
    return advance(state, dynamics, grid, config, dt, t, step_index)


# -- evolution ------------------------------------------------------------------


class EvolutionAborted(RuntimeError):
    def __init__(self, message, series):
        super().__init__(message)
        self.series = series


def _advance_with_retries(rho, dynamics, grid, config, dt, t, step_index, depth=0):
    try:
        return advance(rho, dynamics, grid, config, dt, t, step_index)
    except SolverFailure:
        if depth >= config.max_halvings:
            raise
        log.info("step at t=%.6g rejected; halving dt to %.3g", t, dt / 2)
        half, r1 = _advance_with_retries(rho, dynamics, grid, config, dt / 2, t, step_index, depth + 1)
        full, r2 = _advance_with_retries(
            half, dynamics, grid, config, dt / 2, t + dt / 2, step_index + 1, depth + 1
        )
        merged = r1.merge(r2)
        merged.dt_used = dt
        return full, merged


def evolve(initial, dynamics, grid, config, t_end, callback=None):
    """Advance ``initial`` to exactly ``t_end`` and return the diagnostics series.

    The last step is shortened to land on ``t_end``.  ``callback(t, rho,
    report)`` is invoked after every accepted step.
    """
    if t_end < 0:
        raise ValueError("t_end must be non-negative")
    rho = np.array(initial, dtype=float)
    energy = dynamics.energy
    series = DiagnosticsSeries()
    series.record(0.0, rho, grid, energy)
    policy = config.dt_policy
    if not config.scheme.explicit and not isinstance(policy, FixedDt):
        raise ValueError("implicit schemes need a fixed time step")
    t, n = 0.0, 0
    while t_end - t > 1e-10 * max(t_end, 1e-300):
        if isinstance(policy, FixedDt):
            dt = policy.dt
        else:
            dt = policy.safety * explicit_dt_limit(rho, dynamics, grid)
            if math.isinf(dt):
                dt = t_end - t
        if t + dt > t_end or t_end - (t + dt) <= 1e-10 * dt:
            dt = t_end - t
        try:
            rho, report = _advance_with_retries(rho, dynamics, grid, config, dt, t, n)
        except SolverFailure as exc:
            series.final_state = rho
            series.aborted = f"solver failure after t = {t:.6g}: {exc}"
            raise EvolutionAborted(series.aborted, series) from exc
        n += 1
        t = t_end if dt == t_end - t else t + dt
        series.record(t, rho, grid, energy, report.iterations)
        if callback is not None:
            callback(t, rho, report)
    series.final_state = rho
    return series
