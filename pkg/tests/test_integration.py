import math

import numpy as np
import pytest
from hypothesis import example, given
from hypothesis import strategies as st

import oracles
from satflow.core import (
    Boundary,
    CflDriven,
    FixedDt,
    Grid1D,
    Grid2D,
    Scheme,
    SchemeConfig,
    SolverOptions,
    linear_saturation,
    total_mass,
)
from satflow.experiments import random_admissible_field
from satflow.gradientflow import EnergySpec, GradientFlowVelocity, boltzmann, quadratic, quadratic_potential
from satflow.integration import (
    CflViolation,
    Dynamics,
    EvolutionAborted,
    SolverFailure,
    advance,
    evolve,
    explicit_step,
    gradient_flow_step,
    implicit_residual,
    implicit_step,
    step_2d,
)

LIN = linear_saturation(1.0)
EXPLICIT = SchemeConfig(Scheme.EXPLICIT_SCALAR, dt_policy=CflDriven(1.0))
IMPLICIT = SchemeConfig(Scheme.IMPLICIT_SCALAR, dt_policy=FixedDt(0.1))


def test_explicit_zero_velocity_is_identity():
    g = Grid1D(6, 0.1)
    rho = np.random.default_rng(1).uniform(0, 1, size=(1, 6))
    new, report = explicit_step(rho, np.zeros((1, 7)), LIN, EXPLICIT, g, dt=0.3)
    np.testing.assert_array_equal(new, rho)


@given(st.integers(3, 40), st.integers(0, 2**31 - 1), st.booleans())
def test_explicit_step_conserves_mass_and_bounds(n, seed, periodic):
    r = np.random.default_rng(seed)
    g = Grid1D(n, 1.0 / n, boundary=Boundary.PERIODIC if periodic else Boundary.NO_FLUX)
    P = int(r.integers(1, 4))
    rho = random_admissible_field(r, P, n)
    u = r.normal(scale=3.0, size=(P, n + 1))
    if periodic:
        u[:, 0] = u[:, -1]
    config = SchemeConfig(Scheme.EXPLICIT_SCALAR if P == 1 else Scheme.EXPLICIT_SYSTEM, dt_policy=CflDriven(1.0))
    new, report = explicit_step(rho, u, LIN, config, g)
    before, after = total_mass(rho, g), total_mass(new, g)
    np.testing.assert_allclose(after, before, rtol=1e-13, atol=1e-15)
    assert new.min() >= -1e-12
    assert new.sum(0).max() <= 1 + 1e-12


def test_explicit_three_cell_oracle():
    g = Grid1D(3, 0.5)
    rho = np.array([[0.2, 0.4, 0.6]])
    u = np.array([[0.0, 0.7, -0.4, 0.0]])
    dt = 0.1
    new, _ = explicit_step(rho, u, LIN, EXPLICIT, g, dt=dt)
    # hand evaluation: slopes vanish at the zero-gradient boundaries, middle cell
    # slope = minmod(0.8, 0.4, 0.8) = 0.4 -> edges 0.3 / 0.5; sigma = rho
    F1 = 0.2 * (1 - 0.3) * 0.7  # rho_0^E psi(rho_1^W) u+
    F2 = 0.6 * (1 - 0.5) * -0.4  # rho_2^W psi(rho_1^E) u-
    expected = [0.2 - dt / 0.5 * F1, 0.4 - dt / 0.5 * (F2 - F1), 0.6 + dt / 0.5 * F2]
    np.testing.assert_allclose(new[0], expected, rtol=0, atol=1e-15)
    brute = oracles.explicit_step(rho.tolist(), u.tolist(), lambda s: 1 - s, 0.5, dt)
    np.testing.assert_allclose(new, brute, rtol=0, atol=1e-15)


def test_explicit_fixed_dt_above_cfl_raises():
    g = Grid1D(4, 0.1)
    u = np.full((1, 5), 2.0)
    config = SchemeConfig(Scheme.EXPLICIT_SCALAR, dt_policy=FixedDt(0.05))
    with pytest.raises(CflViolation):
        explicit_step(np.full((1, 4), 0.5), u, LIN, config, g)
    ok = SchemeConfig(Scheme.EXPLICIT_SCALAR, dt_policy=FixedDt(0.025))
    explicit_step(np.full((1, 4), 0.5), u, LIN, ok, g)


def test_implicit_zero_velocity_one_iteration():
    g = Grid1D(5, 0.2)
    rho = np.random.default_rng(3).uniform(size=(1, 5)) * 0.9
    new, report = implicit_step(rho, np.zeros((1, 6)), LIN, IMPLICIT, g)
    np.testing.assert_array_equal(new, rho)
    assert report.picard_iterations == 1
    assert report.accepted


@pytest.mark.parametrize("method,dt", [("newton", 2.5), ("newton", 0.25), ("picard", 0.25)])
def test_implicit_residual_independent(method, dt, rng):
    g = Grid1D(6, 0.25, boundary=Boundary.NO_FLUX)
    rho = random_admissible_field(rng, 2, 6)
    u = rng.normal(scale=2.0, size=(2, 7))
    config = SchemeConfig(Scheme.IMPLICIT_SYSTEM, dt_policy=FixedDt(dt), solver=SolverOptions(method=method))
    new, report = implicit_step(rho, u, LIN, config, g)
    res = oracles.implicit_residual(new.tolist(), rho.tolist(), u.tolist(), lambda s: 1 - s, 0.25, dt)
    assert oracles.max_abs(res) <= 1e-9
    assert new.min() >= -1e-12 and new.sum(0).max() <= 1 + 1e-12
    np.testing.assert_allclose(total_mass(new, g), total_mass(rho, g), rtol=1e-12)


def test_implicit_residual_function_matches_oracle(rng):
    line = Grid1D(5, 0.2, boundary=Boundary.PERIODIC)
    rho, prev = rng.uniform(0, 0.5, size=(2, 2, 5)), rng.uniform(0, 0.5, size=(2, 2, 5))
    u = rng.normal(size=(2, 6))
    u[:, 0] = u[:, -1]
    from satflow.integration import PrescribedVelocity

    model = PrescribedVelocity(u[:, None, 1:])
    G = implicit_residual(rho, prev, model, LIN, 0.3, line)
    for b in range(2):
        ref = oracles.implicit_residual(rho[:, b].tolist(), prev[:, b].tolist(), u.tolist(), lambda s: 1 - s, 0.2, 0.3,
                                        periodic=True)
        np.testing.assert_allclose(G[:, b], ref, atol=1e-15)


def test_implicit_explicit_differ_at_second_order():
    n = 64
    g = Grid1D(n, 1.0 / n, boundary=Boundary.PERIODIC)
    x = g.centers
    rho = (0.4 + 0.2 * np.sin(2 * np.pi * x))[None]
    u = (1.0 + 0.5 * np.cos(2 * np.pi * g.interfaces))[None]
    diffs = []
    for dt in (4e-3, 2e-3, 1e-3):
        e, _ = explicit_step(rho, u, LIN, SchemeConfig(Scheme.EXPLICIT_SCALAR, theta=0.0), g, dt=dt)
        i, _ = implicit_step(rho, u, LIN, IMPLICIT, g, dt=dt)
        diffs.append(np.max(np.abs(e - i)))
    ratios = np.array(diffs[:-1]) / np.array(diffs[1:])
    assert np.all(ratios > 3.5) and np.all(ratios < 4.5)


def test_gradient_flow_step_dissipates_energy():
    from satflow.gradientflow import discrete_energy

    g = Grid1D.from_bounds(0, 4, 32)
    energy = EnergySpec(1, H_rho=boltzmann(), V_rho=quadratic_potential(1.0))
    rho = np.full((1, 32), 0.415)
    config = SchemeConfig(Scheme.GRADIENT_FLOW_SCALAR, dt_policy=FixedDt(g.cell_size))
    e0 = discrete_energy(rho, energy, g)
    for _ in range(5):
        rho, report = gradient_flow_step(rho, energy, LIN, config, g)
        e1 = discrete_energy(rho, energy, g)
        assert e1 <= e0 + 1e-10 * (1 + abs(e0))
        assert report.picard_residual <= 1e-10
        e0 = e1
    assert 0 < rho.min() and rho.max() <= 1


def test_step_2d_x_aligned_matches_rows():
    gx, gy = Grid1D.from_bounds(0, 1, 8), Grid1D.from_bounds(0, 1, 5)
    grid = Grid2D(gx, gy)
    dyn = Dynamics(LIN, velocity=lambda X, Y: (np.sin(3 * X) + 0 * Y, 0 * X))
    profile = np.random.default_rng(4).uniform(0, 1, size=8)
    state = np.repeat(profile[:, None], 5, axis=1)[None]
    config = SchemeConfig(Scheme.IMPLICIT_SCALAR, dt_policy=FixedDt(0.1))
    new, _ = step_2d(state, dyn, grid, config, 0.1)
    row, _ = implicit_step(profile[None], np.sin(3 * gx.interfaces)[None], LIN, config, gx, dt=0.1)
    for j in range(5):
        np.testing.assert_allclose(new[0, :, j], row[0], atol=1e-12)


def test_step_2d_requires_2d_grid():
    dyn = Dynamics(LIN, velocity=lambda x: 0 * x)
    with pytest.raises(TypeError):
        step_2d(np.zeros((1, 4)), dyn, Grid1D(4, 0.25), IMPLICIT, 0.1)


@given(st.integers(0, 2**31 - 1), st.sampled_from(["implicit-system", "explicit-system", "gradient-flow-system"]))
@example(513899407, "implicit-system")  # Newton and Picard both fail on one line; needs continuation in dt
def test_step_2d_keeps_random_states_admissible(seed, scheme):
    r = np.random.default_rng(seed)
    grid = Grid2D.square(0, 1, 6, Boundary.PERIODIC if r.uniform() < 0.5 else Boundary.NO_FLUX)
    rho = random_admissible_field(r, 2, (6, 6))
    if scheme.startswith("gradient"):
        energy = EnergySpec(2, H_sigma=quadratic(0.2), V_rho=lambda x, y: x * y, V_eta=lambda x, y: -x)
        dyn = Dynamics(LIN, energy=energy)
    else:
        a, b = r.normal(size=2)
        dyn = Dynamics(LIN, velocity=lambda X, Y: (np.stack([a * np.sin(6 * Y), -a + 0 * X]),
                                                   np.stack([b * np.cos(6 * X), b + 0 * Y])))
    if scheme.startswith("explicit"):
        from satflow.integration import explicit_dt_limit

        dt = explicit_dt_limit(rho, dyn, grid)
        config = SchemeConfig(scheme, dt_policy=CflDriven(1.0))
    else:
        dt = 1.0
        config = SchemeConfig(scheme, dt_policy=FixedDt(dt))
    new, _ = step_2d(rho, dyn, grid, config, dt, step_index=int(r.integers(2)))
    assert new.min() >= -1e-12
    assert new.sum(0).max() <= 1 + 1e-12
    np.testing.assert_allclose(new.sum((1, 2)), rho.sum((1, 2)), rtol=1e-10, atol=1e-14)


def _kink_dynamics():
    return Dynamics(LIN, energy=EnergySpec(1, H_rho=boltzmann(), V_rho=quadratic_potential(1.0)))


def test_evolve_zero_horizon():
    g = Grid1D.from_bounds(0, 4, 16)
    series = evolve(np.full((1, 16), 0.4), _kink_dynamics(), g, SchemeConfig(
        Scheme.GRADIENT_FLOW_SCALAR, dt_policy=FixedDt(0.25)), 0.0)
    assert len(series) == 1 and series.times == [0.0]


def test_evolve_truncates_last_step():
    g = Grid1D.from_bounds(0, 4, 16)
    config = SchemeConfig(Scheme.GRADIENT_FLOW_SCALAR, dt_policy=FixedDt(0.3))
    series = evolve(np.full((1, 16), 0.4), _kink_dynamics(), g, config, 1.0)
    assert series.times[-1] == 1.0
    np.testing.assert_allclose(np.diff(series.times), [0.3, 0.3, 0.3, 0.1])


@pytest.mark.parametrize("k", [1, 2, 3, 4, 5])
def test_evolve_step_count(k):
    dt = 2.0**-k / 10
    g = Grid1D(4, 0.25, boundary=Boundary.PERIODIC)
    dyn = Dynamics(LIN, velocity=lambda x: 0 * x)
    config = SchemeConfig(Scheme.IMPLICIT_SCALAR, dt_policy=FixedDt(dt))
    series = evolve(np.full((1, 4), 0.5), dyn, g, config, 0.1)
    assert len(series) - 1 == math.ceil(0.1 / dt)
    assert series.times[-1] == 0.1


def test_evolve_rejects_negative_horizon():
    g = Grid1D(4, 0.25)
    with pytest.raises(ValueError):
        evolve(np.full((1, 4), 0.5), Dynamics(LIN, velocity=lambda x: 0 * x), g, IMPLICIT, -1.0)


def test_evolve_implicit_needs_fixed_dt():
    g = Grid1D(4, 0.25)
    with pytest.raises(ValueError):
        evolve(np.full((1, 4), 0.5), Dynamics(LIN, velocity=lambda x: 0 * x), g,
               SchemeConfig(Scheme.IMPLICIT_SCALAR), 1.0)


def test_evolve_callback_and_cfl_driven_explicit():
    g = Grid1D(10, 0.1, boundary=Boundary.PERIODIC)
    seen = []
    dyn = Dynamics(LIN, velocity=lambda x: 1.0 + 0 * x)
    series = evolve(np.full((1, 10), 0.3), dyn, g, SchemeConfig(Scheme.EXPLICIT_SCALAR), 0.5,
                    callback=lambda t, rho, report: seen.append(t))
    assert seen == series.times[1:]
    assert series.times[-1] == 0.5
    np.testing.assert_allclose(series.final_state, 0.3, atol=1e-14)


def test_halving_retry_recovers(monkeypatch):
    """A solver that fails for dt above a threshold forces halvings but still lands on t_end."""
    import satflow.integration as integ

    original = integ.advance
    calls = []

    def flaky(rho, dynamics, grid, config, dt, t=0.0, step_index=0):
        calls.append(dt)
        if dt > 0.03:
            raise SolverFailure("forced")
        return original(rho, dynamics, grid, config, dt, t, step_index)

    monkeypatch.setattr(integ, "advance", flaky)
    g = Grid1D(4, 0.25)
    dyn = Dynamics(LIN, velocity=lambda x: 0 * x)
    series = evolve(np.full((1, 4), 0.5), dyn, g, SchemeConfig(Scheme.IMPLICIT_SCALAR, dt_policy=FixedDt(0.1)), 0.2)
    assert series.times[-1] == pytest.approx(0.2)
    assert len(series) == 3  # two accepted outer steps
    assert min(calls) == pytest.approx(0.025)


def test_abort_after_max_halvings(monkeypatch):
    import satflow.integration as integ

    def always_fail(*args, **kwargs):
        raise SolverFailure("forced")

    monkeypatch.setattr(integ, "advance", always_fail)
    g = Grid1D(4, 0.25)
    dyn = Dynamics(LIN, velocity=lambda x: 0 * x)
    config = SchemeConfig(Scheme.IMPLICIT_SCALAR, dt_policy=FixedDt(0.1), max_halvings=3)
    with pytest.raises(EvolutionAborted) as info:
        evolve(np.full((1, 4), 0.5), dyn, g, config, 0.2)
    assert info.value.series.final_state is not None
    assert "t = 0" in str(info.value)


def test_solver_failure_reports():
    g = Grid1D(8, 0.125)
    rho = np.random.default_rng(5).uniform(0, 0.9, size=(1, 8))
    config = SchemeConfig(Scheme.IMPLICIT_SCALAR, dt_policy=FixedDt(5.0),
                          solver=SolverOptions(max_iterations=1, tolerance=1e-14))
    with pytest.raises(SolverFailure) as info:
        implicit_step(rho, np.full((1, 9), 3.0), LIN, config, g)
    assert info.value.report is not None and not info.value.report.accepted


def test_sources_applied_after_transport():
    g = Grid1D(4, 0.25, boundary=Boundary.PERIODIC)
    dyn = Dynamics(LIN, velocity=lambda x: 0 * x, source=lambda t, x: np.full((1,) + x.shape, t))
    rho, _ = advance(np.full((1, 4), 0.1), dyn, g, IMPLICIT, 0.1, t=0.2)
    np.testing.assert_allclose(rho, 0.1 + 0.1 * 0.3)


def test_velocity_model_direct_use(rng):
    g = Grid1D.from_bounds(0, 1, 6)
    energy = EnergySpec(1, H_rho=boltzmann(), V_rho=quadratic_potential(2.0))
    rho = rng.uniform(0.2, 0.8, size=(1, 6))
    model = GradientFlowVelocity.on_grid(energy, g, rho)
    new, report = implicit_step(rho, model, LIN, SchemeConfig(Scheme.GRADIENT_FLOW_SCALAR, dt_policy=FixedDt(0.2)), g)
    assert report.accepted and report.dt_used == 0.2
