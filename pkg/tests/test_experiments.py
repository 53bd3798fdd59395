import math

import numpy as np
import pytest

import oracles
from satflow.core import Boundary, Scheme
from satflow.diagnostics import critical_mass, kink_steady_state
from satflow.experiments import (
    ADHESION_COEFFICIENTS,
    PROBLEMS,
    Engulfment,
    InadmissibleDatum,
    adhesion_problem,
    check_admissible,
    freeze_problem,
    get_problem,
    kink_problem,
    random_admissible_field,
    random_bound_trials,
    skt_exact,
    skt_level,
    skt_manufactured,
    skt_saturated_sources,
    skt_sources,
    with_resolution,
)


def test_skt_exact_and_source_values():
    np.testing.assert_allclose(skt_exact(0.0, 0.0, 0.0), [0.25, 0.5])
    assert skt_sources(0.0, 0.0, 0.0)[0] == pytest.approx(3 / 16, abs=1e-15)


def test_skt_problem_setup():
    prob = skt_manufactured(False)
    assert prob.boundary is Boundary.PERIODIC and prob.final_time == 0.1
    assert prob.bounds == (-math.pi, math.pi) and prob.num_species == 2
    g = prob.grid()
    assert g.grid_x.cell_size == pytest.approx(2.0**-5 * math.pi)
    assert skt_level(3) == (16, 2.0**-3 / 10)
    assert skt_manufactured(True).saturation.alpha == 1.0
    assert math.isinf(prob.saturation.alpha)
    assert prob.default_scheme() is Scheme.GRADIENT_FLOW_SYSTEM


@pytest.mark.parametrize("saturated", [False, True])
def test_source_transcription_symbolic(saturated):
    sp = pytest.importorskip("sympy")
    t, x, y = sp.symbols("t x y")
    r, e = (1 + sp.sin(x + t)) / 4, (1 + sp.cos(y + t)) / 4
    m = 1 - r - e if saturated else 1
    flux_r = [m * ((2 * r + e) * sp.diff(r, v) + r * sp.diff(e, v)) for v in (x, y)]
    flux_e = [m * (e * sp.diff(r, v) + (r + 2 * e) * sp.diff(e, v)) for v in (x, y)]
    exact = [sp.diff(r, t) - sp.diff(flux_r[0], x) - sp.diff(flux_r[1], y),
             sp.diff(e, t) - sp.diff(flux_e[0], x) - sp.diff(flux_e[1], y)]
    f = sp.lambdify((t, x, y), exact, "numpy")
    pts = np.random.default_rng(1).uniform(-4, 4, size=(3, 50))
    ours = (skt_saturated_sources if saturated else skt_sources)(*pts)
    np.testing.assert_allclose(ours, np.array(f(*pts)), atol=1e-14)


@pytest.mark.parametrize("saturated", [False, True])
def test_source_residual_oracle_converges(saturated):
    sources = skt_saturated_sources if saturated else skt_sources
    pts = np.random.default_rng(2).uniform(-3, 3, size=(3, 40))
    errs = []
    for h in (0.1, 0.05, 0.025):
        res = oracles.skt_residual(skt_exact, sources, saturated, *pts, h)
        errs.append(max(np.max(np.abs(r)) for r in res))
    orders = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    assert np.all(orders >= 2.0)


def test_source_residual_oracle_detects_typo():
    def wrong(t, x, y):
        s = skt_sources(t, x, y)
        s[0] = s[0] + np.sin(t + x) / 64  # one mis-transcribed coefficient
        return s

    res = oracles.skt_residual(skt_exact, wrong, False, 0.3, 0.7, -1.1, 0.01)
    assert abs(res[0]) > 1e-3


def test_kink_problem_examples():
    one = kink_problem(1)
    g = one.grid()
    np.testing.assert_allclose(one.initial(g), 0.415)
    assert g.cell_size == pytest.approx(2.0**-7) and one.dt == pytest.approx(2.0**-7)
    two = kink_problem(2)
    np.testing.assert_allclose(two.initial(two.grid(16)), 4.71 / 16)
    assert two.parameters["l"] == pytest.approx(math.sqrt(4 * 4.71 / math.pi - 2))
    sub = kink_problem(1, M=1.0)
    assert sub.parameters["subcritical"] and 1.0 < critical_mass()
    x = np.linspace(0, 4, 9)
    np.testing.assert_allclose(sub.exact(0, x)[0], kink_steady_state(x, l=0.0))
    assert one.final_time == 15.0
    with pytest.raises(ValueError):
        kink_problem(1, M=-1)
    with pytest.raises(ValueError):
        kink_problem(3)


def test_kink_without_saturation_has_no_reference():
    prob = kink_problem(1, with_saturation=False)
    assert prob.exact is None and math.isinf(prob.saturation.alpha)


def test_freeze_problem_setup():
    prob = freeze_problem(1)
    p = prob.parameters
    assert p["C1"] == 2 * p["C2"] and (p["C1"], p["C2"]) == (4.0, 2.0)
    assert p["omega"] == pytest.approx(16 * math.pi) and p["D"] == 0.1
    assert freeze_problem(2).parameters["omega"] == pytest.approx(4 * math.pi)
    for dim in (1, 2):
        prob = freeze_problem(dim)
        rho = prob.initial(prob.grid())
        assert rho.min() >= 0 and rho.sum(0).max() <= prob.saturation.alpha
        assert prob.final_time == 30.0


def test_freeze_literal_datum_is_rejected():
    prob = freeze_problem(1, literal_datum=True)
    with pytest.raises(InadmissibleDatum):
        prob.initial(prob.grid())
    loose = freeze_problem(1, with_saturation=False, literal_datum=True)
    assert loose.initial(loose.grid()).sum(0).max() == pytest.approx(1.6, abs=1e-3)


def test_adhesion_coefficients():
    assert ADHESION_COEFFICIENTS[Engulfment.PARTIAL] == (1.0, 0.5, 0.5, 1.0)
    assert ADHESION_COEFFICIENTS[Engulfment.COMPLETE] == (0.25, 0.5, 0.5, 1.0)
    c_rr, c_re, c_er, c_ee = ADHESION_COEFFICIENTS[Engulfment.PARTIAL]
    assert c_rr == 2 * c_re == 2 * c_er == c_ee == 1
    c_rr, c_re, c_er, c_ee = ADHESION_COEFFICIENTS[Engulfment.COMPLETE]
    assert 4 * c_rr == 2 * c_re == 2 * c_er == c_ee == 1


@pytest.mark.parametrize("literal", [False, True])
def test_adhesion_datum(literal):
    prob = adhesion_problem(Engulfment.PARTIAL, literal_geometry=literal, num_cells=64)
    g = prob.grid()
    rho = prob.initial(g)
    assert rho.sum(0).max() == pytest.approx(0.95)
    assert set(np.unique(rho)) <= {0.0, 0.95}
    assert rho[0].sum() > 0
    if literal:
        assert rho[1].sum() == 0  # printed second disk lies inside the first
    else:
        assert rho[1].sum() > 0
    assert prob.final_time == 45.0 and prob.bounds == (-2.0, 2.0)


def test_registry_and_variants():
    assert set(PROBLEMS) == {"skt", "skt-saturated", "kink-1d", "kink-2d", "freeze-1d", "freeze-2d",
                             "adhesion-partial", "adhesion-complete"}
    for name in PROBLEMS:
        prob = get_problem(name)
        assert prob.name == name
        check_admissible(prob.initial(prob.grid(8)), prob.saturation.alpha)
    assert math.isinf(get_problem("freeze-1d", with_saturation=False).saturation.alpha)
    with pytest.raises(ValueError):
        get_problem("skt-saturated", with_saturation=False)
    with pytest.raises(KeyError):
        get_problem("nope")


def test_with_resolution():
    prob = with_resolution(kink_problem(1), num_cells=32, dt=0.5, final_time=1.0)
    assert (prob.num_cells, prob.dt, prob.final_time) == (32, 0.5, 1.0)
    with pytest.raises(ValueError):
        prob.grid(3)


def test_check_admissible():
    check_admissible(np.array([[0.0, 0.5], [0.5, 0.0]]), 1.0)
    with pytest.raises(InadmissibleDatum):
        check_admissible(np.array([[-1e-6, 0.5]]), 1.0)
    with pytest.raises(InadmissibleDatum):
        check_admissible(np.array([[0.6], [0.6]]), 1.0)
    with pytest.raises(InadmissibleDatum):
        check_admissible(np.array([[np.nan]]))


def test_random_admissible_field(rng):
    f = random_admissible_field(rng, 3, (40, 5), alpha=2.0)
    assert f.shape == (3, 40, 5)
    assert f.min() >= 0 and f.sum(0).max() <= 2.0 + 1e-15
    assert np.any(f.sum(0) == 0) and np.any(np.isclose(f.sum(0), 2.0))


def test_random_bound_trials_small():
    outcomes = random_bound_trials(seed=7, trials=12, max_cells=16, steps=2)
    assert len(outcomes) == 12
    assert all(o.passed() for o in outcomes), [o for o in outcomes if not o.passed()]
