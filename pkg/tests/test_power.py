import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from psma.phy import LinkModel
from psma.power import (DualState, PowerProblem, ScaleCoeffs, brute_force_power_oracle,
                        equal_split, lagrangian, linearize_sic_constraint, power_closed_form,
                        project_budget, scale_coeffs, solve_power_inner, solve_power_scale,
                        subgradient_step)
from psma.power import _couplings
from psma.scenario import ScenarioConfig

from conftest import random_channel, random_structure, scenario_case


def make_case(rng, F=1, M=3, N=4, U=2, C=3, p_max=None, q=None, uniform=True,
              noise=1e-2, density=0.7):
    ch = random_channel(rng, F, M, N, noise=noise)
    s = random_structure(rng, N, U, C, uniform)
    link = LinkModel(ch, s, ch.user_cell)
    if p_max is None:
        p_max = tuple(float(v) for v in rng.uniform(0.5, 3.0, size=F))
    if q is None:
        q = (rng.random((M, C)) < density).astype(np.int8)
        q[np.arange(M), rng.integers(0, C, size=M)] = 1
    cfg = ScenarioConfig(num_bs=F, num_users=M, num_subcarriers=N, num_codebooks=C,
                         codebook_size=U, p_max=p_max)
    return cfg, link, PowerProblem(link, q, p_max)


def fd_grad(fun, x, h=1e-6):
    g = np.empty_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h
        g[i] = (fun(x + e) - fun(x - e)) / (2 * h)
    return g


# -- SCALE coefficients ---------------------------------------------------

def test_scale_coeffs_at_unit_sinr():
    s = scale_coeffs([1.0])
    assert s.xi[0] == 0.5
    assert s.psi[0] == pytest.approx(np.log(2.0), abs=1e-15)


def test_scale_slope_tends_to_one():
    s = scale_coeffs([1e3, 1e6, 1e9])
    assert np.all(np.diff(s.xi) > 0)
    assert 1 - s.xi[-1] < 1e-8


@pytest.mark.parametrize("bad", [0.0, -1.0, np.inf, np.nan])
def test_scale_coeffs_rejects_bad_anchor(bad):
    with pytest.raises(ValueError):
        scale_coeffs([1.0, bad])


def test_initial_coeffs():
    s = ScaleCoeffs.initial(3)
    assert s.xi.tolist() == [1.0] * 3 and s.psi.tolist() == [0.0] * 3


@settings(max_examples=200, deadline=None)
@given(st.floats(1e-3, 1e3), st.floats(1e-3, 1e3))
def test_scale_bound_property(g0, x):
    s = scale_coeffs([g0])
    assert s.bound(x)[0] <= np.log1p(x) + 1e-12
    assert abs(s.bound(g0)[0] - np.log1p(g0)) <= 1e-9
    assert 0 <= s.xi[0] < 1


# -- SIC linearization ----------------------------------------------------

def test_linearization_exact_at_anchor(rng):
    for _ in range(20):
        _, _, prob = make_case(rng, F=2, M=6, N=4, C=3, uniform=False, density=0.8)
        p0 = rng.uniform(0.1, 1.0, prob.size)
        sic = linearize_sic_constraint(prob, p0)
        assert sic.size > 0
        assert np.allclose(sic.value(np.log(p0)), sic.exact(p0), rtol=0, atol=1e-9)


def test_linear_form_matches_cross_sinr_sign(rng):
    # the cross-multiplied residual must have the sign of gamma_m(m) - gamma_m(j)
    for _ in range(20):
        _, link, prob = make_case(rng, F=2, M=6, N=4, C=3, uniform=False, density=0.8)
        p0 = rng.uniform(0.1, 1.0, prob.size)
        sic = linearize_sic_constraint(prob, p0)
        slack, own = link.sic_slack(prob.q, prob.to_matrix(p0))
        r = sic.exact(p0)
        for s, (j, m) in enumerate(sic.pairs):
            um, uj, c = prob.users[m], prob.users[j], prob.codebooks[m]
            gap = slack[um, uj, c]
            if abs(gap) > 1e-9 * own[um, c]:
                assert np.sign(r[s]) == -np.sign(gap)


def test_uniform_eta_single_cell_is_always_feasible(rng):
    for _ in range(30):
        _, _, prob = make_case(rng, F=1, M=4, N=8, U=2, C=6, density=0.8)
        p0 = rng.uniform(0.01, 2.0, prob.size)
        sic = linearize_sic_constraint(prob, p0)
        assert np.all(sic.value(np.log(p0)) <= 1e-12)


def test_linearization_error_is_quadratic(rng):
    checked = 0
    for _ in range(40):
        _, _, prob = make_case(rng, F=2, M=6, N=4, C=3, uniform=False, density=0.9)
        p0 = rng.uniform(0.2, 1.0, prob.size)
        sic = linearize_sic_constraint(prob, p0)
        if sic.size == 0 or not np.any(sic.a_neg):
            continue
        d = rng.normal(size=prob.size)
        pt0 = np.log(p0)
        errs = []
        for h in (1e-2, 5e-3, 2.5e-3):
            pt = pt0 + h * d
            errs.append(np.max(np.abs(sic.value(pt) - sic.exact(np.exp(pt)))))
        if errs[-1] < 1e-13:
            continue
        checked += 1
        assert 3.0 < errs[0] / errs[1] < 5.0
        assert 3.0 < errs[1] / errs[2] < 5.0
    assert checked >= 10


def test_linearization_rejects_zero_anchor(rng):
    _, _, prob = make_case(rng)
    p0 = np.ones(prob.size)
    p0[0] = 0.0
    with pytest.raises(ValueError):
        linearize_sic_constraint(prob, p0)


# -- closed form ----------------------------------------------------------

def single_entry_problem(gain=1.0, noise=1.0, p_max=1.0):
    rng = np.random.default_rng(0)
    _, _, prob = make_case(rng, F=1, M=1, N=2, U=2, C=1, p_max=(p_max,), q=np.ones((1, 1)))
    return prob


def test_closed_form_hand_example():
    prob = single_entry_problem()
    dual = DualState(np.array([2.0]), np.zeros(0))
    p = power_closed_form(ScaleCoeffs.initial(1), dual, prob, p_current=np.ones(1))
    assert p.tolist() == [0.5]


def test_closed_form_zero_slope_gives_zero():
    prob = single_entry_problem()
    dual = DualState(np.array([2.0]), np.zeros(0))
    p = power_closed_form(ScaleCoeffs(np.zeros(1), np.zeros(1)), dual, prob,
                          p_current=np.ones(1))
    assert p.tolist() == [0.0]


def test_closed_form_decreases_in_delta(rng):
    _, _, prob = make_case(rng, F=2, M=6, C=3)
    p_cur = rng.uniform(0.1, 1.0, prob.size)
    sic = linearize_sic_constraint(prob, p_cur)
    scale = scale_coeffs(rng.uniform(0.5, 5.0, prob.size))
    beta = rng.uniform(0, 1, sic.size)
    lo = power_closed_form(scale, DualState([1.0, 1.0], beta), prob, sic, p_cur)
    hi = power_closed_form(scale, DualState([1.5, 1.0], beta), prob, sic, p_cur)
    cell0 = prob.cells == 0
    assert np.all(hi[cell0] < lo[cell0])
    assert np.array_equal(hi[~cell0], lo[~cell0])


def test_closed_form_zero_denominator_raises():
    prob = single_entry_problem()
    dual = DualState(np.array([0.0]), np.zeros(0))
    with pytest.raises(ZeroDivisionError):
        power_closed_form(ScaleCoeffs.initial(1), dual, prob, p_current=np.ones(1))


def test_closed_form_needs_a_point():
    prob = single_entry_problem()
    with pytest.raises(ValueError):
        power_closed_form(ScaleCoeffs.initial(1), DualState([1.0], []), prob)


def test_stationarity_identity(rng):
    """dL/dpt = xi + G - p * (delta + A + B + C) at any point."""
    for _ in range(20):
        _, _, prob = make_case(rng, F=2, M=6, N=4, C=3, uniform=False, density=0.8)
        p0 = rng.uniform(0.1, 1.0, prob.size)
        sic = linearize_sic_constraint(prob, p0)
        scale = scale_coeffs(rng.uniform(0.2, 10.0, prob.size))
        dual = DualState(rng.uniform(0.1, 2.0, 2), rng.uniform(0, 2.0, sic.size))
        pt = np.log(p0) + rng.normal(scale=0.3, size=prob.size)
        p = np.exp(pt)
        A, B, C, G = _couplings(prob, scale, dual, sic, p)
        analytic = scale.xi + G - p * (dual.delta[prob.cells] + A + B + C)
        numeric = fd_grad(lambda x: lagrangian(x, prob, scale, dual, sic), pt)
        assert np.allclose(numeric, analytic, rtol=1e-5, atol=1e-7)


# -- subgradient ----------------------------------------------------------

def budget_problem(p_max=3.0):
    return single_entry_problem(p_max=p_max)


def test_subgradient_hand_example():
    prob = budget_problem(3.0)
    dual = subgradient_step(DualState([1.0], [], nu1=0.1), prob, np.array([1.0]))
    assert dual.delta[0] == pytest.approx(0.8, abs=1e-15)
    assert dual.u == 1


def test_subgradient_zero_slack_keeps_delta():
    prob = budget_problem(3.0)
    dual = subgradient_step(DualState([1.0], [], nu1=0.1), prob, np.array([3.0]))
    assert dual.delta[0] == 1.0


def test_subgradient_projects_to_zero():
    prob = budget_problem(3.0)
    dual = subgradient_step(DualState([0.1], [], nu1=0.1), prob, np.array([1.0]))
    assert dual.delta[0] == 0.0


def test_negative_multiplier_rejected():
    with pytest.raises(ValueError):
        DualState([-1.0], [])


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10_000), st.floats(1e-3, 10.0), st.floats(1e-3, 10.0))
def test_multipliers_stay_nonnegative(seed, nu1, nu2):
    rng = np.random.default_rng(seed)
    _, _, prob = make_case(rng, F=2, M=5, C=3, uniform=False)
    p0 = rng.uniform(0.05, 2.0, prob.size)
    sic = linearize_sic_constraint(prob, p0)
    dual = DualState(rng.uniform(0, 1, 2), rng.uniform(0, 1, sic.size), nu1, nu2)
    for _ in range(5):
        dual = subgradient_step(dual, prob, rng.uniform(0.0, 4.0, prob.size), sic)
        assert np.all(dual.delta >= 0) and np.all(dual.beta >= 0)


# -- surrogate shape ------------------------------------------------------

@settings(max_examples=100, deadline=None)
@given(st.integers(0, 10_000))
def test_surrogate_midpoint_concave_in_log_powers(seed):
    rng = np.random.default_rng(seed)
    _, _, prob = make_case(rng, F=2, M=5, C=3)
    scale = scale_coeffs(rng.uniform(0.1, 10.0, prob.size))
    a = rng.normal(size=prob.size)
    b = rng.normal(size=prob.size)
    f = lambda pt: prob.surrogate(np.exp(pt), scale)
    assert f((a + b) / 2) >= (f(a) + f(b)) / 2 - 1e-9


# -- inner solve ----------------------------------------------------------

def test_inner_single_user_matches_grid():
    rng = np.random.default_rng(3)
    cfg, link, prob = make_case(rng, F=1, M=1, N=2, U=2, C=1, p_max=(2.0,),
                                q=np.ones((1, 1)))
    p, dual, info = solve_power_inner(prob, np.array([0.3]), ScaleCoeffs.initial(1), cfg)
    grid = np.linspace(0.0, 2.0, 2000)
    best = np.max(np.log1p(prob.signal[0] * grid / prob.noise[0]))
    assert prob.true_rate(p) >= 0.98 * best
    assert info["converged"]


def test_inner_budget_residual(rng):
    for _ in range(10):
        cfg, _, prob = make_case(rng, F=2, M=6, C=3)
        P0 = equal_split(prob.q, prob.link.user_cell, prob.p_max)
        scale = ScaleCoeffs.initial(prob.size)
        p, dual, info = solve_power_inner(prob, P0, scale, cfg)
        assert np.all(prob.cell_sums(p) <= prob.p_max * (1 + 1e-6))
        assert np.all(dual.delta >= 0) and np.all(dual.beta >= 0)


def test_vanishing_budget_gives_zero_powers():
    rng = np.random.default_rng(1)
    cfg, link, prob = make_case(rng, F=1, M=2, C=2, p_max=(0.0,))
    P, trace = solve_power_scale(prob, np.ones((2, 2)), cfg)
    assert np.all(P == 0.0) and trace.converged
    cfg, link, prob = make_case(rng, F=1, M=2, C=2, p_max=(1e-12,))
    P0 = equal_split(prob.q, link.user_cell, prob.p_max)
    p, _, _ = solve_power_inner(prob, P0, ScaleCoeffs.initial(prob.size), cfg)
    assert np.all(p <= 1e-12 * (1 + 1e-6))


def test_budget_projection():
    P = np.array([[1.0, 1.0], [2.0, 0.0]])
    out = project_budget(P, [0, 1], [1.0, 5.0])
    assert out.tolist() == [[0.5, 0.5], [2.0, 0.0]]


# -- SCALE loop -----------------------------------------------------------

def test_scale_fixed_point_on_optimal_start():
    rng = np.random.default_rng(5)
    cfg, link, prob = make_case(rng, F=1, M=1, N=2, U=2, C=1, p_max=(2.0,),
                                q=np.ones((1, 1)))
    P0 = np.array([[2.0]])
    P, trace = solve_power_scale(prob, P0, cfg)
    assert len(trace) - 1 <= 2
    assert P[0, 0] == pytest.approx(2.0, rel=1e-6)


def test_scale_ascent_two_users_one_codebook():
    for seed in range(100):
        rng = np.random.default_rng(seed)
        F = 1 + seed % 2
        cfg, link, prob = make_case(rng, F=F, M=2, N=4, U=2, C=1, q=np.ones((2, 1)),
                                    noise=10.0 ** rng.uniform(-3, 0))
        P0 = equal_split(prob.q, link.user_cell, prob.p_max)
        P, trace = solve_power_scale(prob, P0, cfg)
        assert link.sum_rate(P) >= link.sum_rate(P0) - 1e-6
        assert np.all(np.diff(trace.sum_rate) >= -1e-6)
        assert link.sic_violations(prob.q, P) <= link.sic_violations(prob.q, P0)


def test_scale_trace_monotone_on_scenarios():
    for seed in range(15):
        cfg, ch, link = scenario_case(seed, num_bs=2, num_users=6, num_subcarriers=4,
                                      num_codebooks=6, p_max=(10.0, 1.0))
        q = np.zeros((6, 6), dtype=np.int8)
        q[np.arange(6), np.arange(6) % 3] = 1
        prob = PowerProblem(link, q, cfg.p_max)
        P0 = equal_split(q, link.user_cell, cfg.p_max)
        P, trace = solve_power_scale(prob, P0, cfg)
        r = np.asarray(trace.sum_rate)
        assert np.all(np.diff(r) >= -1e-6 * np.maximum(1.0, np.abs(r[:-1])))
        assert len(trace.surrogate) == len(trace.step_norm) == len(r)
        assert np.all(np.isfinite(trace.budget_residual))
        assert np.all(link.cell_power(P).sum(axis=-1) <= np.asarray(cfg.p_max) * (1 + 1e-6))


# -- oracle ---------------------------------------------------------------

def test_oracle_one_variable_is_grid_argmax():
    rng = np.random.default_rng(9)
    _, link, prob = make_case(rng, F=2, M=2, N=2, U=2, C=1, p_max=(1.5, 0.0),
                              q=np.ones((2, 1)))
    assert prob.size == 1
    P = brute_force_power_oracle(prob, grid_points=50)
    grid = np.linspace(0.0, 1.5, 50)
    rates = [float(link.sum_rate(prob.to_matrix(np.array([g])))) for g in grid]
    assert P[prob.users[0], 0] == grid[int(np.argmax(rates))]


def test_oracle_two_variables_respects_budget(rng):
    for _ in range(5):
        _, link, prob = make_case(rng, F=1, M=2, N=4, U=2, C=2, p_max=(2.0,),
                                  q=np.array([[1, 0], [0, 1]]))
        P = brute_force_power_oracle(prob, grid_points=200)
        assert P.sum() <= 2.0 * (1 + 1e-12)
        # interference-free entries spend the whole budget
        assert P.sum() == pytest.approx(2.0)


def test_oracle_refuses_large_problems(rng):
    _, _, prob = make_case(rng, F=1, M=4, C=2, q=np.ones((4, 2)))
    with pytest.raises(ValueError):
        brute_force_power_oracle(prob)


def test_solver_close_to_oracle_on_tiny_instances():
    for seed in range(8):
        rng = np.random.default_rng(100 + seed)
        cfg, link, prob = make_case(rng, F=1, M=2, N=4, U=2, C=1, q=np.ones((2, 1)),
                                    noise=10.0 ** rng.uniform(-3, 0))
        P0 = equal_split(prob.q, link.user_cell, prob.p_max)
        P, _ = solve_power_scale(prob, P0, cfg)
        best = float(link.sum_rate(brute_force_power_oracle(prob, 200)))
        got = float(link.sum_rate(P))
        assert got >= 0.98 * best
        assert best >= 0.98 * got
