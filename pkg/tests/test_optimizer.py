import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.optimize import minimize_scalar
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from stacksim import sdp
from stacksim.channel import PhaseConfig, assemble_H, build_channel, rate_from_scale, snr_scale
from stacksim.config import default_scenario
from stacksim.geometry import transmission_delay_D2
from stacksim.optimizer import (AOPhaseOptimizer, BCDPhaseOptimizer, FactorizationError,
                                LayerSubproblem, ao_baseline, bcd_optimize, check_channel,
                                closed_form_td, factorize_layer, gaussian_randomize, lift_costs,
                                lifted_factors, randomization_candidates, regret)


@pytest.fixture
def instance(small_scenario):
    rng = np.random.default_rng(4)
    return small_scenario, build_channel(small_scenario, rng), PhaseConfig.random(small_scenario, rng)


def test_single_layer_factors():
    s = default_scenario().replace(atoms_tx=4, atoms_rx=4, num_streams=2, layers_tx=1, layers_rx=1)
    rng = np.random.default_rng(0)
    state, p = build_channel(s, rng), PhaseConfig.random(s, rng)
    sub = factorize_layer(1, "tx", p, state)
    np.testing.assert_allclose(sub.right, state.W[0])
    np.testing.assert_allclose(sub.left, state.rx_cascade(p) @ state.G)


@pytest.mark.parametrize("side", ["tx", "rx"])
@pytest.mark.parametrize("p", [1, 2])
def test_every_layer_reconstructs(instance, side, p):
    s, state, phases = instance
    sub = factorize_layer(p, side, phases, state)
    H = assemble_H(phases, state)
    assert np.linalg.norm(sub.channel() - H) <= 1e-9 * np.linalg.norm(H)
    assert sub.atoms == (s.atoms_tx if side == "tx" else s.atoms_rx)


def test_scalar_factorisation_by_hand():
    s = default_scenario().replace(atoms_tx=1, atoms_rx=1, num_streams=1, layers_tx=2, layers_rx=2)
    rng = np.random.default_rng(1)
    state, p = build_channel(s, rng), PhaseConfig.random(s, rng)
    w1, w2, u2, uo, g = state.W[0][0, 0], state.W[1][0, 0], state.U[0][0, 0], state.U_out[0, 0], state.G[0, 0]
    phi, psi = p.phi[:, 0], p.psi[:, 0]
    H = uo * psi[1] * u2 * psi[0] * g * phi[1] * w2 * phi[0] * w1
    sub = factorize_layer(2, "rx", p, state)
    assert sub.left[0, 0] == pytest.approx(uo)
    assert sub.right[0, 0] == pytest.approx(u2 * psi[0] * g * phi[1] * w2 * phi[0] * w1)
    assert sub.channel()[0, 0] == pytest.approx(H, rel=1e-13)


def test_factorisation_errors(instance):
    s, state, phases = instance
    with pytest.raises(IndexError):
        factorize_layer(3, "tx", phases, state)
    with pytest.raises(ValueError):
        factorize_layer(1, "middle", phases, state)


def test_factorisation_mismatch_aborts(instance, monkeypatch):
    s, state, phases = instance
    import stacksim.optimizer as opt
    monkeypatch.setattr(opt, "assemble_H", lambda p, st_: 2 * assemble_H(p, st_))
    with pytest.raises(FactorizationError):
        factorize_layer(1, "tx", phases, state)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10_000))
def test_lifting_identity(seed):
    rng = np.random.default_rng(seed)
    S, a = 3, 5
    sub = LayerSubproblem("tx", 1, rng.standard_normal((S, a)) + 1j * rng.standard_normal((S, a)),
                          rng.standard_normal((a, S)) + 1j * rng.standard_normal((a, S)), np.ones(a))
    v = np.exp(2j * np.pi * rng.random(a))
    lhs = sum(np.linalg.norm(v.conj() @ L) ** 2 for L in lifted_factors(sub))
    assert lhs == pytest.approx(sub.objective(v), rel=1e-10)
    vbar = np.append(v, 1.0)
    lifted = sum(np.real(vbar.conj() @ R @ vbar) for R in lift_costs(sub))
    assert lifted == pytest.approx(sub.objective(v), rel=1e-10)


def test_lifted_costs_structure(instance):
    s, state, phases = instance
    sub = factorize_layer(1, "rx", phases, state)
    costs = lift_costs(sub)
    assert len(costs) == s.num_streams
    for R, L in zip(costs, lifted_factors(sub)):
        assert R.shape == (sub.atoms + 1,) * 2
        assert np.allclose(R, R.conj().T)
        assert np.linalg.eigvalsh(R).min() > -1e-8 * np.abs(R).max()
        assert np.all(R[-1] == 0) and np.all(R[:, -1] == 0)
        assert np.real(np.trace(R)) == pytest.approx(np.linalg.norm(L) ** 2, rel=1e-12)


def test_single_atom_lift():
    left = np.array([[2 - 1j], [0.5j]])
    right = np.array([[1 + 1j, 3.0]])
    costs = lift_costs(LayerSubproblem("tx", 1, left, right, np.ones(1)))
    for s, R in enumerate(costs):
        assert R[0, 0].real == pytest.approx(abs(left[s, 0]) ** 2 * np.linalg.norm(right) ** 2)


def test_randomisation_exact_on_rank_one(rng):
    a = 4
    sub = LayerSubproblem("tx", 1, rng.standard_normal((2, a)) + 0j, rng.standard_normal((a, 2)) + 0j, np.ones(a))
    vbar = np.append(np.exp(2j * np.pi * rng.random(a)), 1.0)
    V = np.outer(vbar, vbar.conj())
    prob = sdp.SdpProblem(lift_costs(sub))
    sol = sdp.SdpSolution(V, prob.objective(V), 0.0, 0)
    pick = gaussian_randomize(sol, sub, 20, rng)
    # clipped round-off eigenvalues perturb random draws at the 1e-8 level
    assert pick.score == pytest.approx(sol.objective, rel=1e-6)
    assert pick.index == -1 or pick.scores[0] == pytest.approx(sol.objective, rel=1e-10)


@settings(max_examples=15, deadline=None)
@given(seed=st.integers(0, 10_000))
def test_randomisation_below_relaxation_and_unimodular(seed):
    rng = np.random.default_rng(seed)
    a = 6
    sub = LayerSubproblem("tx", 1, rng.standard_normal((3, a)) + 1j * rng.standard_normal((3, a)),
                          rng.standard_normal((a, 3)) + 1j * rng.standard_normal((a, 3)), np.ones(a))
    prob = sdp.SdpProblem(lift_costs(sub))
    sol = sdp.solve(prob, tol=1e-8, rng=rng)
    pick = gaussian_randomize(sol, sub, 50, rng)
    assert pick.score <= sol.objective * (1 + 1e-6) + 1e-6
    np.testing.assert_allclose(np.abs(pick.v), 1.0, atol=1e-12)


def test_randomisation_near_grid_optimum():
    import itertools
    rng = np.random.default_rng(21)
    a = 3
    sub = LayerSubproblem("tx", 1, rng.standard_normal((2, a)) + 1j * rng.standard_normal((2, a)),
                          rng.standard_normal((a, 2)) + 1j * rng.standard_normal((a, 2)), np.ones(a))
    ph = np.exp(2j * np.pi * np.arange(16) / 16)
    brute = max(sub.objective(np.array(v)) for v in itertools.product(ph, repeat=a))
    sol = sdp.solve(sdp.SdpProblem(lift_costs(sub)), tol=1e-8, rng=rng)
    assert gaussian_randomize(sol, sub, 500, rng).score >= 0.9 * brute


def test_candidates_zero_free(rng):
    V = np.ones((4, 4), dtype=complex)
    cands = randomization_candidates(V, 30, rng)
    assert cands.shape == (31, 3)
    np.testing.assert_allclose(np.abs(cands), 1.0)


def test_scaled_costs_pick_same_candidate(rng):
    a = 5
    left = rng.standard_normal((3, a)) + 1j * rng.standard_normal((3, a))
    right = rng.standard_normal((a, 3)) + 1j * rng.standard_normal((a, 3))
    sub = LayerSubproblem("tx", 1, left, right, np.ones(a))
    lam = 37.5
    scaled = LayerSubproblem("tx", 1, math.sqrt(lam) * left, right, np.ones(a))
    sol = sdp.solve(sdp.SdpProblem(lift_costs(sub)), rng=np.random.default_rng(0))
    sol2 = sdp.solve(sdp.SdpProblem(lift_costs(scaled)), rng=np.random.default_rng(0))
    p1 = gaussian_randomize(sol, sub, 100, np.random.default_rng(5))
    p2 = gaussian_randomize(sol2, scaled, 100, np.random.default_rng(5))
    assert p1.index == p2.index
    assert p2.score == pytest.approx(lam * p1.score, rel=1e-9)


def test_closed_form_td_examples():
    s = default_scenario().replace(bandwidth=1e7, num_streams=1, packet_mean=1e8, delay_weight=0.5)
    t, flag = closed_form_td(10.0, s)
    assert t == pytest.approx(math.log(2), rel=1e-14) and not flag
    s1 = s.replace(delay_weight=1.0)
    assert closed_form_td(10.0, s1) == (0.0, True)
    assert closed_form_td(5.0, s1) == (0.0, True)


@settings(max_examples=50, deadline=None)
# ranges keep the minimum sharp enough (c*rho >= 2.5e-3) for a float oracle to resolve 1e-6
@given(v=st.floats(5.0, 300.0), S=st.integers(1, 5), ld=st.floats(1e6, 2e8), rho=st.floats(0.05, 10.0))
def test_closed_form_td_is_the_minimiser(v, S, ld, rho):
    s = default_scenario().replace(num_streams=S, packet_mean=ld, delay_weight=rho)
    t, flag = closed_form_td(v, s)
    c = v * s.bandwidth / (S * ld)
    if flag:
        assert t == 0.0 and rho >= c
        return
    res = minimize_scalar(lambda x: math.exp(-c * x) + rho * x, bracket=(0.0, 1e-3 / c), method="golden",
                          tol=1e-12)
    assert t == pytest.approx(res.x, abs=1e-6)
    assert t > 0


def test_regret_formula(scenario):
    v, td = 40.0, 0.3
    a = (v * 1e7 - 1e8) / 1e8
    c = v * 1e7 / (3 * 1e8)
    assert regret(v, td, scenario) == math.exp(-a * 0.5) + math.exp(-c * td) + 1.0 * td


def test_bcd_trace_invariants(instance):
    s, state, phases = instance
    est = BCDPhaseOptimizer(s, max_iter=6, n_draws=40, random_state=3).fit(state, init_phases=phases)
    tr = est.trace_
    assert len(tr) == 6 == est.n_iter_
    rates = np.concatenate(([tr.initial_rate], tr.rates))
    assert np.all(np.diff(rates) >= 0)
    d2 = transmission_delay_D2(s)
    for row in tr.rows:
        assert row.regret == regret(row.rate, row.t_d, s)
        assert row.T == d2 + s.wait_budget + row.t_d
        assert row.h_drift <= 1e-9
        assert len(row.accepted) == s.layers_tx + s.layers_rx
        assert (row.t_d > 0) or row.td_boundary
    assert np.all(np.diff(tr.regrets) <= 0)
    assert (est.phases_.tx > 0).all() and (est.phases_.tx <= 2 * np.pi).all()
    assert est.score(state) == pytest.approx(est.rate_, rel=1e-9)


def test_bcd_with_rate_selection(instance):
    s, state, phases = instance
    est = BCDPhaseOptimizer(s, max_iter=2, n_draws=20, select="rate", random_state=0).fit(state, init_phases=phases)
    assert est.rate_ >= est.trace_.initial_rate
    with pytest.raises(ValueError):
        BCDPhaseOptimizer(s, select="best").fit(state)


def test_ao_monotone(instance):
    s, state, phases = instance
    est = AOPhaseOptimizer(s, max_iter=5, random_state=0).fit(state, init_phases=phases)
    rates = np.concatenate(([est.trace_.initial_rate], est.trace_.rates))
    assert np.all(np.diff(rates) >= -1e-9 * rates.max())
    assert est.trace_.rows[0].h_drift <= 1e-9


def test_single_atom_link_agrees_with_sweep():
    s = default_scenario().replace(atoms_tx=1, atoms_rx=1, num_streams=1, layers_tx=1, layers_rx=1)
    state = build_channel(s, np.random.default_rng(0))
    scale = snr_scale(s)
    sweep = max(rate_from_scale(assemble_H(PhaseConfig(np.array([[a]]), np.array([[b]])), state), scale)
                for a in np.linspace(0.1, 2 * np.pi, 64) for b in np.linspace(0.1, 2 * np.pi, 64))
    bcd = BCDPhaseOptimizer(s, max_iter=2, n_draws=10, random_state=0).fit(state)
    ao = AOPhaseOptimizer(s, max_iter=2, random_state=0).fit(state)
    assert bcd.rate_ == pytest.approx(sweep, rel=1e-9)
    assert ao.rate_ == pytest.approx(sweep, rel=1e-9)


def test_sweep_order_rx_first(instance):
    s, state, phases = instance
    est = BCDPhaseOptimizer(s, max_iter=1, n_draws=10, sweep_order="rx-tx", random_state=0)
    est.fit(state, init_phases=phases)
    assert len(est.layer_status_) == 4 and est.layer_status_[0][1] == "rx"
    with pytest.raises(ValueError):
        BCDPhaseOptimizer(s, sweep_order="zigzag").fit(state)


def test_solver_failure_keeps_previous_phases(instance):
    s, state, phases = instance
    est = BCDPhaseOptimizer(s, max_iter=1, n_draws=10, sdp_tol=1e-300, sdp_max_iter=1, random_state=0)
    est.fit(state, init_phases=phases)
    assert est.trace_.rows[0].accepted == "ssss"
    assert all(st_ == "max_iter" for *_, st_ in est.layer_status_)
    np.testing.assert_array_equal(est.phases_.tx, phases.tx)


def test_estimator_protocol(instance):
    s, state, phases = instance
    est = BCDPhaseOptimizer(s, max_iter=1, n_draws=5, random_state=1)
    params = est.get_params()
    assert params["max_iter"] == 1 and params["scenario"] is s
    twin = clone(est)
    assert twin.get_params()["n_draws"] == 5
    with pytest.raises(NotFittedError):
        est.transform(state)
    H = est.fit(state).transform(state)
    assert H.shape == (s.num_streams, s.num_streams)
    assert est.set_params(max_iter=3).max_iter == 3


def test_channel_validation(instance, scenario):
    s, state, _ = instance
    with pytest.raises(TypeError):
        check_channel(np.eye(3), s)
    with pytest.raises(ValueError):
        check_channel(state, scenario)
    with pytest.raises(ValueError):
        BCDPhaseOptimizer(s.replace(bandwidth=0.0)).fit(state)


def test_reproducible_given_seed(instance):
    s, state, phases = instance
    a = BCDPhaseOptimizer(s, max_iter=2, n_draws=10, random_state=7).fit(state, init_phases=phases)
    b = BCDPhaseOptimizer(s, max_iter=2, n_draws=10, random_state=7).fit(state, init_phases=phases)
    assert np.array_equal(a.phases_.tx, b.phases_.tx) and a.rate_ == b.rate_


def test_function_wrappers(small_scenario):
    tr, ph = bcd_optimize(small_scenario, 2, rng=0, n_draws=10)
    assert len(tr) == 2 and ph.tx.shape == (2, 9)
    tr2, _ = ao_baseline(small_scenario, 2, rng=0)
    assert tr2.initial_rate == tr.initial_rate
