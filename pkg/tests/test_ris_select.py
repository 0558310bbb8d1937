import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from risgreen.harness import baseline_all_active
from risgreen.netmodel import (
    ChannelRealization,
    RisConfiguration,
    effective_channels,
    generate_channels,
    sinr,
)
from risgreen.ris_select import (
    DcParams,
    InfeasibleError,
    LiftedData,
    binary_search_active_set,
    build_lifting,
    dc_objective,
    dc_phase_selection,
    extract_rank_one,
    lifted_sinr,
    minimize_network_power,
    rank_gap,
    recover_phases,
    sdr_solve,
    spectral_subgradient,
    unit_phases,
)

from conftest import random_channels, small_config


def _random_psd(rng, n, rank=None):
    A = rng.standard_normal((n, rank or n)) + 1j * rng.standard_normal((n, rank or n))
    return A @ A.conj().T


def _lift(v):
    vh = np.append(v, 1.0)
    return np.outer(vh, vh.conj())


# ---- lifting ----

def test_lifting_single_element_structure(rng):
    ch = random_channels(rng, 2, 2, (1,))
    lift = build_lifting(ch, rng.standard_normal((2, 2)) + 0j)
    R = lift.R(0, 1)
    assert R.shape == (2, 2) and R[1, 1] == 0
    np.testing.assert_allclose(R, R.conj().T)


def test_lifting_matches_effective_channel_all_ones(rng):
    ch = random_channels(rng, 3, 3, (3, 2))
    W = rng.standard_normal((3, 3)) + 1j * rng.standard_normal((3, 3))
    lift = build_lifting(ch, W)
    H = effective_channels(ch, RisConfiguration.all_active((3, 2)))
    theta_hat = np.ones(lift.side)
    for k in range(3):
        for j in range(3):
            quad = np.real(theta_hat.conj() @ lift.R(k, j) @ theta_hat) + abs(lift.b[k, j]) ** 2
            assert quad == pytest.approx(abs(H[k] @ W[j]) ** 2, rel=1e-10)


def test_lifting_zero_beamformer(rng):
    ch = random_channels(rng, 2, 2, (3,))
    W = np.zeros((2, 2), complex)
    W[0] = [1.0, 2.0j]
    lift = build_lifting(ch, W)
    assert np.all(lift.a[:, 1] == 0) and np.all(lift.b[:, 1] == 0)
    assert np.all(lift.R(0, 1) == 0) and np.all(lift.R(1, 1) == 0)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_bordered_quadratic_identity(seed):
    rng = np.random.default_rng(seed)
    ch = random_channels(rng, 2, 2, (2, 3))
    lift = build_lifting(ch, rng.standard_normal((2, 2)) + 1j * rng.standard_normal((2, 2)))
    v = rng.standard_normal(5) + 1j * rng.standard_normal(5)
    vh = np.append(v, 1.0)
    for k, j in itertools.product(range(2), repeat=2):
        lhs = np.real(vh.conj() @ lift.R(k, j) @ vh) + abs(lift.b[k, j]) ** 2
        assert lhs == pytest.approx(abs(np.vdot(v, lift.a[k, j]) + lift.b[k, j]) ** 2, rel=1e-10)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_lifted_sinr_matches_netmodel(seed):
    rng = np.random.default_rng(seed)
    elements = (2, 3)
    ch = random_channels(rng, 3, 3, elements)
    W = rng.standard_normal((3, 3)) + 1j * rng.standard_normal((3, 3))
    phases = tuple(np.exp(1j * rng.uniform(0, 2 * np.pi, n)) for n in elements)
    ris = RisConfiguration(frozenset({0, 1}), phases)
    noise = np.array([0.5, 1.0, 2.0])
    s1 = lifted_sinr(build_lifting(ch, W), np.conj(ris.stacked_phases()), noise)
    np.testing.assert_allclose(s1, sinr(ch, ris, W, noise), rtol=1e-9)


# ---- SDR ----

def test_sdr_switches_everything_off_when_direct_link_suffices():
    cfg = small_config(M=1, K=1, L=2, N=2, sinr_threshold_db=0.0, noise_power_dbm=0.0)
    ch = ChannelRealization(np.array([[1.0]], complex), (0.1 * np.ones((2, 1), complex),) * 2,
                            (0.1 * np.ones((1, 2), complex),) * 2)
    lift = build_lifting(ch, np.array([[3.0]]))  # SINR 9 on the direct path alone
    _, beta = sdr_solve(lift, cfg)
    np.testing.assert_allclose(beta, 0.0, atol=1e-4)


def test_rank_one_sdr_solution_recovered():
    # single element, single user: the relaxation side is 2 with unit diagonal;
    # the margin-maximizing fixed-set solution is rank one
    cfg = small_config(M=1, K=1, L=1, N=1, sinr_threshold_db=0.0, noise_power_dbm=0.0)
    ch = ChannelRealization(np.array([[0.3]], complex), (np.array([[1.0]], complex),),
                            (np.array([[0.8j]]),))
    lift = build_lifting(ch, np.array([[2.0]]))
    Theta, _ = sdr_solve(lift, cfg, relaxed_beta_fixed=[1.0])
    f = extract_rank_one(Theta)
    assert not f.approximate
    np.testing.assert_allclose(np.outer(f.vector, f.vector.conj()), Theta, atol=1e-6)


def _grid_instance(seed):
    """L=1, N=2, K=2 with a weak direct path so the RIS matters."""
    rng = np.random.default_rng(seed)
    cn = lambda *s: (rng.standard_normal(s) + 1j * rng.standard_normal(s)) / np.sqrt(2)
    ch = ChannelRealization(0.2 * cn(2, 2), (cn(2, 2),), (cn(2, 2),))
    W = cn(2, 2)
    return ch, W


@pytest.mark.parametrize("seed", range(12))
def test_sdr_lower_bounds_psk_grid(seed):
    ch, W = _grid_instance(seed)
    cfg = small_config(M=2, K=2, L=1, N=2, sinr_threshold_db=-6.0, noise_power_dbm=-10.0)
    lift = build_lifting(ch, W)
    gamma, noise = cfg.sinr_threshold, cfg.noise_power_mw
    grid = np.exp(2j * np.pi * np.arange(16) / 16)
    best = np.inf
    if np.all(lifted_sinr(lift, np.zeros(2), noise) >= gamma):
        best = 0.0
    else:
        for p in itertools.product(grid, repeat=2):
            if np.all(lifted_sinr(lift, np.conj(np.array(p)), noise) >= gamma):
                best = float(cfg.ris_power_mw[0])
                break
    try:
        Theta, beta = sdr_solve(lift, cfg)
    except InfeasibleError:
        assert best == np.inf  # the relaxation can only be infeasible if the grid is
        return
    sdr_obj = float(cfg.ris_power_mw @ beta ** 2)
    assert sdr_obj <= best + 1e-6 * max(1.0, sdr_obj)
    assert np.linalg.eigvalsh(Theta).min() >= -1e-7
    assert np.real(Theta[-1, -1]) == pytest.approx(1.0, abs=1e-7)


# ---- spectral subgradient ----

def test_subgradient_distinct_eigenvalues():
    np.testing.assert_allclose(spectral_subgradient(np.diag([3.0, 1.0])), np.diag([1.0, 0.0]), atol=1e-14)


def test_subgradient_inequality_at_identity(rng):
    n = 3
    Y = spectral_subgradient(np.eye(n))
    assert np.trace(Y).real == pytest.approx(1.0, abs=1e-12)
    assert np.linalg.matrix_rank(Y, tol=1e-9) == 1
    for _ in range(100):
        X = _random_psd(rng, n)
        lhs = np.linalg.eigvalsh(X)[-1]
        rhs = 1.0 + np.real(np.trace((X - np.eye(n)) @ Y))
        assert lhs >= rhs - 1e-10


def test_subgradient_rank_one(rng):
    theta = rng.standard_normal(4) + 1j * rng.standard_normal(4)
    u = theta / np.linalg.norm(theta)
    np.testing.assert_allclose(spectral_subgradient(np.outer(theta, theta.conj())), np.outer(u, u.conj()),
                               atol=1e-12)


def test_subgradient_tie_break_is_real_positive(rng):
    theta = rng.standard_normal(3) + 1j * rng.standard_normal(3)
    Y = spectral_subgradient(np.outer(theta, theta.conj()))
    assert Y[0, 0].real > 0


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 4))
def test_rank_gap_nonnegative(seed, rank):
    rng = np.random.default_rng(seed)
    X = _random_psd(rng, 4, rank)
    gap = rank_gap(X)
    assert gap >= -1e-10
    assert (gap <= 1e-9 * np.trace(X).real) == (rank == 1)


# ---- rank-one extraction and phase recovery ----

def test_extract_rank_one_exact(rng):
    theta = rng.standard_normal(4) + 1j * rng.standard_normal(4)
    f = extract_rank_one(np.outer(theta, theta.conj()))
    assert not f.approximate
    phase = np.vdot(f.vector, theta) / abs(np.vdot(f.vector, theta))
    np.testing.assert_allclose(f.vector * phase, theta, atol=1e-12)


def test_extract_rank_one_flags_identity():
    assert extract_rank_one(np.eye(2)).approximate


def test_extract_rank_one_perturbed(rng):
    theta = rng.standard_normal(5) + 1j * rng.standard_normal(5)
    E = rng.standard_normal((5, 5)) + 1j * rng.standard_normal((5, 5))
    Theta = np.outer(theta, theta.conj()) + 1e-8 * (E + E.conj().T)
    v = extract_rank_one(Theta).vector
    assert np.linalg.norm(np.outer(v, v.conj()) - Theta) <= 1e-6


def test_recover_phases_identity_when_last_is_one(rng):
    theta = rng.standard_normal(4) + 1j * rng.standard_normal(4)
    np.testing.assert_array_equal(recover_phases(np.append(theta, 1.0)), theta)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(0, 2 * np.pi))
def test_recover_phases_global_phase_and_round_trip(seed, phi):
    rng = np.random.default_rng(seed)
    theta = np.exp(1j * rng.uniform(0, 2 * np.pi, 6))
    vh = np.append(theta, 1.0)
    np.testing.assert_allclose(recover_phases(vh * np.exp(1j * phi)), recover_phases(vh), atol=1e-12)
    v = extract_rank_one(np.outer(vh, vh.conj())).vector
    np.testing.assert_allclose(recover_phases(v), theta, atol=1e-12)


def test_recover_phases_vanishing_last_entry():
    with pytest.raises(ValueError):
        recover_phases(np.array([1.0, 0.0]))


def test_unit_phases_conjugate_convention(rng):
    theta = np.exp(1j * rng.uniform(0, 2 * np.pi, 5))
    np.testing.assert_allclose(unit_phases(np.conj(theta) * 3.0), theta, atol=1e-14)


# ---- DC iterations ----

def _dc_instance(seed, M=2, K=2, L=2, N=3):
    cfg = small_config(M=M, K=K, L=L, N=N, sinr_threshold_db=0.0)
    ch = generate_channels(cfg.replace(seed=seed), 0)
    W = minimize_network_power.__globals__["solve_beamforming"](ch, RisConfiguration.all_active(ch.elements_per_ris),
                                                             cfg)
    return cfg, ch, W


def test_dc_rank_one_feasible_start_stops_at_once():
    cfg, ch, W = _dc_instance(3)
    assert W.feasible
    lift = build_lifting(ch, W)
    init = _lift(np.ones(lift.total_elements))  # all-ones phases: feasible for these beamformers
    res = dc_phase_selection(lift, cfg, DcParams(), init=init)
    first = res.log[0]
    assert first.rank_gap <= DcParams().rank_gap_tol * np.trace(res.Theta).real + 1e-9


@pytest.mark.parametrize("seed", range(6))
def test_dc_proximal_descent_inequality(seed):
    cfg, ch, W = _dc_instance(seed)
    if not W.feasible:
        pytest.skip("all-active start infeasible for this draw")
    params = DcParams(proximal=True, strong_convexity=1e-3)
    lift = build_lifting(ch, W)
    init = _lift(np.ones(lift.total_elements))
    res = dc_phase_selection(lift, cfg, params, init=init)
    ris_power = np.array([idx.size * cfg.per_element_power_mw for idx in lift.element_sets])
    u0 = np.array([np.mean(np.real(np.diag(init))[idx]) for idx in lift.element_sets])
    prev = dc_objective(init, u0, ris_power, res.log[0].penalty)
    alpha = params.strong_convexity
    steps = []
    for rec in res.log:
        if rec.penalty != res.log[0].penalty:
            break
        assert prev - rec.objective >= alpha * rec.step_sq - 1e-6
        steps.append(rec.step_sq)
        f_best = min(prev, rec.objective)
        prev = rec.objective
    # average-step bound with the best observed objective standing in for the optimum
    f0 = dc_objective(init, u0, ris_power, res.log[0].penalty)
    assert np.mean(steps) <= (f0 - f_best) / (alpha * len(steps)) + 1e-6


def _psk_best_sinr(lift, noise, levels=64):
    grid = np.exp(2j * np.pi * np.arange(levels) / levels)
    best = 0.0
    for p in itertools.product(grid, repeat=lift.total_elements):
        best = max(best, float(lifted_sinr(lift, np.conj(np.array(p)), noise)[0]))
    return best


@pytest.mark.parametrize("seed", range(5))
def test_dc_phases_reach_psk_optimum(seed):
    rng = np.random.default_rng(seed)
    cn = lambda *s: (rng.standard_normal(s) + 1j * rng.standard_normal(s)) / np.sqrt(2)
    ch = ChannelRealization(0.3 * cn(1, 1), (cn(2, 1),), (cn(1, 2),))
    lift = build_lifting(ch, np.array([[1.0]]))
    noise = np.array([1.0])
    target = 0.98 * _psk_best_sinr(lift, noise)
    cfg = small_config(M=1, K=1, L=1, N=2, sinr_threshold_db=10 * np.log10(target), noise_power_dbm=0.0)
    res = dc_phase_selection(lift, cfg, fixed_beta=[1.0])
    v = np.exp(1j * np.angle(recover_phases(extract_rank_one(res.Theta).vector)))
    assert lifted_sinr(lift, v, noise)[0] >= target * (1 - 1e-3)


# ---- binary search over the number of switched-off RISs ----

def _toy_lifting(L, n=2):
    sets = tuple(np.arange(l * n, (l + 1) * n) for l in range(L))
    return LiftedData(np.zeros((1, 1, L * n), complex), np.zeros((1, 1), complex), sets)


def _linear_scan(beta, predicate):
    order = np.argsort(beta, kind="stable")
    for j0 in range(len(beta), -1, -1):
        active = frozenset(int(l) for l in order[j0:])
        if predicate(active):
            return active
    return None


def test_binary_search_all_off_feasible():
    L = 3
    lift = _toy_lifting(L)
    active, ris = binary_search_active_set(np.array([0.2, 0.9, 0.5]), np.ones(2 * L + 1), lift, small_config(L=L),
                                           feasible=lambda cfg: True)
    assert active == frozenset() and ris.active == frozenset()


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(0, 1), min_size=3, max_size=3), st.integers(0, 3))
def test_binary_search_equals_linear_scan(beta, max_off):
    beta = np.array(beta)
    L = 3
    lift = _toy_lifting(L)
    # monotone oracle: feasible iff at most max_off RISs are off
    predicate = lambda active: L - len(active) <= max_off
    calls = []

    def feasible(ris):
        calls.append(ris.active)
        return predicate(ris.active)

    active, ris = binary_search_active_set(beta, np.ones(2 * L + 1), lift, small_config(L=L), feasible=feasible)
    assert active == _linear_scan(beta, predicate)
    assert len(calls) <= 3  # ceil(log2(L + 2))
    for l in active:
        np.testing.assert_allclose(np.abs(ris.phases[l]), 1.0, atol=1e-12)


def test_binary_search_all_active_infeasible():
    L = 3
    with pytest.raises(InfeasibleError):
        binary_search_active_set(np.array([0.1, 0.2, 0.3]), np.ones(2 * L + 1), _toy_lifting(L), small_config(L=L),
                                 feasible=lambda ris: False)


# ---- alternating optimization ----

def test_single_near_user_switches_all_ris_off():
    cfg = small_config(M=2, K=1, L=2, N=4, sinr_threshold_db=-20.0)
    rng = np.random.default_rng(0)
    h = np.array([[1e-3, 2e-3j]])
    cn = lambda *s: 1e-6 * (rng.standard_normal(s) + 1j * rng.standard_normal(s))
    ch = ChannelRealization(h, (cn(4, 2), cn(4, 2)), (cn(1, 4), cn(1, 4)))
    res = minimize_network_power(ch, cfg)
    assert res.feasible and res.ris.active == frozenset()
    expected = cfg.sinr_threshold[0] * cfg.noise_power_mw[0] / np.linalg.norm(h) ** 2
    assert res.power.transmit_mw == pytest.approx(expected / cfg.amplifier_efficiency, rel=1e-5)
    assert res.power.ris_mw == 0.0


@pytest.mark.slow
def test_never_worse_than_all_active():
    cfg = small_config(M=4, K=2, L=2, N=4, sinr_threshold_db=1.0)
    compared = 0
    for trial in range(20):
        ch = generate_channels(cfg, trial)
        dc, base = minimize_network_power(ch, cfg), baseline_all_active(ch, cfg)
        if base.feasible:
            assert dc.feasible
            assert dc.power.total_mw <= base.power.total_mw * (1 + 1e-9)
            s = sinr(ch, dc.ris, dc.beamforming, cfg)
            assert np.all(s >= cfg.sinr_threshold * (1 - 1e-6))
            compared += 1
    assert compared >= 15


def test_infeasible_start_reported():
    cfg = small_config(M=2, K=2, L=1, N=2, sinr_threshold_db=40.0, max_transmit_power_mw=1.0)
    ch = generate_channels(cfg, 0)
    res = minimize_network_power(ch, cfg)
    assert not res.feasible and res.power is None


def test_trace_and_logs_serializable():
    cfg = small_config(M=2, K=2, L=2, N=3)
    res = minimize_network_power(generate_channels(cfg, 1), cfg)
    assert res.trace[0]["iteration"] == 0
    for log in res.dc_logs:
        for rec in log:
            assert set(eval_json(rec.to_json())) == {"iteration", "objective", "rank_gap", "penalty", "step_sq",
                                                     "status"}


def eval_json(text):
    import json
    return json.loads(text)
