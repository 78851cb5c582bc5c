import numpy as np
import pytest

from nfisac.config import desk_config
from nfisac.conic import Infeasible
from nfisac.experiments import gen_scenario
from nfisac.optimizer import (LN2, TAU, PddOptions, PddState, analog_objective, augmented_wmse, compute_aux,
                              mmse, qt_surrogate, restore_sensing_feasibility, solve_inner_convex,
                              stream_mse, update_analog, update_digital, update_equalizers, update_qt_aux,
                              update_receive_filters, update_weights)
from nfisac.rates import comm_rates, sensing_sinr

from .oracles import random_precoder, random_unit


def _instance(rng, seed=0, **kw):
    cfg = desk_config().replace(**kw)
    sc = gen_scenario(cfg, seed)
    P = random_precoder(rng, cfg.n_tx, cfg.n_users + 1, cfg.power_max_mw)
    return cfg, sc, P


# -- receive filters -------------------------------------------------------------

def test_filter_single_target_beats_random_samples(rng):
    cfg, sc, P = _instance(rng, n_targets=1)
    u = update_receive_filters(P, sc, cfg)
    g = sensing_sinr(P, u, sc, cfg)[0]
    assert g == pytest.approx(np.linalg.norm(u[:, 0].conj() @ sc.sense_channels[0] @ P) ** 2
                              / cfg.noise_sense_mw, rel=1e-10)
    V = random_unit(rng, cfg.n_rx, 10_000)
    samples = np.linalg.norm(V.conj() @ sc.sense_channels[0] @ P, axis=1) ** 2 / cfg.noise_sense_mw
    assert samples.max() <= g * (1 + 1e-12)


def test_filter_scale_invariance_and_norm(rng):
    cfg, sc, P = _instance(rng)
    U1 = update_receive_filters(P, sc, cfg)
    U2 = update_receive_filters(np.sqrt(2) * P, sc, cfg)
    np.testing.assert_allclose(np.linalg.norm(U1, axis=0), 1.0, atol=1e-12)
    for m in range(cfg.n_targets):
        assert abs(np.vdot(U1[:, m], U2[:, m])) == pytest.approx(1.0, abs=1e-8)


# -- equalizers and weights --------------------------------------------------------

def test_equalizer_orthogonal_common(rng):
    cfg, sc, P = _instance(rng, n_users=1)
    h = sc.comm_channels[0]
    P[:, 0] -= np.vdot(h, P[:, 0]) / np.vdot(h, h) * h
    w_c, _ = update_equalizers(P, sc, cfg)
    d_c, _ = mmse(P, sc, cfg)
    assert abs(w_c[0]) < 1e-12
    assert d_c[0] == pytest.approx(1.0, abs=1e-12)


def test_single_user_half_mse(rng):
    cfg, sc, P = _instance(rng, n_users=1)
    h = sc.comm_channels[0]
    P[:] = 0
    P[:, 1] = h / np.linalg.norm(h) ** 2 * np.sqrt(cfg.noise_comm_mw)
    _, d_p = mmse(P, sc, cfg)
    assert d_p[0] == pytest.approx(0.5, rel=1e-12)
    assert -np.log2(d_p[0]) == pytest.approx(1.0, rel=1e-12)


def test_equalizers_are_stationary(rng):
    cfg, sc, P = _instance(rng)
    w_c, w_p = update_equalizers(P, sc, cfg)
    step = 1e-6
    for which in range(2):
        for k in range(cfg.n_users):
            for direction in (step, 1j * step):
                w = [w_c.copy(), w_p.copy()]
                scale = abs(w[which][k]) or 1.0
                w[which][k] += direction * scale
                up = stream_mse(P, *w, sc, cfg)[which][k]
                w[which][k] -= 2 * direction * scale
                dn = stream_mse(P, *w, sc, cfg)[which][k]
                assert abs(up - dn) / (2 * step) < 1e-5


def test_weights_fixed_points():
    e_c, e_p = update_weights(np.array([1.0]), np.array([0.5]))
    assert augmented_wmse(e_c, 1.0)[0] == pytest.approx(TAU, abs=1e-14)
    assert augmented_wmse(e_p, 0.5)[0] == pytest.approx(TAU - 1, abs=1e-14)
    assert e_c[0] == pytest.approx(1 / LN2)


def test_weights_minimize(rng):
    d = rng.uniform(0.01, 1, 20)
    e, _ = update_weights(d, d)
    for di, ei in zip(d, e):
        trial = rng.uniform(1e-3, 50, 100)
        assert np.all(augmented_wmse(trial, di) >= augmented_wmse(ei, di) - 1e-12)


def test_weights_reject_nonpositive():
    with pytest.raises(ValueError):
        update_weights(np.array([0.0]), np.array([0.5]))


def test_rate_wmmse_identity(rng):
    cfg, sc, P = _instance(rng, sic_residual=0.2)
    d_c, d_p = mmse(P, sc, cfg)
    e_c, e_p = update_weights(d_c, d_p)
    rep = comm_rates(P, np.zeros(cfg.n_users), sc, cfg)
    np.testing.assert_allclose(augmented_wmse(e_c, d_c), TAU - rep.common_rates, atol=1e-9)
    np.testing.assert_allclose(augmented_wmse(e_p, d_p), TAU - rep.private_rates, atol=1e-9)
    np.testing.assert_allclose(-np.log2(d_c), rep.common_rates, atol=1e-9)


# -- quadratic transform ---------------------------------------------------------

def test_qt_zero_precoder(rng):
    cfg, sc, P = _instance(rng)
    P[:] = 0
    U = random_unit(rng, cfg.n_rx, cfg.n_targets).T
    X = update_qt_aux(P, U, sc, cfg)
    np.testing.assert_array_equal(X, 0)
    assert qt_surrogate(X[:, 0], P, U[:, 0], 0, sc, cfg) == 0.0


def test_qt_tight_and_maximal(rng):
    cfg, sc, P = _instance(rng)
    U = update_receive_filters(P, sc, cfg)
    X = update_qt_aux(P, U, sc, cfg)
    g = sensing_sinr(P, U, sc, cfg)
    for m in range(cfg.n_targets):
        f = qt_surrogate(X[:, m], P, U[:, m], m, sc, cfg)
        assert abs(f - g[m]) <= 1e-10 * max(1.0, g[m])
        for _ in range(100):
            x = X[:, m] + (rng.standard_normal(X.shape[0]) + 1j * rng.standard_normal(X.shape[0])) \
                * np.abs(X[:, m]).max()
            assert qt_surrogate(x, P, U[:, m], m, sc, cfg) <= f + 1e-9 * max(1.0, f)


# -- digital and analog updates ------------------------------------------------------

def _fw(rng, n_t=16, n_f=4, cols=4):
    F = np.exp(2j * np.pi * rng.random((n_t, n_f)))
    W = rng.standard_normal((n_f, cols)) + 1j * rng.standard_normal((n_f, cols))
    return F, W


def test_digital_exact_fit(rng):
    F, W0 = _fw(rng)
    W = update_digital(F, F @ W0, np.zeros((16, 4)), 0.7)
    np.testing.assert_allclose(W, W0, atol=1e-10)


def test_digital_normal_equations_and_optimality(rng):
    F, _ = _fw(rng)
    P = rng.standard_normal((16, 4)) + 1j * rng.standard_normal((16, 4))
    D = rng.standard_normal((16, 4)) + 1j * rng.standard_normal((16, 4))
    rho = 0.3
    W = update_digital(F, P, D, rho)
    np.testing.assert_allclose(F.conj().T @ (P + rho * D - F @ W), 0, atol=1e-8)
    best = analog_objective(F, W, P, D, rho)
    for _ in range(100):
        dW = 1e-3 * (rng.standard_normal(W.shape) + 1j * rng.standard_normal(W.shape))
        assert analog_objective(F, W + dW, P, D, rho) >= best - 1e-10


def test_digital_ridge_on_singular_analog(rng):
    F = np.ones((8, 3), dtype=complex)
    W = update_digital(F, np.ones((8, 2)), np.zeros((8, 2)), 1.0)
    assert np.all(np.isfinite(W))


def test_analog_sweep_monotone_unit_modulus(rng):
    for _ in range(10):
        F, W = _fw(rng)
        P = rng.standard_normal((16, 4)) + 1j * rng.standard_normal((16, 4))
        D = rng.standard_normal((16, 4)) + 1j * rng.standard_normal((16, 4))
        before = analog_objective(F, W, P, D, 0.5)
        F2 = update_analog(F, W, P, D, 0.5)
        np.testing.assert_allclose(np.abs(F2), 1.0, atol=1e-12)
        assert analog_objective(F2, W, P, D, 0.5) <= before + 1e-10


def test_analog_entry_is_exact_minimizer(rng):
    # each entry update solves its scalar problem: compare with a dense phase grid
    F, W = _fw(rng, n_t=3, n_f=2, cols=3)
    P = rng.standard_normal((3, 3)) + 1j * rng.standard_normal((3, 3))
    D = np.zeros_like(P)
    F1 = update_analog(F, W, P, D, 1.0)
    G = F.copy()
    G[0, 0] = F1[0, 0]
    best = analog_objective(G, W, P, D, 1.0)
    for phi in np.linspace(0, 2 * np.pi, 3601):
        G[0, 0] = np.exp(1j * phi)
        assert analog_objective(G, W, P, D, 1.0) >= best - 1e-9


def test_analog_single_column_closed_form(rng):
    F, W = _fw(rng, n_t=6, n_f=1, cols=3)
    P = rng.standard_normal((6, 3)) + 1j * rng.standard_normal((6, 3))
    F1 = update_analog(F, W, P, np.zeros_like(P), 1.0)
    # with one RF chain every entry aligns with row i of P W^H
    np.testing.assert_allclose(F1[:, 0], np.exp(1j * np.angle(P @ W[0].conj())), atol=1e-12)


def test_analog_zero_chi_keeps_phase():
    F = np.exp(1j * np.array([[0.3]]))
    W = np.zeros((1, 2))
    F1 = update_analog(F, W, np.zeros((1, 2)), np.zeros((1, 2)), 1.0)
    assert F1[0, 0] == F[0, 0]


# -- conic subproblem -------------------------------------------------------------

def _cvx_inner(aux, state, F, W, sc, cfg):
    cp = pytest.importorskip("cvxpy")
    H, G = sc.comm_channels, sc.sense_channels
    K, n_t = H.shape
    P = cp.Variable((n_t, K + 1), complex=True)
    c = cp.Variable(K)
    Rs = cp.Variable()
    hp = [H[k].conj() @ P for k in range(K)]
    s2 = cfg.noise_comm_mw
    cons = [c >= 0, cp.sum_squares(cp.abs(P)) <= cfg.power_max_mw]
    for k in range(K):
        wc, ec = aux.eq_common[k], aux.wt_common[k]
        wp, ep = aux.eq_private[k], aux.wt_private[k]
        tot = cp.sum_squares(cp.abs(hp[k]))
        mse_c = abs(wc) ** 2 * (tot + s2) - 2 * cp.real(wc * hp[k][0]) + 1
        cons.append(cp.sum(c) + ec * mse_c - np.log2(ec) <= TAU)
        priv = cp.sum_squares(cp.abs(hp[k][1:]))
        mse_p = abs(wp) ** 2 * (priv + s2) - 2 * cp.real(wp * hp[k][k + 1]) + 1
        cons.append(c[k] - (ep * mse_p - np.log2(ep)) >= Rs - TAU)
    thr = cfg.sense_sinr_min
    for m in range(G.shape[0]):
        u, x = aux.filters[:, m], aux.qt_vectors[:, m]
        inter = cfg.noise_sense_mw + sum(cfg.alphas[j] * cp.sum_squares(cp.abs(u.conj() @ G[j] @ P))
                                         for j in range(G.shape[0]) if j != m)
        lin = np.sqrt(cfg.alphas[m]) * cp.real((u.conj() @ G[m]) @ P @ x)
        cons.append(2 * lin - inter * np.linalg.norm(x) ** 2 >= thr)
    r = P - F @ W
    obj = Rs - cp.real(cp.sum(cp.multiply(state.dual.conj(), r))) - cp.sum_squares(cp.abs(r)) / (2 * state.penalty)
    prob = cp.Problem(cp.Maximize(obj), cons)
    prob.solve(solver=cp.CLARABEL)
    return prob.value


def test_inner_convex_matches_cvxpy(rng):
    cfg = desk_config().replace(n_tx=8, n_rx=8, n_rf=4, n_users=2, n_targets=2)
    sc = gen_scenario(cfg, 5)
    F = np.exp(2j * np.pi * rng.random((8, 4)))
    W = rng.standard_normal((4, 3)) + 1j * rng.standard_normal((4, 3))
    W *= np.sqrt(0.5 * cfg.power_max_mw) / np.linalg.norm(F @ W)
    P0 = restore_sensing_feasibility(F @ W, sc, cfg)
    aux = compute_aux(P0, sc, cfg)
    D = 0.01 * (rng.standard_normal(P0.shape) + 1j * rng.standard_normal(P0.shape))
    state = PddState(D, 0.5, 1.0)
    P, c, rs = solve_inner_convex(aux, state, F, W, sc, cfg)
    r = P - F @ W
    ours = rs - np.real(np.vdot(D, r)) - np.linalg.norm(r) ** 2 / 1.0
    ref = _cvx_inner(aux, state, F, W, sc, cfg)
    assert ours == pytest.approx(ref, rel=1e-5, abs=1e-6)
    assert np.linalg.norm(P) ** 2 <= cfg.power_max_mw * (1 + 1e-7)


def test_inner_convex_infeasible_threshold(rng):
    cfg = desk_config().replace(n_tx=8, n_rx=8, n_rf=4, n_users=2, n_targets=2, sense_rate_min_bps=40.0)
    sc = gen_scenario(cfg, 5)
    P0 = random_precoder(rng, 8, 3, cfg.power_max_mw)
    aux = compute_aux(P0, sc, cfg)
    with pytest.raises(Infeasible):
        solve_inner_convex(aux, None, None, None, sc, cfg, PddOptions(hybrid=False))
    with pytest.raises(Infeasible):
        restore_sensing_feasibility(P0, sc, cfg)


def test_restore_sensing_feasibility(rng):
    cfg = desk_config().replace(sense_rate_min_bps=10.0)
    sc = gen_scenario(cfg, 2)
    P0 = random_precoder(rng, cfg.n_tx, cfg.n_users + 1, 0.5 * cfg.power_max_mw)
    P = restore_sensing_feasibility(P0, sc, cfg)
    U = update_receive_filters(P, sc, cfg)
    assert np.log2(1 + sensing_sinr(P, U, sc, cfg)).min() >= 10.0 - 1e-6
    assert np.linalg.norm(P) ** 2 <= cfg.power_max_mw * (1 + 1e-7)
