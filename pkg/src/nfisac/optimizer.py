"""Penalty dual decomposition for max-min rate hybrid beamforming.

The coupling ``P = F W`` between the fully digital auxiliary precoder and the
hybrid product is handled by an augmented Lagrangian

    AL = R_s - Re<D, P - F W> - ||P - F W||^2 / (2 rho)

which the inner loop maximizes block by block (receive filters, MMSE
equalizers and weights, quadratic-transform vectors, a conic subproblem in
``(P, c, R_s)``, then ``W`` and ``F`` in closed form). The outer loop updates
the dual matrix ``D`` or shrinks ``rho``.
"""

from __future__ import annotations

import csv
import json
import logging
import time
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.linalg as sla

from .channel import Scenario
from .config import SystemConfig
from .conic import ConicProgram, Infeasible, complex_map, get_backend, real_functional
from .rates import RateReport, comm_rates, interference_matrix, power_terms, rate_report, sensing_sinr

log = logging.getLogger(__name__)

LN2 = np.log(2.0)
TAU = 1.0 / LN2 + np.log2(LN2)
"Constant of the rate-WMMSE identity ``min_eta (eta*mse - log2 eta) = TAU - rate``."

TRACE_COLUMNS = ("outer_iter", "inner_iter", "AL_objective", "residual_inf", "min_rate",
                 "min_sensing_rate", "rho")
SOLUTION_SCHEMA = "nfisac.solution/1"


@dataclass
class HybridBeamformer:
    analog: np.ndarray
    digital: np.ndarray

    @property
    def precoder(self) -> np.ndarray:
        return self.analog @ self.digital


@dataclass
class AuxVars:
    eq_common: np.ndarray
    eq_private: np.ndarray
    wt_common: np.ndarray
    wt_private: np.ndarray
    qt_vectors: np.ndarray
    "Shape ``(K+1, M)``; column ``m`` is the quadratic-transform vector of target ``m``."
    filters: np.ndarray
    precoder: np.ndarray | None = None
    "The precoder the other fields were computed at."


@dataclass
class PddState:
    dual: np.ndarray
    penalty: float
    residual_gate: float
    shrink: float = 0.8
    outer_iter: int = 0


@dataclass(frozen=True)
class PddOptions:
    """Algorithm knobs. ``hybrid=False`` optimizes ``P`` directly (no penalty,
    no ``F``/``W`` blocks); ``common_stream=False`` pins ``p_0 = 0`` and ``c = 0``."""

    hybrid: bool = True
    common_stream: bool = True
    rho0: float = 1.0
    shrink: float = 0.8
    inner_tol: float = 1e-3
    max_inner: int = 100
    residual_tol: float = 1e-4
    objective_tol: float = 1e-3
    max_outer: int = 60
    init_power_fraction: float = 0.9
    feasibility_margin: float = 1e-6
    seed: int = 0
    backend: str = "clarabel"


@dataclass
class Solution:
    """Result of one optimizer run.

    ``report`` is evaluated on the implementable precoder (``F W`` with ``W``
    re-fitted at ``D = 0``; ``P`` itself for fully digital runs) and
    ``report_aux`` on the auxiliary precoder ``P`` carried by the algorithm.
    """

    status: str
    precoder: np.ndarray
    alloc: np.ndarray
    filters: np.ndarray
    beamformer: HybridBeamformer | None = None
    report: RateReport | None = None
    report_aux: RateReport | None = None
    residual: float = 0.0
    outer_iters: int = 0
    inner_iters: list = field(default_factory=list)
    trace: list = field(default_factory=list)
    block_trace: list = field(default_factory=list)
    state: PddState | None = None
    wall_s: float = 0.0
    from_incumbent: bool = False

    @property
    def infeasible(self) -> bool:
        return self.status == "infeasible"

    @property
    def delivered(self) -> np.ndarray:
        if self.beamformer is None:
            return self.precoder
        return self.beamformer.precoder

    @property
    def max_min_rate(self) -> float:
        return float("nan") if self.report is None else self.report.min_total


# -- closed-form block updates ---------------------------------------------

def _fix_phase(u: np.ndarray) -> np.ndarray:
    i = np.argmax(np.abs(u))
    return u * np.exp(-1j * np.angle(u[i]))


def receive_filters_cov(R: np.ndarray, scenario: Scenario, cfg: SystemConfig) -> np.ndarray:
    """Max-SINR receive filters for a transmit covariance ``R``.

    Column ``m`` is the principal generalized eigenvector of the pencil
    ``(alpha_m G_m R G_m^H, Q_m)``, normalized, with the phase fixed so that
    its largest entry is real and positive.
    """
    G = scenario.sense_channels
    alphas = cfg.alphas
    n_rx = G.shape[1]
    U = np.empty((n_rx, G.shape[0]), dtype=complex)
    for m in range(G.shape[0]):
        A = alphas[m] * G[m] @ R @ G[m].conj().T
        A = 0.5 * (A + A.conj().T)
        Q = interference_matrix(R, m, scenario, cfg)
        Q = 0.5 * (Q + Q.conj().T)
        _, v = sla.eigh(A, Q, subset_by_index=[n_rx - 1, n_rx - 1])
        u = v[:, 0]
        U[:, m] = _fix_phase(u / np.linalg.norm(u))
    return U


def update_receive_filters(P: np.ndarray, scenario: Scenario, cfg: SystemConfig) -> np.ndarray:
    """Max-SINR receive filters for precoder ``P``, one unit-norm column per target."""
    return receive_filters_cov(P @ P.conj().T, scenario, cfg)


def update_equalizers(P: np.ndarray, scenario: Scenario, cfg: SystemConfig) -> tuple[np.ndarray, np.ndarray]:
    """MMSE equalizers ``(omega_c, omega_p)`` for the common and private streams."""
    t = power_terms(P, scenario.comm_channels, cfg.noise_comm_mw, cfg.sic_residual)
    g = scenario.comm_channels.conj() @ P
    K = g.shape[0]
    w_c = g[:, 0].conj() / t.T_c
    w_p = g[np.arange(K), np.arange(1, K + 1)].conj() / t.T_p
    return w_c, w_p


def stream_mse(P: np.ndarray, eq_common: np.ndarray, eq_private: np.ndarray, scenario: Scenario,
               cfg: SystemConfig) -> tuple[np.ndarray, np.ndarray]:
    """MSE of both streams for arbitrary equalizers."""
    t = power_terms(P, scenario.comm_channels, cfg.noise_comm_mw, cfg.sic_residual)
    g = scenario.comm_channels @ P.conj()
    g = g.conj()
    K = g.shape[0]
    hp0 = g[:, 0]
    hpk = g[np.arange(K), np.arange(1, K + 1)]
    d_c = np.abs(eq_common) ** 2 * t.T_c - 2 * np.real(eq_common * hp0) + 1
    d_p = np.abs(eq_private) ** 2 * t.T_p - 2 * np.real(eq_private * hpk) + 1
    return d_c, d_p


def mmse(P: np.ndarray, scenario: Scenario, cfg: SystemConfig) -> tuple[np.ndarray, np.ndarray]:
    t = power_terms(P, scenario.comm_channels, cfg.noise_comm_mw, cfg.sic_residual)
    return t.I_c / t.T_c, t.I_p / t.T_p


def update_weights(mmse_c: np.ndarray, mmse_p: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    mmse_c, mmse_p = np.asarray(mmse_c, dtype=float), np.asarray(mmse_p, dtype=float)
    if np.any(mmse_c <= 0) or np.any(mmse_p <= 0):
        raise ValueError("MSE values must be strictly positive")
    return 1.0 / (mmse_c * LN2), 1.0 / (mmse_p * LN2)


def augmented_wmse(weight: np.ndarray, mse: np.ndarray) -> np.ndarray:
    return weight * mse - np.log2(weight)


def _qt_parts(P, u, m, scenario, cfg):
    G = scenario.sense_channels
    s = np.sqrt(cfg.alphas[m]) * (P.conj().T @ (G[m].conj().T @ u))
    I = float(np.real(u.conj() @ interference_matrix(P @ P.conj().T, m, scenario, cfg) @ u))
    return s, I


def update_qt_aux(P: np.ndarray, U: np.ndarray, scenario: Scenario, cfg: SystemConfig) -> np.ndarray:
    """Quadratic-transform vectors ``x_m = s_m(P) / I_m(P)``, shape ``(K+1, M)``."""
    X = np.empty((P.shape[1], U.shape[1]), dtype=complex)
    for m in range(U.shape[1]):
        s, I = _qt_parts(P, U[:, m], m, scenario, cfg)
        X[:, m] = s / I
    return X


def qt_surrogate(x: np.ndarray, P: np.ndarray, u: np.ndarray, m: int, scenario: Scenario,
                 cfg: SystemConfig) -> float:
    """``2 Re(x^H s_m(P)) - I_m(P) ||x||^2``; a concave lower bound on the SINR of target ``m``."""
    s, I = _qt_parts(P, u, m, scenario, cfg)
    return float(2 * np.real(np.vdot(x, s)) - I * np.vdot(x, x).real)


def compute_aux(P: np.ndarray, scenario: Scenario, cfg: SystemConfig) -> AuxVars:
    U = update_receive_filters(P, scenario, cfg)
    w_c, w_p = update_equalizers(P, scenario, cfg)
    d_c, d_p = mmse(P, scenario, cfg)
    e_c, e_p = update_weights(d_c, d_p)
    X = update_qt_aux(P, U, scenario, cfg)
    return AuxVars(w_c, w_p, e_c, e_p, X, U, P)


def update_digital(F: np.ndarray, P: np.ndarray, D: np.ndarray, rho: float) -> np.ndarray:
    """Least-squares digital precoder ``(F^H F)^{-1} F^H (P + rho D)``."""
    FhF = F.conj().T @ F
    rhs = F.conj().T @ (P + rho * D)
    if np.linalg.cond(FhF) > 1e12:
        nf = FhF.shape[0]
        FhF = FhF + 1e-10 * np.real(np.trace(FhF)) / nf * np.eye(nf)
    return np.linalg.solve(FhF, rhs)


def analog_objective(F: np.ndarray, W: np.ndarray, P: np.ndarray, D: np.ndarray, rho: float) -> float:
    return float(np.linalg.norm(P + rho * D - F @ W) ** 2)


def update_analog(F_prev: np.ndarray, W: np.ndarray, P: np.ndarray, D: np.ndarray, rho: float) -> np.ndarray:
    """One row-major sweep of element-wise unit-modulus updates of ``F``.

    Entry ``(i, j)`` is set to ``chi / |chi|`` with
    ``chi = Z_ij - X_ij + F_ij Y_jj``, ``Y = W W^H``, ``Z = (P + rho D) W^H``
    and ``X = F Y`` kept current after every entry. A zero ``chi`` keeps the
    previous phase.
    """
    F = np.array(F_prev, dtype=complex)
    Y = W @ W.conj().T
    Z = (P + rho * D) @ W.conj().T
    X = F @ Y
    n_t, n_f = F.shape
    for i in range(n_t):
        for j in range(n_f):
            chi = Z[i, j] - X[i, j] + F[i, j] * Y[j, j]
            mag = abs(chi)
            if mag == 0.0:
                continue
            new = chi / mag
            X[i, :] += (new - F[i, j]) * Y[j, :]
            F[i, j] = new
    return F


def fit_hybrid(F: np.ndarray, P: np.ndarray, rounds: int = 20) -> tuple[np.ndarray, np.ndarray]:
    """Alternate digital/analog updates to approximate ``P`` by ``F W``."""
    D0 = np.zeros_like(P)
    W = update_digital(F, P, D0, 1.0)
    for _ in range(rounds):
        F = update_analog(F, W, P, D0, 1.0)
        W = update_digital(F, P, D0, 1.0)
    return F, W


# -- objective bookkeeping ---------------------------------------------------

def min_rate(P: np.ndarray, alloc: np.ndarray, scenario: Scenario, cfg: SystemConfig) -> float:
    """``min_k (C_k + R_{p,k})`` for a fixed split."""
    return comm_rates(P, alloc, scenario, cfg).min_total


def al_value(P, alloc, F, W, D, rho, scenario, cfg, hybrid=True) -> float:
    rs = min_rate(P, alloc, scenario, cfg)
    if not hybrid:
        return rs
    r = P - F @ W
    return float(rs - np.real(np.vdot(D, r)) - np.linalg.norm(r) ** 2 / (2 * rho))


# -- conic subproblems -------------------------------------------------------

class _Layout:
    def __init__(self, n_tx: int, n_cols: int, n_extra: int):
        self.n_tx, self.n_cols = n_tx, n_cols
        self.nP = n_tx * n_cols
        self.n = 2 * self.nP + n_extra

    def block(self, vec: np.ndarray, j: int) -> np.ndarray:
        row = np.zeros(self.nP, dtype=complex)
        row[j * self.n_tx:(j + 1) * self.n_tx] = vec
        return row

    def pad(self, M: np.ndarray) -> np.ndarray:
        """Extend real rows acting on ``[Re vecP; Im vecP]`` to the full variable."""
        M = np.atleast_2d(M)
        return np.hstack([M, np.zeros((M.shape[0], self.n - 2 * self.nP))])

    def unpack(self, x: np.ndarray) -> np.ndarray:
        z = x[:self.nP] + 1j * x[self.nP:2 * self.nP]
        return z.reshape(self.n_cols, self.n_tx).T

    def pack(self, P: np.ndarray) -> np.ndarray:
        z = P.T.ravel()
        return np.concatenate([z.real, z.imag])


def _add_quad(prog: ConicProgram, M: np.ndarray, a: np.ndarray, c: float, x_ref: np.ndarray):
    # scale the cone lifting by the size of the quadratic at the reference point
    prog.add_quad_le(M, a, c, scale=max(float(np.sum((M @ x_ref) ** 2)), 1.0))


def _sensing_rows(lay: _Layout, U, X, m, scenario, cfg):
    """Quadratic rows and linear part of ``I_m(P)||x||^2 - 2 Re(x^H s_m(P))``."""
    G = scenario.sense_channels
    alphas = cfg.alphas
    u, x = U[:, m], X[:, m]
    xn = np.linalg.norm(x)
    quad = []
    for j in range(G.shape[0]):
        if j == m:
            continue
        v = u.conj() @ G[j]
        L = np.array([lay.block(v, l) for l in range(lay.n_cols)])
        quad.append(xn * np.sqrt(alphas[j]) * complex_map(L))
    vm = u.conj() @ G[m]
    lin = sum(x[l] * lay.block(vm, l) for l in range(lay.n_cols))
    a = -2.0 * np.sqrt(alphas[m]) * real_functional(lin)
    quad = np.vstack(quad) if quad else np.zeros((0, 2 * lay.nP))
    return quad, a, cfg.noise_sense_mw * xn ** 2


def _power_and_structure(prog: ConicProgram, lay: _Layout, cfg: SystemConfig, common_stream: bool,
                         n_alloc: int = 0):
    sel = np.zeros((2 * lay.nP, lay.n))
    sel[:, :2 * lay.nP] = np.eye(2 * lay.nP)
    prog.add_norm_le(sel, np.sqrt(cfg.power_max_mw))
    if not common_stream:
        idx = np.r_[0:lay.n_tx, lay.nP:lay.nP + lay.n_tx]
        A = np.zeros((idx.size + n_alloc, lay.n))
        A[np.arange(idx.size), idx] = 1.0
        A[idx.size + np.arange(n_alloc), 2 * lay.nP + np.arange(n_alloc)] = 1.0
        prog.add_eq(A, np.zeros(A.shape[0]))


def solve_inner_convex(aux: AuxVars, state: PddState | None, F: np.ndarray | None, W: np.ndarray | None,
                       scenario: Scenario, cfg: SystemConfig, opts: PddOptions = PddOptions()):
    """Maximize the augmented Lagrangian over ``(P, c, R_s)`` with all other blocks fixed.

    Communication rates enter through their WMMSE lower bounds and the
    sensing SINRs through quadratic-transform lower bounds, so every
    constraint is a convex quadratic. Returns ``(P, alloc, R_s)``; raises
    :class:`~nfisac.conic.Infeasible` when the solver certifies infeasibility.
    """
    H = scenario.comm_channels
    K, n_tx = H.shape
    lay = _Layout(n_tx, K + 1, K + 1)
    ic, iR = 2 * lay.nP, 2 * lay.nP + K
    prog = ConicProgram(lay.n)
    s2 = cfg.noise_comm_mw
    sic = cfg.sic_residual
    origin = np.zeros(lay.n)
    origin[:2 * lay.nP] = lay.pack(F @ W if opts.hybrid else aux.precoder)

    for k in range(K):
        Hk = np.array([lay.block(H[k].conj(), j) for j in range(K + 1)])
        if opts.common_stream:
            wc, ec = aux.eq_common[k], aux.wt_common[k]
            Mq = lay.pad(np.sqrt(ec) * abs(wc) * complex_map(Hk))
            a = lay.pad(-2 * ec * real_functional(wc * Hk[0]))[0]
            a[ic:ic + K] += 1.0
            c = TAU - ec * (abs(wc) ** 2 * s2 + 1) + np.log2(ec)
            _add_quad(prog, Mq, a, c, origin)
        wp, ep = aux.eq_private[k], aux.wt_private[k]
        rows = Hk[1:]
        if sic > 0 and opts.common_stream:
            rows = np.vstack([rows, np.sqrt(sic) * Hk[:1]])
        Mq = lay.pad(np.sqrt(ep) * abs(wp) * complex_map(rows))
        a = lay.pad(-2 * ep * real_functional(wp * Hk[k + 1]))[0]
        a[iR] += 1.0
        a[ic + k] -= 1.0
        c = TAU - ep * (abs(wp) ** 2 * s2 + 1) + np.log2(ep)
        _add_quad(prog, Mq, a, c, origin)

    thr = cfg.sense_sinr_min
    if thr > 0:
        for m in range(aux.filters.shape[1]):
            quad, a, const = _sensing_rows(lay, aux.filters, aux.qt_vectors, m, scenario, cfg)
            _add_quad(prog, lay.pad(quad), lay.pad(a)[0], -thr - const, origin)

    _power_and_structure(prog, lay, cfg, opts.common_stream, K)
    A = np.zeros((K, lay.n))
    A[np.arange(K), ic + np.arange(K)] = -1.0
    prog.add_le(A, np.zeros(K))

    q = np.zeros(lay.n)
    q[iR] = -1.0
    Q = None
    if opts.hybrid:
        rho = state.penalty
        FW = F @ W
        q[:2 * lay.nP] += lay.pack(state.dual) - lay.pack(FW) / rho
        Q = np.zeros(lay.n)
        Q[:2 * lay.nP] = 1.0 / rho
        Q = np.diag(Q)
    prog.set_objective(q, Q)
    res = prog.solve(get_backend(opts.backend), origin=origin)
    x = res.x
    return lay.unpack(x), np.maximum(x[ic:ic + K], 0.0), float(x[iR])


def _sensing_program(P_ref, U, X, scenario, cfg, opts, threshold=None, scale=None):
    """Phase-I programs: maximize the worst surrogate SINR, or (given
    ``threshold``) find the point closest to ``P_ref`` that meets it."""
    K = scenario.comm_channels.shape[0]
    lay = _Layout(cfg.n_tx, K + 1, 1)
    it = 2 * lay.nP
    prog = ConicProgram(lay.n)
    origin = np.zeros(lay.n)
    origin[:2 * lay.nP] = lay.pack(P_ref)
    # rows are divided by the SINR scale so the epigraph variable stays O(1)
    ref = max(scale or (threshold if threshold is not None else cfg.sense_sinr_min), 1.0)
    for m in range(U.shape[1]):
        quad, a, const = _sensing_rows(lay, U, X, m, scenario, cfg)
        quad, a = lay.pad(quad) / np.sqrt(ref), lay.pad(a)[0] / ref
        if threshold is None:
            a[it] = 1.0
            _add_quad(prog, quad, a, -const / ref, origin)
        else:
            _add_quad(prog, quad, a, (-threshold - const) / ref, origin)
    _power_and_structure(prog, lay, cfg, opts.common_stream)
    q = np.zeros(lay.n)
    if threshold is None:
        q[it] = -1.0
        prog.set_objective(q)
    else:
        Q = np.zeros(lay.n)
        Q[:2 * lay.nP] = 2.0
        q[:2 * lay.nP] = -2.0 * lay.pack(P_ref)
        prog.set_objective(q, np.diag(Q))
    res = prog.solve(get_backend(opts.backend), origin=origin)
    return lay.unpack(res.x)


def restore_sensing_feasibility(P0: np.ndarray, scenario: Scenario, cfg: SystemConfig,
                                opts: PddOptions = PddOptions(), max_iter: int = 50) -> np.ndarray:
    """Return a precoder meeting every sensing-rate constraint.

    Starting from ``P0`` the worst sensing SINR is raised by minorize-maximize
    steps until the threshold becomes reachable; the final step moves to the
    feasible point closest to ``P0``. Raises :class:`Infeasible` when the worst
    SINR stalls below the threshold.
    """
    thr = cfg.sense_sinr_min
    target = thr * (1 + opts.feasibility_margin)
    P = P0
    prev = -np.inf
    for _ in range(max_iter):
        U = update_receive_filters(P, scenario, cfg)
        worst = sensing_sinr(P, U, scenario, cfg).min()
        if worst >= target:
            return P
        X = update_qt_aux(P, U, scenario, cfg)
        P_up = _sensing_program(P, U, X, scenario, cfg, opts, scale=worst)
        U_up = update_receive_filters(P_up, scenario, cfg)
        worst_up = sensing_sinr(P_up, U_up, scenario, cfg).min()
        if worst_up >= target * (1 + 1e-6):
            X_up = update_qt_aux(P_up, U_up, scenario, cfg)
            try:
                return _sensing_program(P0, U_up, X_up, scenario, cfg, opts, threshold=target)
            except Infeasible:
                return P_up
        if worst_up <= max(worst, prev) * (1 + 1e-6):
            break
        prev = worst
        P = P_up
    raise Infeasible(f"sensing SINR stalls at {max(worst, prev):.4g} < {thr:.4g}")


# -- loops -------------------------------------------------------------------

@dataclass
class InnerResult:
    P: np.ndarray
    F: np.ndarray | None
    W: np.ndarray | None
    alloc: np.ndarray
    filters: np.ndarray
    al_trace: list
    block_trace: list
    iterations: int


def inner_loop(P, F, W, alloc, state: PddState | None, scenario: Scenario, cfg: SystemConfig,
               opts: PddOptions = PddOptions(), outer_iter: int = 0) -> InnerResult:
    """Alternating maximization of the augmented Lagrangian.

    Every iteration refreshes the receive filters, equalizers, weights and
    quadratic-transform vectors at the current ``P``, solves the conic
    subproblem, then updates ``W`` and ``F``. Stops when one iteration
    changes the AL by at most ``opts.inner_tol`` or after ``opts.max_inner``.
    """
    hybrid = opts.hybrid
    D = state.dual if hybrid else None
    rho = state.penalty if hybrid else None

    def al(P_, c_, F_, W_):
        return al_value(P_, c_, F_, W_, D, rho, scenario, cfg, hybrid)

    current = al(P, alloc, F, W)
    al_trace, blocks = [], [(outer_iter, 0, "start", current)]
    it = 0
    U = None
    for it in range(1, opts.max_inner + 1):
        start = current
        aux = compute_aux(P, scenario, cfg)
        U = aux.filters
        try:
            P_new, c_new, _ = solve_inner_convex(aux, state, F, W, scenario, cfg, opts)
            cand = al(P_new, c_new, F, W)
            if cand >= current:
                P, alloc, current = P_new, c_new, cand
        except Infeasible:
            log.debug("conic subproblem reported infeasible; keeping the incumbent")
        blocks.append((outer_iter, it, "convex", current))
        if hybrid:
            W = update_digital(F, P, D, rho)
            current = al(P, alloc, F, W)
            blocks.append((outer_iter, it, "digital", current))
            F = update_analog(F, W, P, D, rho)
            current = al(P, alloc, F, W)
            blocks.append((outer_iter, it, "analog", current))
        al_trace.append(current)
        if abs(current - start) <= opts.inner_tol:
            break
    if U is None:
        U = update_receive_filters(P, scenario, cfg)
    return InnerResult(P, F, W, alloc, U, al_trace, blocks, it)


def initial_point(scenario: Scenario, cfg: SystemConfig, opts: PddOptions):
    """Random-phase analog matrix and matched-filter digital columns."""
    rng = np.random.default_rng(opts.seed)
    H = scenario.comm_channels
    K = H.shape[0]
    F = np.exp(2j * np.pi * rng.random((cfg.n_tx, cfg.n_rf)))
    cols = [H.mean(axis=0)] + list(H)
    W = np.stack([F.conj().T @ h for h in cols], axis=1)
    if not opts.common_stream:
        W[:, 0] = 0
    if not opts.hybrid:
        F = np.eye(cfg.n_tx, dtype=complex)
        W = np.stack(cols, axis=1)
        if not opts.common_stream:
            W[:, 0] = 0
    FW = F @ W
    W = W * np.sqrt(opts.init_power_fraction * cfg.power_max_mw) / np.linalg.norm(FW)
    return F, W, F @ W, np.zeros(K)


def _finish(sol: Solution, scenario: Scenario, cfg: SystemConfig, opts: PddOptions) -> Solution:
    P = sol.precoder
    sol.report_aux = rate_report(P, sol.alloc, update_receive_filters(P, scenario, cfg), scenario, cfg)
    if opts.hybrid and sol.beamformer is not None:
        F = sol.beamformer.analog
        W = update_digital(F, P, np.zeros_like(P), 1.0)
        sol.beamformer = HybridBeamformer(F, W)
    Pd = sol.delivered
    sol.filters = update_receive_filters(Pd, scenario, cfg)
    sol.report = rate_report(Pd, None, sol.filters, scenario, cfg)
    return sol


def optimize(scenario: Scenario, cfg: SystemConfig, opts: PddOptions = PddOptions(),
             warm: Solution | None = None, incumbent: Solution | None = None) -> Solution:
    """Run the double loop (or only the inner loop when ``opts.hybrid`` is off).

    ``warm`` seeds the primal blocks (and dual state, when present) from an
    earlier solution. ``incumbent`` is a solution known to be feasible for
    this problem; it is returned instead when the run ends below it.
    """
    scenario.check(cfg)
    t0 = time.perf_counter()
    if warm is not None:
        P = warm.precoder.copy()
        alloc = warm.alloc.copy()
        if opts.hybrid and warm.beamformer is not None:
            F, W = warm.beamformer.analog.copy(), warm.beamformer.digital.copy()
        elif opts.hybrid:
            F = np.exp(2j * np.pi * np.random.default_rng(opts.seed).random((cfg.n_tx, cfg.n_rf)))
            F, W = fit_hybrid(F, P)
        else:
            F = W = None
    else:
        F, W, P, alloc = initial_point(scenario, cfg, opts)
        if not opts.hybrid:
            F = W = None

    if cfg.sense_sinr_min > 0:
        try:
            P_feas = restore_sensing_feasibility(P, scenario, cfg, opts)
        except Infeasible as exc:
            log.info("trial infeasible: %s", exc)
            sol = Solution("infeasible", P, alloc, update_receive_filters(P, scenario, cfg),
                           wall_s=time.perf_counter() - t0)
            return _prefer_incumbent(sol, incumbent, scenario, cfg, opts)
        if P_feas is not P:
            P = P_feas
            alloc = np.zeros_like(alloc)
            if opts.hybrid:
                F, W = fit_hybrid(F, P)

    trace, block_trace, inner_iters = [], [], []
    if not opts.hybrid:
        res = inner_loop(P, None, None, alloc, None, scenario, cfg, opts)
        rep = rate_report(res.P, res.alloc, res.filters, scenario, cfg)
        for i, v in enumerate(res.al_trace, 1):
            trace.append((1, i, v, 0.0, rep.min_total, rep.min_sensing_rate, float("nan")))
        sol = Solution("converged", res.P, res.alloc, res.filters, None, outer_iters=1,
                       inner_iters=[res.iterations], trace=trace, block_trace=res.block_trace)
        sol = _finish(sol, scenario, cfg, opts)
        sol.wall_s = time.perf_counter() - t0
        return _prefer_incumbent(sol, incumbent, scenario, cfg, opts)

    if warm is not None and warm.state is not None and warm.state.dual.shape == P.shape:
        state = replace(warm.state, dual=warm.state.dual.copy(), outer_iter=0)
    else:
        state = PddState(np.zeros_like(P), opts.rho0, 0.0, opts.shrink)
        state.residual_gate = float(np.abs(P - F @ W).max()) + 1.0

    status = "max_outer"
    prev_obj = None
    resid = float(np.abs(P - F @ W).max())
    for n in range(1, opts.max_outer + 1):
        state.outer_iter = n
        res = inner_loop(P, F, W, alloc, state, scenario, cfg, opts, outer_iter=n)
        P, F, W, alloc = res.P, res.F, res.W, res.alloc
        inner_iters.append(res.iterations)
        block_trace.extend(res.block_trace)
        r = P - F @ W
        resid = float(np.abs(r).max())
        if resid <= state.residual_gate:
            state.dual = state.dual + r / state.penalty
        else:
            state.penalty *= state.shrink
        state.residual_gate = 0.9 * resid
        rep = comm_rates(P, alloc, scenario, cfg)
        sens = np.log2(1 + sensing_sinr(P, res.filters, scenario, cfg)).min()
        for i, v in enumerate(res.al_trace, 1):
            trace.append((n, i, v, resid, rep.min_total, sens, state.penalty))
        obj = rep.min_total
        log.debug("outer %d: rate %.4f residual %.2e rho %.3g inner %d", n, obj, resid,
                  state.penalty, res.iterations)
        if prev_obj is not None and resid <= opts.residual_tol and abs(obj - prev_obj) <= opts.objective_tol:
            status = "converged"
            break
        prev_obj = obj

    sol = Solution(status, P, alloc, res.filters, HybridBeamformer(F, W), residual=resid,
                   outer_iters=state.outer_iter, inner_iters=inner_iters, trace=trace,
                   block_trace=block_trace, state=state)
    sol = _finish(sol, scenario, cfg, opts)
    sol.wall_s = time.perf_counter() - t0
    return _prefer_incumbent(sol, incumbent, scenario, cfg, opts)


def evaluate_on(sol: Solution, scenario: Scenario, cfg: SystemConfig) -> Solution:
    """Copy of ``sol`` with its delivered precoder scored on another channel
    realization (fresh receive filters, best common-rate split)."""
    out = replace(sol)
    out.filters = update_receive_filters(sol.delivered, scenario, cfg)
    out.report = rate_report(sol.delivered, None, out.filters, scenario, cfg)
    return out


def _prefer_incumbent(sol: Solution, incumbent: Solution | None, scenario, cfg, opts) -> Solution:
    if incumbent is None or incumbent.report is None:
        return sol
    inc = _finish(replace(incumbent), scenario, cfg, replace(opts, hybrid=incumbent.beamformer is not None))
    if sol.report is None or inc.report.min_total > sol.report.min_total:
        inc.from_incumbent = True
        inc.wall_s = sol.wall_s
        inc.trace, inc.block_trace = sol.trace, sol.block_trace
        inc.outer_iters, inc.inner_iters = sol.outer_iters, sol.inner_iters
        if sol.infeasible:
            inc.status = "converged"
        return inc
    return sol


# -- export ------------------------------------------------------------------

def _ri(z: np.ndarray) -> dict:
    z = np.asarray(z)
    return {"re": z.real.tolist(), "im": z.imag.tolist()}


def solution_to_dict(sol: Solution) -> dict:
    d = {
        "schema": SOLUTION_SCHEMA,
        "status": sol.status,
        "P": _ri(sol.precoder),
        "c": sol.alloc.tolist(),
        "U": _ri(sol.filters),
        "residual_inf": sol.residual,
        "outer_iters": sol.outer_iters,
        "inner_iters": list(sol.inner_iters),
        "from_incumbent": sol.from_incumbent,
    }
    if sol.beamformer is not None:
        d["F_phase_rad"] = np.angle(sol.beamformer.analog).tolist()
        d["W"] = _ri(sol.beamformer.digital)
    if sol.report is not None:
        d["report"] = sol.report.to_dict()
    return d


def solution_from_dict(d: dict) -> Solution:
    if d.get("schema") != SOLUTION_SCHEMA:
        raise ValueError(f"unsupported solution schema {d.get('schema')!r}")
    z = lambda e: np.asarray(e["re"]) + 1j * np.asarray(e["im"])  # noqa: E731
    bf = None
    if "F_phase_rad" in d:
        bf = HybridBeamformer(np.exp(1j * np.asarray(d["F_phase_rad"])), z(d["W"]))
    return Solution(d["status"], z(d["P"]), np.asarray(d["c"], dtype=float), z(d["U"]), bf,
                    residual=d.get("residual_inf", 0.0), outer_iters=d.get("outer_iters", 0),
                    inner_iters=d.get("inner_iters", []), from_incumbent=d.get("from_incumbent", False))


def save_solution(path, sol: Solution):
    with open(path, "w") as fh:
        json.dump(solution_to_dict(sol), fh, indent=1)


def load_solution(path) -> Solution:
    with open(path) as fh:
        return solution_from_dict(json.load(fh))


def write_trace(path, sol: Solution):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(TRACE_COLUMNS)
        for row in sol.trace:
            w.writerow([row[0], row[1]] + [f"{v:.10g}" for v in row[2:]])
