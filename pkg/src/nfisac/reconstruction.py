"""Covariance-domain checks that dedicated sensing beams are unnecessary.

A covariance solution carries one PSD block per communication stream plus an
optional dedicated sensing block, all in the digital (RF-chain) domain. Two
constructions are provided: folding the sensing block into the stream blocks,
and Hermitian-null-space rank reduction that keeps a family of trace
functionals fixed.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from .channel import Scenario
from .config import SystemConfig
from .optimizer import receive_filters_cov
from .rates import best_allocation, sensing_sinr_cov

PSD_TOL = 1e-9
RANK_TOL = 1e-9
NULL_RCOND = 1e-10


@dataclass
class CovarianceSolution:
    comm_covs: np.ndarray
    "Shape ``(K+1, N_f, N_f)``; block 0 is the common stream."
    sense_cov: np.ndarray
    analog: np.ndarray

    @property
    def n_streams(self) -> int:
        return self.comm_covs.shape[0]

    def total_digital(self) -> np.ndarray:
        return self.comm_covs.sum(axis=0) + self.sense_cov

    def covariance(self) -> np.ndarray:
        """Transmit covariance ``F (sum_k W_k + V) F^H``."""
        F = self.analog
        return F @ self.total_digital() @ F.conj().T

    def power(self) -> float:
        FhF = self.analog.conj().T @ self.analog
        return float(np.real(np.trace(FhF @ self.total_digital())))

    def check(self, cfg: SystemConfig, power_tol: float = 1e-9):
        for k, Wk in enumerate(list(self.comm_covs) + [self.sense_cov]):
            if not np.allclose(Wk, Wk.conj().T, atol=1e-12 * max(1.0, np.abs(Wk).max())):
                raise ValueError(f"block {k} is not Hermitian")
            lo = np.linalg.eigvalsh(Wk).min()
            if lo < -PSD_TOL * max(1.0, np.abs(Wk).max()):
                raise ValueError(f"block {k} is not PSD (min eigenvalue {lo:.3g})")
        if self.power() > cfg.power_max_mw * (1 + power_tol):
            raise ValueError(f"power {self.power():.6g} mW exceeds budget {cfg.power_max_mw:.6g} mW")


def from_precoder(F: np.ndarray, W: np.ndarray, sense_cov: np.ndarray | None = None) -> CovarianceSolution:
    covs = np.einsum("ik,jk->kij", W, W.conj())
    V = np.zeros((W.shape[0],) * 2, dtype=complex) if sense_cov is None else sense_cov
    return CovarianceSolution(covs, V, F)


def _rand_psd(rng: np.random.Generator, n: int, rank: int) -> np.ndarray:
    A = rng.standard_normal((n, rank)) + 1j * rng.standard_normal((n, rank))
    return A @ A.conj().T


def random_covariance_solution(cfg: SystemConfig, rng: np.random.Generator, stream_rank: int = 3,
                               sense_rank: int = 2, sense_share: float = 0.3,
                               power_fraction: float = 0.9) -> CovarianceSolution:
    """A feasible solution with full-rank-ish stream blocks and a non-zero sensing block."""
    n_f = cfg.n_rf
    F = np.exp(2j * np.pi * rng.random((cfg.n_tx, n_f)))
    FhF = F.conj().T @ F
    covs = np.array([_rand_psd(rng, n_f, stream_rank) for _ in range(cfg.n_users + 1)])
    V = _rand_psd(rng, n_f, sense_rank)
    p_c = sum(np.real(np.trace(FhF @ W)) for W in covs)
    p_v = np.real(np.trace(FhF @ V))
    budget = power_fraction * cfg.power_max_mw
    covs *= (1 - sense_share) * budget / p_c
    V *= sense_share * budget / p_v
    return CovarianceSolution(covs, V, F)


# -- SINRs from covariances -------------------------------------------------------

def stream_sinrs(sol: CovarianceSolution, scenario: Scenario, cfg: SystemConfig) -> tuple[np.ndarray, np.ndarray]:
    """Common and private SINR of every user; the sensing block interferes with both."""
    Ht = scenario.comm_channels.conj() @ sol.analog
    K = Ht.shape[0]
    q = np.real(np.einsum("ka,sab,kb->ks", Ht, sol.comm_covs, Ht.conj()))
    v = np.real(np.einsum("ka,ab,kb->k", Ht, sol.sense_cov, Ht.conj()))
    S_c = q[:, 0]
    S_p = q[np.arange(K), np.arange(1, K + 1)]
    clean = q[:, 1:].sum(axis=1) - S_p + v + cfg.noise_comm_mw
    I_p = clean + cfg.sic_residual * S_c
    return S_c / (S_p + clean), S_p / I_p


def max_min_rate(sol: CovarianceSolution, scenario: Scenario, cfg: SystemConfig) -> float:
    g_c, g_p = stream_sinrs(sol, scenario, cfg)
    r_p = np.log2(1 + g_p)
    alloc = best_allocation(r_p, float(np.log2(1 + g_c).min()))
    return float((alloc + r_p).min())


# -- merge -----------------------------------------------------------------------------

def merge_sensing(sol: CovarianceSolution, weights=None) -> CovarianceSolution:
    """Fold the sensing block into the stream blocks, ``W_k + delta_k V``.

    ``weights`` defaults to ``1/(K+1)`` each and must be non-negative and sum to one.
    """
    n = sol.n_streams
    d = np.full(n, 1.0 / n) if weights is None else np.asarray(weights, dtype=float)
    if d.shape != (n,) or np.any(d < 0) or abs(d.sum() - 1.0) > 1e-12:
        raise ValueError("merge weights must be non-negative, one per stream, summing to 1")
    covs = sol.comm_covs + d[:, None, None] * sol.sense_cov[None]
    return CovarianceSolution(covs, np.zeros_like(sol.sense_cov), sol.analog)


# -- rank reduction ----------------------------------------------------------------------

@dataclass
class RankReduction:
    matrix: np.ndarray
    rank: int
    reducible: bool
    "False when the loop stopped above rank one because the null space was trivial."
    history: list = field(default_factory=list)
    "Rank and minimum eigenvalue after every step, starting with the input."


def numerical_rank(W: np.ndarray, tol: float = RANK_TOL) -> int:
    lam = np.linalg.eigvalsh(W)
    return int(np.sum(lam > tol * max(lam.max(), 0.0))) if lam.max() > 0 else 0


def _factor(W: np.ndarray, tol: float = RANK_TOL) -> np.ndarray:
    lam, V = np.linalg.eigh(W)
    keep = lam > tol * lam.max()
    return V[:, keep] * np.sqrt(lam[keep])


def hermitian_basis(n: int) -> list[np.ndarray]:
    """Real basis of the ``n^2``-dimensional space of ``n x n`` Hermitian matrices."""
    basis = []
    for i in range(n):
        E = np.zeros((n, n), dtype=complex)
        E[i, i] = 1
        basis.append(E)
    for i in range(n):
        for j in range(i + 1, n):
            E = np.zeros((n, n), dtype=complex)
            E[i, j] = E[j, i] = 1
            basis.append(E)
            E = np.zeros((n, n), dtype=complex)
            E[i, j], E[j, i] = 1j, -1j
            basis.append(E)
    return basis


def rank_reduce(W_hat: np.ndarray, functionals, max_steps: int | None = None) -> RankReduction:
    """Lower the rank of a PSD matrix while keeping ``Tr(B_i W)`` fixed.

    Each step factors ``W = P P^H`` (``A = rank`` columns), picks a non-zero
    Hermitian ``X`` with ``Tr(P^H B_i P X) = 0`` for every functional, and sets
    ``W <- P (I - X / lambda_max(X)) P^H``. The loop ends at rank one or when
    the homogeneous system has only the trivial solution.
    """
    W = 0.5 * (W_hat + W_hat.conj().T)
    Bs = [np.asarray(B) for B in functionals]
    hist = [(numerical_rank(W), float(np.linalg.eigvalsh(W).min()))]
    steps = 0
    while hist[-1][0] > 1 and (max_steps is None or steps < max_steps):
        Pf = _factor(W)
        A = Pf.shape[1]
        basis = hermitian_basis(A)
        E = np.array(basis)
        # M[i, b] = Re Tr(P^H B_i P E_b)
        C = np.array([Pf.conj().T @ B @ Pf for B in Bs]) if Bs else np.zeros((0, A, A))
        M = np.real(np.einsum("iab,nba->in", C, E)) if Bs else np.zeros((0, A * A))
        null = sla.null_space(M, rcond=NULL_RCOND) if M.shape[0] else np.eye(A * A)[:, :1]
        if null.shape[1] == 0:
            return RankReduction(W, A, False, hist)
        X = np.einsum("n,nab->ab", null[:, 0], E)
        lam = np.linalg.eigvalsh(X)
        if lam.max() <= 0:
            X, lam = -X, -lam[::-1]
        W = Pf @ (np.eye(A) - X / lam.max()) @ Pf.conj().T
        W = 0.5 * (W + W.conj().T)
        steps += 1
        hist.append((numerical_rank(W), float(np.linalg.eigvalsh(W).min())))
        if hist[-1][0] >= A:
            # the step must remove at least one eigen-direction; anything else is numerical trouble
            raise RuntimeError(f"rank reduction stalled at rank {A}")
    return RankReduction(W, hist[-1][0], hist[-1][0] <= 1, hist)


def sensing_functionals(F: np.ndarray, U: np.ndarray, scenario: Scenario) -> list[np.ndarray]:
    """``F^H G_a^H u_b u_b^H G_a F`` for every target pair ``(a, b)``."""
    out = []
    for a in range(scenario.sense_channels.shape[0]):
        for b in range(U.shape[1]):
            v = F.conj().T @ scenario.sense_channels[a].conj().T @ U[:, b]
            out.append(np.outer(v, v.conj()))
    return out


def user_functionals(F: np.ndarray, scenario: Scenario) -> list[np.ndarray]:
    Ht = scenario.comm_channels.conj() @ F
    return [np.outer(h.conj(), h) for h in Ht]


def reconstruction_functionals(F: np.ndarray, U: np.ndarray, scenario: Scenario) -> list[np.ndarray]:
    """Sensing pairs, user channels and ``F^H F`` (so transmit power is kept too)."""
    return sensing_functionals(F, U, scenario) + user_functionals(F, scenario) + [F.conj().T @ F]


# -- end-to-end check --------------------------------------------------------------------

def verify_no_sensing_beams(sol: CovarianceSolution, scenario: Scenario, cfg: SystemConfig,
                            weights=None, U: np.ndarray | None = None) -> dict:
    """Merge the sensing block, rank-reduce every stream block and compare performance.

    Returns a JSON-serializable report. ``status`` is ``"identical"`` when the
    sensing block is already zero. Raises ``ValueError`` for an infeasible input.
    """
    sol.check(cfg)
    R0 = sol.covariance()
    if U is None:
        U = receive_filters_cov(R0, scenario, cfg)
    thr = cfg.sense_sinr_min
    obj0 = max_min_rate(sol, scenario, cfg)
    sens0 = sensing_sinr_cov(R0, U, scenario, cfg)
    g0 = np.concatenate(stream_sinrs(sol, scenario, cfg))
    rep = {
        "objective_original": obj0,
        "sensing_rates_original": np.log2(1 + sens0).tolist(),
        "sense_rate_min": cfg.sense_rate_min_bps,
    }
    if not np.any(sol.sense_cov):
        rep.update(status="identical", ok=True, objective_merged=obj0, objective_reduced=obj0)
        return rep

    merged = merge_sensing(sol, weights)
    R1 = merged.covariance()
    sens1 = sensing_sinr_cov(R1, U, scenario, cfg)
    g1 = np.concatenate(stream_sinrs(merged, scenario, cfg))
    obj1 = max_min_rate(merged, scenario, cfg)

    funcs = reconstruction_functionals(sol.analog, U, scenario)
    reduced, ranks, reducible = [], [], []
    for Wk in merged.comm_covs:
        rr = rank_reduce(Wk, funcs)
        reduced.append(rr.matrix)
        ranks.append(rr.rank)
        reducible.append(rr.reducible)
    red = CovarianceSolution(np.array(reduced), np.zeros_like(sol.sense_cov), sol.analog)
    R2 = red.covariance()
    sens2 = sensing_sinr_cov(R2, U, scenario, cfg)
    g2 = np.concatenate(stream_sinrs(red, scenario, cfg))
    obj2 = max_min_rate(red, scenario, cfg)
    scale = max(np.abs(R0).max(), 1e-300)

    ok = (obj1 >= obj0 - 1e-8 and obj2 >= obj0 - 1e-8
          and bool(np.all(np.log2(1 + sens2) >= cfg.sense_rate_min_bps - 1e-6) or thr == 0
                   or not np.all(np.log2(1 + sens0) >= cfg.sense_rate_min_bps - 1e-6)))
    rep.update(
        status="verified" if ok else "violated",
        ok=bool(ok),
        objective_merged=obj1,
        objective_reduced=obj2,
        covariance_error_merged=float(np.abs(R1 - R0).max() / scale),
        covariance_error_reduced=float(np.abs(R2 - R0).max() / scale),
        power_original=sol.power(),
        power_merged=merged.power(),
        power_reduced=red.power(),
        sinr_gain_merged_min=float((g1 - g0).min()),
        sinr_gain_reduced_min=float((g2 - g0).min()),
        sensing_rates_merged=np.log2(1 + sens1).tolist(),
        sensing_rates_reduced=np.log2(1 + sens2).tolist(),
        ranks=ranks,
        rank_one=bool(all(r <= 1 for r in ranks)),
        reducible=reducible,
    )
    return rep
