"""Communication and sensing performance of a precoder.

A precoder ``P`` is an ``(n_tx, K+1)`` complex array whose column 0 carries
the common stream and column ``k`` the private stream of user ``k``. All
rates are in bits/s/Hz (base-2 logarithms).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .channel import Scenario
from .config import SystemConfig

ALLOC_TOL = 1e-9

RATE_CSV_COLUMNS = (
    "min_total", "common_rate", "alloc_sum", "alloc_feasible", "min_sensing_rate",
    "power_mw", "totals", "private_rates", "common_rates", "alloc", "sensing_rates",
)
"Column order of :meth:`RateReport.csv_row`; per-user/per-target lists are ';'-joined."


class PowerTerms(NamedTuple):
    """Per-user received power decomposition, each an array of length K."""

    T_c: np.ndarray
    S_c: np.ndarray
    I_c: np.ndarray
    T_p: np.ndarray
    S_p: np.ndarray
    I_p: np.ndarray


def power_terms(P: np.ndarray, H: np.ndarray, noise_mw: float, sic_residual: float = 0.0) -> PowerTerms:
    """Received signal/interference powers for every user.

    ``H`` stacks the user channels as rows. With ``sic_residual > 0`` the
    leftover common-stream power is counted as interference when decoding
    the private stream only.
    """
    P = np.asarray(P)
    H = np.atleast_2d(H)
    K = H.shape[0]
    if P.ndim != 2 or P.shape != (H.shape[1], K + 1):
        raise ValueError(f"precoder shape {P.shape} does not match {(H.shape[1], K + 1)}")
    if not noise_mw > 0:
        raise ValueError("noise power must be positive")
    g = np.abs(H.conj() @ P) ** 2
    S_c = g[:, 0]
    S_p = g[np.arange(K), np.arange(1, K + 1)]
    clean = g[:, 1:].sum(axis=1) - S_p + noise_mw
    I_p = clean + sic_residual * S_c
    I_c = S_p + clean
    return PowerTerms(S_c + I_c, S_c, I_c, S_p + I_p, S_p, I_p)


def best_allocation(private_rates: np.ndarray, common_rate: float) -> np.ndarray:
    """Split ``common_rate`` to maximize ``min_k (C_k + R_{p,k})``.

    Water-filling on the private-rate levels; the whole budget is always used.
    """
    r = np.asarray(private_rates, dtype=float)
    budget = max(float(common_rate), 0.0)
    order = np.sort(r)
    level = order[-1] + budget / r.size
    csum = np.cumsum(order)
    for n in range(1, r.size + 1):
        cand = (budget + csum[n - 1]) / n
        if n == r.size or cand <= order[n]:
            level = cand
            break
    return np.maximum(level - r, 0.0)


@dataclass
class RateReport:
    common_rates: np.ndarray
    common_rate: float
    private_rates: np.ndarray
    alloc: np.ndarray
    totals: np.ndarray
    min_total: float
    alloc_feasible: bool
    power_mw: float
    sensing_sinrs: np.ndarray = field(default_factory=lambda: np.zeros(0))
    sensing_rates: np.ndarray = field(default_factory=lambda: np.zeros(0))

    @property
    def objective(self) -> float:
        return self.min_total

    @property
    def min_sensing_rate(self) -> float:
        return float(self.sensing_rates.min()) if self.sensing_rates.size else float("inf")

    def csv_row(self) -> list:
        j = lambda a: ";".join(f"{v:.10g}" for v in np.ravel(a))  # noqa: E731
        return [f"{self.min_total:.10g}", f"{self.common_rate:.10g}", f"{self.alloc.sum():.10g}",
                int(self.alloc_feasible), f"{self.min_sensing_rate:.10g}", f"{self.power_mw:.10g}",
                j(self.totals), j(self.private_rates), j(self.common_rates), j(self.alloc),
                j(self.sensing_rates)]

    def to_dict(self) -> dict:
        return {k: (v.tolist() if isinstance(v, np.ndarray) else v) for k, v in self.__dict__.items()}


def comm_rates(P: np.ndarray, alloc: np.ndarray | None, scenario: Scenario, cfg: SystemConfig) -> RateReport:
    """Common/private rates and the per-user totals for a given common-rate split.

    ``alloc=None`` picks the split that maximizes the minimum total rate.
    Violations of ``sum(alloc) <= R_c`` are flagged, not raised.
    """
    t = power_terms(P, scenario.comm_channels, cfg.noise_comm_mw, cfg.sic_residual)
    r_c = np.log2(1.0 + t.S_c / t.I_c)
    r_p = np.log2(1.0 + t.S_p / t.I_p)
    common = float(r_c.min())
    if alloc is None:
        alloc = best_allocation(r_p, common)
    alloc = np.asarray(alloc, dtype=float)
    if alloc.shape != r_p.shape:
        raise ValueError("allocation needs one share per user")
    feasible = bool(alloc.min() >= -ALLOC_TOL and alloc.sum() <= common + ALLOC_TOL)
    totals = alloc + r_p
    return RateReport(r_c, common, r_p, alloc, totals, float(totals.min()), feasible,
                      float(np.sum(np.abs(P) ** 2)))


def interference_matrix(R: np.ndarray, m: int, scenario: Scenario, cfg: SystemConfig) -> np.ndarray:
    """``Q_m``: echoes of all other targets plus receiver noise."""
    G = scenario.sense_channels
    alphas = cfg.alphas
    Q = cfg.noise_sense_mw * np.eye(G.shape[1], dtype=complex)
    for j in range(G.shape[0]):
        if j != m:
            Q += alphas[j] * G[j] @ R @ G[j].conj().T
    return Q


def sensing_sinr_cov(R: np.ndarray, U: np.ndarray, scenario: Scenario, cfg: SystemConfig) -> np.ndarray:
    """Post-filter SINR of every target for a transmit covariance ``R``."""
    G = scenario.sense_channels
    alphas = cfg.alphas
    out = np.empty(G.shape[0])
    for m in range(G.shape[0]):
        u = U[:, m]
        num = alphas[m] * np.real(u.conj() @ G[m] @ R @ G[m].conj().T @ u)
        den = np.real(u.conj() @ interference_matrix(R, m, scenario, cfg) @ u)
        out[m] = max(num, 0.0) / den
    return out


def sensing_sinr(P: np.ndarray, U: np.ndarray, scenario: Scenario, cfg: SystemConfig) -> np.ndarray:
    """Post-filter SINR of every target; ``U`` holds one receive filter per column."""
    return sensing_sinr_cov(P @ P.conj().T, U, scenario, cfg)


def rate_report(P: np.ndarray, alloc: np.ndarray | None, U: np.ndarray, scenario: Scenario,
                cfg: SystemConfig) -> RateReport:
    rep = comm_rates(P, alloc, scenario, cfg)
    rep.sensing_sinrs = sensing_sinr(P, U, scenario, cfg)
    rep.sensing_rates = np.log2(1.0 + rep.sensing_sinrs)
    return rep
