"""Small second-order-cone program builder with a pluggable backend.

Programs have the standard form

    minimize    1/2 x' Q x + q' x
    subject to  b - A x in K

with ``K`` a product of zero, non-negative and second-order cones. Convex
quadratic inequalities are lifted to rotated cones by :meth:`add_quad_le`.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Protocol

import numpy as np
import scipy.sparse as sp

GAP_TOL = 1e-8


class SolverError(RuntimeError):
    """The backend stopped without a usable solution."""

    def __init__(self, msg: str, iterate: np.ndarray | None = None):
        super().__init__(msg)
        self.iterate = iterate


class Infeasible(RuntimeError):
    """The backend certified primal infeasibility."""


@dataclass
class ConicResult:
    x: np.ndarray
    objective: float
    status: str


class ConicBackend(Protocol):
    def __call__(self, Q: sp.csc_matrix, q: np.ndarray, A: sp.csc_matrix, b: np.ndarray,
                 cones: list[tuple[str, int]]) -> ConicResult: ...


def complex_map(L: np.ndarray) -> np.ndarray:
    """Real matrix acting on ``[Re z; Im z]`` that returns ``[Re Lz; Im Lz]``."""
    Lr, Li = L.real, L.imag
    return np.block([[Lr, -Li], [Li, Lr]])


def real_functional(c: np.ndarray) -> np.ndarray:
    """Row ``r`` with ``r @ [Re z; Im z] == Re(c @ z)``."""
    return np.concatenate([c.real, -c.imag])


class ConicProgram:
    def __init__(self, n: int):
        self.n = n
        self.Q = None
        self.q = np.zeros(n)
        self._rows: dict[str, list] = {"z": [], "l": [], "q": []}

    def set_objective(self, q: np.ndarray, Q: np.ndarray | sp.spmatrix | None = None):
        self.q = np.asarray(q, dtype=float)
        self.Q = None if Q is None else sp.csc_matrix(Q)

    def add_eq(self, A: np.ndarray, b: np.ndarray):
        self._rows["z"].append((np.atleast_2d(A), np.atleast_1d(b)))

    def add_le(self, A: np.ndarray, b: np.ndarray):
        """``A x <= b`` componentwise."""
        self._rows["l"].append((np.atleast_2d(A), np.atleast_1d(b)))

    def add_soc(self, A: np.ndarray, b: np.ndarray):
        """``||(b - A x)[1:]|| <= (b - A x)[0]``."""
        self._rows["q"].append((np.atleast_2d(A), np.atleast_1d(b)))

    def add_norm_le(self, M: np.ndarray, bound: float):
        """``||M x|| <= bound``."""
        A = np.vstack([np.zeros((1, self.n)), -M])
        b = np.concatenate([[bound], np.zeros(M.shape[0])])
        self.add_soc(A, b)

    def add_quad_le(self, M: np.ndarray, a: np.ndarray, c: float, scale: float = 1.0):
        """``||M x||^2 + a' x <= c``.

        Lifted to ``||(t - s, 2 sqrt(s) M x)|| <= t + s`` with ``t = c - a'x``.
        Any ``s > 0`` is exact; picking ``s`` near the expected value of ``t``
        avoids the cancellation between ``t + s`` and ``t - s``.
        """
        if M.shape[0] == 0:
            self.add_le(a[None, :], np.array([c]))
            return
        if not scale > 0:
            raise ValueError("scale must be positive")
        A = np.vstack([a, a, -2.0 * np.sqrt(scale) * M])
        b = np.concatenate([[c + scale, c - scale], np.zeros(M.shape[0])])
        self.add_soc(A, b)

    def assemble(self):
        blocks_A, blocks_b, cones = [], [], []
        zs, ls = self._rows["z"], self._rows["l"]
        if zs:
            A = np.vstack([a for a, _ in zs])
            blocks_A.append(A), blocks_b.append(np.concatenate([b for _, b in zs]))
            cones.append(("zero", A.shape[0]))
        if ls:
            A = np.vstack([a for a, _ in ls])
            blocks_A.append(A), blocks_b.append(np.concatenate([b for _, b in ls]))
            cones.append(("nonneg", A.shape[0]))
        for A, b in self._rows["q"]:
            blocks_A.append(A), blocks_b.append(b)
            cones.append(("soc", A.shape[0]))
        A = sp.csc_matrix(np.vstack(blocks_A))
        b = np.concatenate(blocks_b)
        Q = self.Q if self.Q is not None else sp.csc_matrix((self.n, self.n))
        return Q, self.q, A, b, cones

    def solve(self, backend: ConicBackend | None = None, origin: np.ndarray | None = None) -> ConicResult:
        """Solve and return the minimizer in the original coordinates.

        With ``origin`` the backend works on ``d = x - origin``. Constraints are
        exact under the shift; the point is to cancel large constant terms
        (e.g. a penalty centred far from zero) before they reach the solver's
        relative tolerances.
        """
        Q, q, A, b, cones = self.assemble()
        if origin is None:
            return (backend or clarabel_backend)(Q, q, A, b, cones)
        x0 = np.asarray(origin, dtype=float)
        res = (backend or clarabel_backend)(Q, q + Q @ x0, A, b - A @ x0, cones)
        obj = res.objective + float(q @ x0 + 0.5 * x0 @ (Q @ x0))
        return ConicResult(res.x + x0, obj, res.status)


_RETRY_SETTINGS = ({}, {"static_regularization_constant": 1e-7}, {"max_step_fraction": 0.9},
                   {"equilibrate_enable": False})


def clarabel_backend(Q, q, A, b, cones) -> ConicResult:
    """Interior-point solve with Clarabel at relative/absolute gap 1e-8.

    Numerical breakdowns are retried with stronger regularization, a shorter
    step and without equilibration before giving up.
    """
    import clarabel

    kinds = {"zero": clarabel.ZeroConeT, "nonneg": clarabel.NonnegativeConeT,
             "soc": clarabel.SecondOrderConeT}
    Qu = sp.triu(Q, format="csc")
    status, x = "", None
    for extra in _RETRY_SETTINGS:
        settings = clarabel.DefaultSettings()
        settings.verbose = False
        settings.tol_gap_rel = GAP_TOL
        settings.tol_gap_abs = GAP_TOL
        settings.tol_feas = GAP_TOL
        settings.max_iter = 200
        for k, v in extra.items():
            setattr(settings, k, v)
        sol = clarabel.DefaultSolver(Qu, q, A, b, [kinds[k](n) for k, n in cones], settings).solve()
        status = str(sol.status)
        x = np.asarray(sol.x)
        if "PrimalInfeasible" in status:
            raise Infeasible(status)
        if status in ("Solved", "AlmostSolved"):
            return ConicResult(x, float(sol.obj_val), status)
    raise SolverError(f"conic solver stopped with status {status}", iterate=x)


_BACKENDS: dict[str, Callable] = {"clarabel": clarabel_backend}


def get_backend(name: str = "clarabel") -> ConicBackend:
    return _BACKENDS[name]


def register_backend(name: str, fn: ConicBackend):
    _BACKENDS[name] = fn
