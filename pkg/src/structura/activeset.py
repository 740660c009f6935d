"""Active-set solver for the SparseMAP quadratic subproblem.

Solves::

    min_{p in simplex}  1/2 ||eta_m - Mt p||^2 - <eta_n, N p>

where ``Mt`` scales row k of the structure matrix by ``1/delta[k]``. Only a
MAP oracle over the factor is needed. The solver keeps the inverse of the
bordered KKT matrix ``[[0, 1^T], [1, G]]`` with ``G = Mbar^T Mbar`` for the
active structures, so the block ``Q`` needed by the backward pass is
available once the forward solve ends.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .oracles import Structure

Oracle = Callable[[np.ndarray, np.ndarray], Structure]

_DEGENERATE = 1e-12


@dataclass
class ActiveSetState:
    structures: list[Structure]
    p: np.ndarray
    mbar: np.ndarray  # d x k, degree-adjusted columns
    nbar: np.ndarray  # d_n x k
    kinv: np.ndarray  # (k+1) x (k+1)
    tau: float = 0.0

    @property
    def Q(self) -> np.ndarray:
        return self.kinv[1:, 1:]

    @property
    def keys(self) -> frozenset:
        return frozenset(s.key for s in self.structures)

    def copy(self) -> "ActiveSetState":
        return ActiveSetState(list(self.structures), self.p.copy(), self.mbar.copy(),
                              self.nbar.copy(), self.kinv.copy(), self.tau)


@dataclass
class SparseMapConfig:
    max_iterations: int = 10
    support_tolerance: float = 1e-9
    warm_start: ActiveSetState | None = None

    def __post_init__(self):
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if not self.support_tolerance > 0:
            raise ValueError("support_tolerance must be positive")


@dataclass
class SparseMapSolution:
    mu: np.ndarray
    nu: np.ndarray
    state: ActiveSetState
    converged: bool
    iterations: int = 0
    info: dict = field(default_factory=dict)

    @property
    def signature(self):
        return ("active-set", self.state.keys)


def _bordered(mbar: np.ndarray) -> np.ndarray:
    k = mbar.shape[1]
    K = np.zeros((k + 1, k + 1))
    K[0, 1:] = 1.0
    K[1:, 0] = 1.0
    K[1:, 1:] = mbar.T @ mbar
    return K


class _Workspace:
    def __init__(self, delta, eta_m, eta_n, dn):
        self.delta = delta
        self.eta_m = eta_m
        self.eta_n = eta_n
        self.structures: list[Structure] = []
        self.p = np.zeros(0)
        self.mbar = np.zeros((len(delta), 0))
        self.nbar = np.zeros((dn, 0))
        self.kinv = np.zeros((1, 1))

    def refactor(self):
        self.kinv = np.linalg.inv(_bordered(self.mbar))

    def border(self, mt):
        bb = np.concatenate([[1.0], self.mbar.T @ mt])
        u = self.kinv @ bb
        return u, float(mt @ mt - bb @ u)

    def append(self, s: Structure, weight: float, u, schur):
        mt = s.m / self.delta
        k = len(self.structures)
        if k == 0:
            self.kinv = np.linalg.inv(_bordered(mt[:, None]))
        else:
            B = np.empty((k + 2, k + 2))
            B[:k + 1, :k + 1] = self.kinv + np.outer(u, u) / schur
            B[:k + 1, k + 1] = -u / schur
            B[k + 1, :k + 1] = -u / schur
            B[k + 1, k + 1] = 1.0 / schur
            self.kinv = B
        self.structures.append(s)
        self.p = np.append(self.p, weight)
        self.mbar = np.column_stack([self.mbar, mt])
        self.nbar = np.column_stack([self.nbar, s.n])

    def remove(self, i: int):
        j = i + 1
        keep = np.r_[0:j, j + 1:self.kinv.shape[0]]
        pivot = self.kinv[j, j]
        del self.structures[i]
        self.p = np.delete(self.p, i)
        self.mbar = np.delete(self.mbar, i, axis=1)
        self.nbar = np.delete(self.nbar, i, axis=1)
        if abs(pivot) < _DEGENERATE:
            self.refactor()
        else:
            col = self.kinv[keep, j]
            self.kinv = self.kinv[np.ix_(keep, keep)] - np.outer(col, col) / pivot

    def theta(self):
        t = self.mbar.T @ self.eta_m
        if self.nbar.shape[0]:
            t = t + self.nbar.T @ self.eta_n
        return t


def solve_sparsemap(oracle: Oracle, eta_m, eta_n=None, delta=None,
                    cfg: SparseMapConfig | None = None) -> SparseMapSolution:
    cfg = cfg or SparseMapConfig()
    eta_m = np.asarray(eta_m, dtype=float)
    eta_n = np.zeros(0) if eta_n is None else np.asarray(eta_n, dtype=float)
    delta = np.ones_like(eta_m) if delta is None else np.asarray(delta, dtype=float)
    tol = cfg.support_tolerance

    ws = _Workspace(delta, eta_m, eta_n, len(eta_n))
    warm = cfg.warm_start
    if warm is not None and warm.structures:
        ws.structures = list(warm.structures)
        ws.p = warm.p.copy()
        ws.mbar = warm.mbar.copy()
        ws.nbar = warm.nbar.copy()
        ws.kinv = warm.kinv.copy()
    else:
        first = oracle(eta_m / delta, eta_n)
        ws.append(first, 1.0, None, None)

    converged = False
    tau = 0.0
    it = 0
    while it < cfg.max_iterations:
        it += 1
        sol = ws.kinv @ np.concatenate([[1.0], ws.theta()])
        tau, p_hat = float(sol[0]), sol[1:]

        if p_hat.min() < -tol:
            # move towards p_hat until the first weight hits zero, drop it
            neg = np.flatnonzero(p_hat < 0)
            ratios = ws.p[neg] / (ws.p[neg] - p_hat[neg])
            r = int(np.argmin(ratios))
            alpha = ratios[r]
            ws.p = np.maximum(ws.p + alpha * (p_hat - ws.p), 0.0)
            ws.remove(int(neg[r]))
            ws.p /= ws.p.sum()
            continue

        ws.p = np.maximum(p_hat, 0.0)
        ws.p /= ws.p.sum()
        mu = ws.mbar @ ws.p
        cand = oracle((eta_m - mu) / delta, eta_n)
        if cand.key in {s.key for s in ws.structures}:
            converged = True
            break
        if cand.score <= tau + tol * (1.0 + abs(tau)):
            converged = True
            break

        mt = cand.m / delta
        u, schur = ws.border(mt)
        if schur > _DEGENERATE * max(1.0, float(mt @ mt)):
            ws.append(cand, 0.0, u, schur)
            continue
        # cand lies in the affine hull of the active columns: trade weight
        # along the direction that keeps Mbar p fixed, then swap it in
        a = u[1:]
        pos = np.flatnonzero(a > tol)
        if pos.size == 0:
            break
        ratios = ws.p[pos] / a[pos]
        r = int(np.argmin(ratios))
        t = ratios[r]
        ws.p = np.maximum(ws.p - t * a, 0.0)
        ws.remove(int(pos[r]))
        u, schur = ws.border(mt)
        if schur <= _DEGENERATE * max(1.0, float(mt @ mt)):
            ws.refactor()
            u, schur = ws.border(mt)
        ws.append(cand, t, u, schur)
        ws.p /= ws.p.sum()

    ws.refactor()
    state = ActiveSetState(ws.structures, ws.p, ws.mbar, ws.nbar, ws.kinv, tau)
    mu = ws.mbar @ ws.p
    nu = ws.nbar @ ws.p
    return SparseMapSolution(mu, nu, state, converged, it)


def jvp_sparsemap(sol: SparseMapSolution, d) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(J_M d, J_N^T d)`` with ``J_M = Mbar Q Mbar^T`` and
    ``J_N = Mbar Q Nbar^T``."""
    st = sol.state
    d = np.asarray(d, dtype=float)
    if d.shape != (st.mbar.shape[0],):
        raise ValueError(f"expected direction of length {st.mbar.shape[0]}, got {d.shape}")
    w = st.Q @ (st.mbar.T @ d)
    return st.mbar @ w, st.nbar @ w
