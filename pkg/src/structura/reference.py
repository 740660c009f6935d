"""Brute-force reference oracles for testing.

Nothing here is used by the solvers. The oracles are deliberately naive:

* :func:`brute_force_sparsemap` enumerates every candidate support of an
  explicit structure list and solves the equality-constrained KKT system;
* :func:`projected_gradient_qp` minimizes a separable quadratic over a
  polyhedron given by inequalities, using Dykstra's alternating projections
  for the projection step and an exact active-constraint polish;
* :func:`finite_difference_jvp` is a central difference.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import factors as fk

MAX_BRUTE_FORCE_STRUCTURES = 20


@dataclass
class BruteForceResult:
    mu: np.ndarray
    nu: np.ndarray
    objective: float
    p: np.ndarray


def _as_arrays(structures):
    if isinstance(structures, tuple) and len(structures) == 2:
        M, N = structures
    else:
        M = np.stack([np.asarray(s.m, dtype=float) for s in structures])
        N = np.stack([np.asarray(s.n, dtype=float) for s in structures])
    M = np.atleast_2d(np.asarray(M, dtype=float))
    N = np.asarray(N, dtype=float).reshape(M.shape[0], -1)
    return M, N


def sparsemap_objective(mu, nu, eta_m, eta_n) -> float:
    val = 0.5 * float(np.sum((np.asarray(eta_m) - mu) ** 2))
    if len(nu):
        val -= float(np.dot(eta_n, nu))
    return val


def brute_force_sparsemap(structures, eta_m, eta_n=None, delta=None) -> BruteForceResult:
    """Minimize ``1/2 ||eta_m - Mt p||^2 - <eta_n, N p>`` over the simplex by
    exhaustive support enumeration (at most 20 structures)."""
    M, N = _as_arrays(structures)
    k, d = M.shape
    if k > MAX_BRUTE_FORCE_STRUCTURES:
        raise ValueError(f"brute force limited to {MAX_BRUTE_FORCE_STRUCTURES} structures, got {k}")
    eta_m = np.asarray(eta_m, dtype=float)
    eta_n = np.zeros(N.shape[1]) if eta_n is None else np.asarray(eta_n, dtype=float)
    delta = np.ones(d) if delta is None else np.asarray(delta, dtype=float)
    Mt = M / delta
    theta = Mt @ eta_m + (N @ eta_n if N.shape[1] else 0.0)
    G = Mt @ Mt.T

    best = None
    for s in range(1, min(k, d + 1) + 1):
        combos = np.array(list(itertools.combinations(range(k), s)))
        K = np.zeros((len(combos), s + 1, s + 1))
        K[:, 0, 1:] = 1.0
        K[:, 1:, 0] = 1.0
        K[:, 1:, 1:] = G[combos[:, :, None], combos[:, None, :]]
        rhs = np.concatenate([np.ones((len(combos), 1)), theta[combos]], axis=1)
        ok = np.abs(np.linalg.det(K)) > 1e-12
        if not ok.any():
            continue
        combos, K, rhs = combos[ok], K[ok], rhs[ok]
        p = np.linalg.solve(K, rhs[..., None])[..., 0][:, 1:]
        feas = np.all(p >= -1e-12, axis=1)
        for c, pc in zip(combos[feas], p[feas]):
            pc = np.maximum(pc, 0.0)
            mu = Mt[c].T @ pc
            nu = N[c].T @ pc
            obj = sparsemap_objective(mu, nu, eta_m, eta_n)
            if best is None or obj < best.objective - 1e-15:
                full = np.zeros(k)
                full[c] = pc
                best = BruteForceResult(mu, nu, obj, full)
    return best


# polyhedra


@dataclass
class Polyhedron:
    """``{x : lower <= x <= upper, A_ub x <= b_ub, A_eq x = b_eq}``."""

    dim: int
    lower: np.ndarray = None
    upper: np.ndarray = None
    A_ub: np.ndarray = field(default=None)
    b_ub: np.ndarray = field(default=None)
    A_eq: np.ndarray = field(default=None)
    b_eq: np.ndarray = field(default=None)

    def __post_init__(self):
        n = self.dim
        self.lower = np.full(n, -np.inf) if self.lower is None else np.asarray(self.lower, dtype=float)
        self.upper = np.full(n, np.inf) if self.upper is None else np.asarray(self.upper, dtype=float)
        self.A_ub = np.zeros((0, n)) if self.A_ub is None else np.atleast_2d(np.asarray(self.A_ub, dtype=float))
        self.b_ub = np.zeros(0) if self.b_ub is None else np.asarray(self.b_ub, dtype=float).ravel()
        self.A_eq = np.zeros((0, n)) if self.A_eq is None else np.atleast_2d(np.asarray(self.A_eq, dtype=float))
        self.b_eq = np.zeros(0) if self.b_eq is None else np.asarray(self.b_eq, dtype=float).ravel()

    def violation(self, x) -> float:
        x = np.asarray(x, dtype=float)
        v = [np.max(self.lower - x, initial=0.0), np.max(x - self.upper, initial=0.0)]
        if len(self.b_ub):
            v.append(np.max(self.A_ub @ x - self.b_ub, initial=0.0))
        if len(self.b_eq):
            v.append(np.max(np.abs(self.A_eq @ x - self.b_eq), initial=0.0))
        return float(max(v))

    def contains(self, x, tol=1e-9) -> bool:
        return self.violation(x) <= tol

    def negate(self, mask, top) -> "Polyhedron":
        """Image under ``x_k -> top_k - x_k`` for masked ``k``."""
        mask = np.asarray(mask, dtype=bool)
        sign = np.where(mask, -1.0, 1.0)
        off = np.where(mask, top, 0.0)
        lo = np.where(mask, off - self.upper, self.lower)
        hi = np.where(mask, off - self.lower, self.upper)
        return Polyhedron(self.dim, lo, hi, self.A_ub * sign, self.b_ub - self.A_ub @ off,
                          self.A_eq * sign, self.b_eq - self.A_eq @ off)

    # projections onto the individual pieces
    def _pieces(self):
        yield "box", None, None
        for a, b in zip(self.A_ub, self.b_ub):
            yield "ub", a, b
        for a, b in zip(self.A_eq, self.b_eq):
            yield "eq", a, b


def _project_piece(kind, a, b, x, lower, upper):
    if kind == "box":
        return np.clip(x, lower, upper)
    aa = a @ a
    if aa == 0:
        return x
    r = a @ x - b
    if kind == "ub" and r <= 0:
        return x
    return x - (r / aa) * a


def dykstra_projection(poly: Polyhedron, eta, max_sweeps=20000, tol=1e-13) -> np.ndarray:
    pieces = list(poly._pieces())
    x = np.asarray(eta, dtype=float).copy()
    incr = [np.zeros_like(x) for _ in pieces]
    for sweep in range(max_sweeps):
        moved = 0.0
        for i, (kind, a, b) in enumerate(pieces):
            y = x + incr[i]
            nxt = _project_piece(kind, a, b, y, poly.lower, poly.upper)
            # x can stall for a sweep while the corrections still move
            moved = max(moved, np.max(np.abs(nxt - x)), np.max(np.abs((y - nxt) - incr[i])))
            x, incr[i] = nxt, y - nxt
        if moved <= tol:
            break
        if sweep % 50 == 49:
            polished = _polish(poly, np.ones_like(x), eta, x)
            if polished is not None:
                return polished
    return x


def _polish(poly: Polyhedron, curv, eta, x, thresholds=(1e-10, 1e-8, 1e-6, 1e-4, 1e-3)):
    """Solve the KKT system on the constraints active at ``x`` and accept the
    result only if it is primal and dual feasible."""
    n = poly.dim
    rows, rhs, ineq = [], [], []
    full_A = [np.eye(n), -np.eye(n), poly.A_ub]
    full_b = [poly.upper, -poly.lower, poly.b_ub]
    A_all = np.vstack(full_A)
    b_all = np.concatenate(full_b)
    finite = np.isfinite(b_all)
    A_all, b_all = A_all[finite], b_all[finite]
    slack = b_all - A_all @ x
    for thr in thresholds:
        act = slack <= thr
        A = np.vstack([A_all[act], poly.A_eq])
        b = np.concatenate([b_all[act], poly.b_eq])
        m = A.shape[0]
        K = np.zeros((n + m, n + m))
        K[:n, :n] = np.diag(curv)
        K[:n, n:] = A.T
        K[n:, :n] = A
        sol, *_ = np.linalg.lstsq(K, np.concatenate([eta, b]), rcond=None)
        if np.linalg.norm(K @ sol - np.concatenate([eta, b])) > 1e-9:
            continue
        xs, nu = sol[:n], sol[n:]
        n_ineq = int(act.sum())
        if np.all(nu[:n_ineq] >= -1e-10) and poly.contains(xs, 1e-10):
            return xs
    return None


def projected_gradient_qp(poly: Polyhedron, eta, curvature=None, max_steps=20000,
                          step_size=1.0, tol=1e-8) -> np.ndarray:
    """Minimize ``1/2 sum_i c_i x_i^2 - <eta, x>`` over ``poly``.

    With unit curvature this is the Euclidean projection of ``eta``. The
    projection step uses Dykstra's algorithm; iterates are polished by
    solving the KKT system on the active constraints, which makes the
    returned point exact up to linear-algebra roundoff once the active set
    is identified.
    """
    eta = np.asarray(eta, dtype=float)
    curv = np.ones_like(eta) if curvature is None else np.asarray(curvature, dtype=float)
    if np.all(curv == 1.0):
        x = dykstra_projection(poly, eta)
        polished = _polish(poly, curv, eta, x)
        return x if polished is None else polished
    x = dykstra_projection(poly, np.zeros_like(eta))
    for _ in range(max_steps):
        nxt = dykstra_projection(poly, x - step_size * (curv * x - eta))
        polished = _polish(poly, curv, eta, nxt)
        if polished is not None:
            return polished
        if np.max(np.abs(nxt - x)) <= tol * 1e-3:
            return nxt
        x = nxt
    raise RuntimeError("projected gradient did not converge")


def box_polyhedron(delta) -> Polyhedron:
    delta = np.asarray(delta, dtype=float)
    return Polyhedron(len(delta), np.zeros(len(delta)), 1.0 / delta)


def cone_a1_polyhedron(delta) -> Polyhedron:
    delta = np.asarray(delta, dtype=float)
    d = len(delta)
    A = np.zeros((d - 1, d))
    A[np.arange(d - 1), np.arange(d - 1)] = delta[:-1]
    A[:, -1] = -delta[-1]
    return Polyhedron(d, A_ub=A, b_ub=np.zeros(d - 1))


def pair_polyhedron(delta) -> Polyhedron:
    """Pair polytope over ``(mu1, mu2, mu12)`` in degree-adjusted coordinates."""
    d1, d2 = (float(x) for x in delta)
    A = np.array([[-d1, 0.0, 1.0], [0.0, -d2, 1.0], [d1, d2, -1.0]])
    return Polyhedron(3, np.zeros(3), np.array([1 / d1, 1 / d2, np.inf]), A, np.array([0.0, 0.0, 1.0]))


def factor_polyhedron(factor, delta) -> Polyhedron:
    """H-representation of a logic factor's degree-adjusted polytope."""
    delta = np.asarray(delta, dtype=float)
    d = len(delta)
    box = box_polyhedron(delta)
    if isinstance(factor, fk.Xor):
        return Polyhedron(d, box.lower, box.upper, A_eq=delta[None, :], b_eq=[1.0])
    if isinstance(factor, fk.Or):
        return Polyhedron(d, box.lower, box.upper, -delta[None, :], [-1.0])
    if isinstance(factor, fk.Knapsack):
        w = factor._costs(d) * delta
        return Polyhedron(d, box.lower, box.upper, w[None, :], [factor.budget])
    if isinstance(factor, fk.OrOut):
        A = cone_a1_polyhedron(delta).A_ub
        a2 = np.concatenate([-delta[:-1], [delta[-1]]])
        return Polyhedron(d, box.lower, box.upper, np.vstack([A, a2]), np.zeros(d))
    if isinstance(factor, fk.Negated):
        return factor_polyhedron(factor.inner, delta).negate(factor.mask, 1.0 / delta)
    if isinstance(factor, fk.Pair):
        return pair_polyhedron(delta)
    raise TypeError(f"no polyhedral description for {factor!r}")


def finite_difference_jvp(f: Callable, eta, v, d, h=1e-4) -> float:
    eta = np.asarray(eta, dtype=float)
    v = np.asarray(v, dtype=float)
    return float((np.dot(d, f(eta + h * v)) - np.dot(d, f(eta - h * v))) / (2 * h))
