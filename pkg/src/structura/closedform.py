"""Closed-form solvers for degree-adjusted projections onto logic factors.

All solvers work in the degree-adjusted space: coordinate ``i`` ranges over
``[0, 1/delta[i]]`` and linear constraints are written on ``delta * mu``.
Each forward solver returns ``(mu, certificate)``; the certificate records
the branch and support that produced ``mu`` so :func:`jvp_closed_form` can
apply the matching generalized Jacobian without re-solving.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Callable

import numpy as np

PAIR_TIE_TOL = 1e-9

Solver = Callable[[np.ndarray, np.ndarray], tuple]


@dataclass(frozen=True, eq=False)
class ClosedFormCertificate:
    """Branch record for one closed-form solve.

    ``branch`` is one of ``clip-feasible``, ``equality-tight``, ``cone``,
    ``orout-step-1``, ``orout-step-2``, ``orout-step-3``, ``pair-case-1``,
    ``pair-case-2``, ``pair-case-3``. ``support`` lists strictly interior
    output coordinates.
    """

    branch: str
    support: tuple
    delta: np.ndarray
    tau: float | None = None
    weights: np.ndarray | None = None
    cone_support: tuple = ()
    rho: int | None = None
    negation_mask: np.ndarray | None = None
    pair_flip: bool = False

    @property
    def signature(self):
        mask = None if self.negation_mask is None else tuple(np.flatnonzero(self.negation_mask))
        return (self.branch, self.support, self.cone_support, mask, self.pair_flip)


@dataclass
class ScbqpProblem:
    """``min 1/2 ||mu - eta||^2  s.t.  lower <= mu <= upper, <weights, mu> = rhs``."""

    eta: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    weights: np.ndarray
    rhs: float

    def __post_init__(self):
        self.eta = np.asarray(self.eta, dtype=float).ravel()
        n = len(self.eta)
        self.lower = _vector(self.lower, n)
        self.upper = _vector(self.upper, n)
        self.weights = _vector(self.weights, n)
        self.rhs = float(self.rhs)


def _vector(x, n) -> np.ndarray:
    """Own float copy of ``x`` broadcast to length ``n``."""
    x = np.asarray(x, dtype=float)
    if x.ndim == 0:
        return np.full(n, float(x))
    if x.shape == (n,):
        return x.copy()
    return np.broadcast_to(x, (n,)).copy()


def _interior(mu, lo, hi) -> tuple:
    return tuple(((mu > lo) & (mu < hi)).nonzero()[0].tolist())


def project_box(eta, alpha, beta):
    eta = np.asarray(eta, dtype=float)
    alpha = np.asarray(alpha, dtype=float)
    beta = np.asarray(beta, dtype=float)
    if (alpha > beta).any():
        alpha, beta = np.broadcast_arrays(alpha, beta, eta)[:2]
        bad = int(np.flatnonzero(alpha > beta)[0])
        raise ValueError(f"lower bound exceeds upper bound at coordinate {bad}")
    mu = np.minimum(np.maximum(eta, alpha), beta)
    return mu, ClosedFormCertificate("clip-feasible", _interior(mu, alpha, beta), np.ones_like(eta))


def solve_scbqp(prob: ScbqpProblem):
    """Exact solve: ``mu_i = clip(w_i tau + eta_i)`` where ``tau`` is found on
    the piecewise-linear map ``tau -> <w, mu(tau)>`` between sorted
    breakpoints."""
    eta, lo, hi, w, B = prob.eta, prob.lower, prob.upper, prob.weights, prob.rhs
    if (lo > hi).any():
        raise ValueError("lower bound exceeds upper bound")

    def g(t):
        t = np.atleast_1d(t)
        x = np.minimum(np.maximum(w[:, None] * t[None, :] + eta[:, None], lo[:, None]), hi[:, None])
        return (w[:, None] * x).sum(axis=0)

    nz = w != 0
    if not nz.any():
        if abs(B) > 1e-12:
            raise ValueError(f"infeasible: all weights are zero but rhs is {B}")
        tau = 0.0
    else:
        bps = np.sort(np.concatenate([(lo[nz] - eta[nz]) / w[nz], (hi[nz] - eta[nz]) / w[nz]]))
        vals = g(bps)
        slack = 1e-12 * max(1.0, abs(B))
        if B < vals[0] - slack or B > vals[-1] + slack:
            raise ValueError(f"infeasible: rhs {B} outside attainable range [{vals[0]}, {vals[-1]}]")
        k = int(np.searchsorted(vals, B, side="left"))
        if k == 0:
            tau = float(bps[0])
        elif k >= len(bps):
            tau = float(bps[-1])
        else:
            t0, t1, v0, v1 = bps[k - 1], bps[k], vals[k - 1], vals[k]
            tau = float(t0 + (B - v0) * (t1 - t0) / (v1 - v0)) if v1 > v0 else float(t0)
    mu = np.minimum(np.maximum(w * tau + eta, lo), hi)
    cert = ClosedFormCertificate("equality-tight", _interior(mu, lo, hi), np.ones_like(eta),
                                 tau=tau, weights=w.copy())
    return mu, cert


def jvp_scbqp(cert: ClosedFormCertificate, w, d):
    d = np.asarray(d, dtype=float)
    out = np.zeros_like(d)
    idx = list(cert.support)
    if not idx:
        return out
    wi = np.asarray(w, dtype=float)[idx]
    di = d[idx]
    ww = wi @ wi
    out[idx] = di - wi * (wi @ di) / ww if ww > 0 else di
    return out


def _with_delta(cert, delta, **kw):
    return replace(cert, delta=np.asarray(delta, dtype=float), **kw)


def solve_xor(eta, delta):
    eta = np.asarray(eta, dtype=float)
    delta = np.asarray(delta, dtype=float)
    mu, cert = solve_scbqp(ScbqpProblem(eta, 0.0, 1.0 / delta, delta, 1.0))
    return mu, _with_delta(cert, delta)


def solve_or(eta, delta):
    eta = np.asarray(eta, dtype=float)
    delta = np.asarray(delta, dtype=float)
    mu, cert = project_box(eta, 0.0, 1.0 / delta)
    if np.dot(delta, mu) >= 1.0:
        return mu, _with_delta(cert, delta)
    return solve_xor(eta, delta)


def solve_knapsack(eta, delta, costs, budget):
    eta = np.asarray(eta, dtype=float)
    delta = np.asarray(delta, dtype=float)
    c = np.broadcast_to(np.asarray(costs, dtype=float), eta.shape)
    if (c < 0).any():
        raise ValueError("knapsack costs must be nonnegative")
    mu, cert = project_box(eta, 0.0, 1.0 / delta)
    w = c * delta
    if np.dot(w, mu) <= budget:
        return mu, _with_delta(cert, delta)
    mu, cert = solve_scbqp(ScbqpProblem(eta, 0.0, 1.0 / delta, w, budget))
    return mu, _with_delta(cert, delta)


def solve_budget(eta, delta, budget=1.0):
    return solve_knapsack(eta, delta, 1.0, budget)


def apply_negation(inner: Solver, mask, eta, delta):
    """Solve over the polytope with the masked coordinates negated
    (``x_k -> 1/delta_k - x_k``)."""
    eta = np.asarray(eta, dtype=float)
    delta = np.asarray(delta, dtype=float)
    mask = np.asarray(mask, dtype=bool)
    top = 1.0 / delta
    mu_in, cert = inner(np.where(mask, top - eta, eta), delta)
    mu = np.where(mask, top - mu_in, mu_in)
    prior = cert.negation_mask if cert.negation_mask is not None else np.zeros_like(mask)
    return mu, replace(cert, negation_mask=mask ^ prior)


def project_cone_a1(eta, delta):
    """Project onto ``{delta_i mu_i <= delta_d mu_d for i < d}`` (last
    coordinate is the output)."""
    eta = np.asarray(eta, dtype=float)
    delta = np.asarray(delta, dtype=float)
    d = len(eta)
    x = delta[:-1] * eta[:-1]
    order = np.argsort(-x, kind="stable")
    inv2 = 1.0 / delta ** 2
    num = eta[-1] / delta[-1] + np.concatenate([[0.0], np.cumsum(eta[order] / delta[order])])
    den = inv2[-1] + np.concatenate([[0.0], np.cumsum(inv2[order])])
    taus = num / den
    rho = d - 1
    for r in range(d - 1):
        if taus[r] >= x[order[r]]:
            rho = r
            break
    tau = float(taus[rho])
    S = tuple(sorted(int(i) for i in order[:rho])) + (d - 1,)
    mu = eta.copy()
    idx = list(S)
    mu[idx] = tau / delta[idx]
    cert = ClosedFormCertificate("cone", tuple(range(d)), delta, tau=tau, cone_support=S, rho=rho)
    return mu, cert


def _jvp_cone(delta, S, d):
    out = np.array(d, dtype=float)
    idx = list(S)
    c = 1.0 / np.sum(1.0 / delta[idx] ** 2)
    out[idx] = c * np.sum(d[idx] / delta[idx]) / delta[idx]
    return out


def solve_orout(eta, delta):
    eta = np.asarray(eta, dtype=float)
    delta = np.asarray(delta, dtype=float)
    if len(eta) < 2:
        raise ValueError("orout needs at least one input and one output")
    top = 1.0 / delta
    mu, cert = project_box(eta, 0.0, top)
    dm = delta * mu
    a1 = bool((dm[:-1] <= dm[-1]).all())
    if a1 and dm[:-1].sum() >= dm[-1]:
        return mu, _with_delta(cert, delta, branch="orout-step-1")
    if not a1:
        mu_c, ccert = project_cone_a1(eta, delta)
        mu, bcert = project_box(mu_c, 0.0, top)
        dm = delta * mu
        if dm[:-1].sum() >= dm[-1]:
            return mu, replace(ccert, branch="orout-step-2", support=bcert.support)
    last = np.zeros(len(eta), dtype=bool)
    last[-1] = True
    mu, cert = apply_negation(solve_xor, last, eta, delta)
    return mu, replace(cert, branch="orout-step-3")


def pair_reparametrize(eta_m, eta_n, delta):
    """Map per-state scores ``eta_m = (1F, 1T, 2F, 2T)`` and joint scores
    ``eta_n = (FF, FT, TF, TT)`` to the reduced ``(eta1, eta2, eta12)``."""
    f1, t1, f2, t2 = np.asarray(eta_m, dtype=float)
    ff, ft, tf, tt = np.asarray(eta_n, dtype=float)
    d1, d2 = (float(x) for x in np.broadcast_to(np.asarray(delta, dtype=float), (2,)))
    eta1 = 0.5 * (t1 - f1 + 1.0 / d1 + d1 * (tf - ff))
    eta2 = 0.5 * (t2 - f2 + 1.0 / d2 + d2 * (ft - ff))
    eta12 = 0.5 * (ff - ft - tf + tt)
    return eta1, eta2, eta12


def _pair_nonneg(e1, e2, e12, d1, d2):
    if d1 * e1 - (d2 * e2 + d2 * d2 * e12) > PAIR_TIE_TOL:
        mu1 = min(max(e1, 0.0), 1.0 / d1)
        mu2 = min(max(e2 + d2 * e12, 0.0), 1.0 / d2)
        case = 1
    elif d2 * e2 - (d1 * e1 + d1 * d1 * e12) > PAIR_TIE_TOL:
        mu1 = min(max(e1 + d1 * e12, 0.0), 1.0 / d1)
        mu2 = min(max(e2, 0.0), 1.0 / d2)
        case = 2
    else:
        s = d1 * d1 + d2 * d2
        v = (d1 * d2 * d2 * e1 + d1 * d1 * d2 * e2 + d1 * d1 * d2 * d2 * e12) / s
        v = min(max(v, 0.0), 1.0)
        mu1, mu2 = v / d1, v / d2
        case = 3
    if case == 3:
        v = d1 * mu1
        support = (0, 1) if 0.0 < v < 1.0 else ()
    else:
        support = tuple(i for i, (m, d) in enumerate(((mu1, d1), (mu2, d2))) if 0.0 < d * m < 1.0)
    mu12 = min(d1 * mu1, d2 * mu2)
    return mu1, mu2, mu12, case, support


def solve_pair(eta1, eta2, eta12, delta1=1.0, delta2=1.0):
    """Solve ``min 1/2 (eta1-mu1)^2 + 1/2 (eta2-mu2)^2 - eta12 mu12`` over the
    degree-adjusted pairwise marginal polytope."""
    e1, e2, e12 = float(eta1), float(eta2), float(eta12)
    d1, d2 = float(delta1), float(delta2)
    flip = e12 < 0
    if flip:
        e1, e2, e12 = e1 + d1 * e12, 1.0 / d2 - e2, -e12
    mu1, mu2, mu12, case, support = _pair_nonneg(e1, e2, e12, d1, d2)
    if flip:
        mu12 = d1 * mu1 - mu12
        mu2 = 1.0 / d2 - mu2
    cert = ClosedFormCertificate(f"pair-case-{case}", support, np.array([d1, d2]), pair_flip=flip)
    return mu1, mu2, mu12, cert


def pair_jacobian(cert: ClosedFormCertificate) -> np.ndarray:
    """2 x 3 Jacobian of ``(mu1, mu2)`` with respect to ``(eta1, eta2, eta12)``."""
    d1, d2 = cert.delta
    case = int(cert.branch[-1])
    if case == 3:
        J = np.array([[d2 * d2, d1 * d2, d1 * d2 * d2],
                      [d1 * d2, d1 * d1, d1 * d1 * d2]]) / (d1 * d1 + d2 * d2)
        if not cert.support:
            J[:] = 0.0
    else:
        J = np.array([[1.0, 0.0, d1 if case == 2 else 0.0],
                      [0.0, 1.0, d2 if case == 1 else 0.0]])
        for i in (0, 1):
            if i not in cert.support:
                J[i] = 0.0
    if cert.pair_flip:
        P = np.array([[1.0, 0.0, d1], [0.0, -1.0, 0.0], [0.0, 0.0, -1.0]])
        J = np.diag([1.0, -1.0]) @ J @ P
    return J


def jvp_closed_form(cert: ClosedFormCertificate, d, transpose: bool = True):
    """Apply the local Jacobian of a closed-form solve.

    For the pair factor the Jacobian is 2 x 3 (outputs ``mu1, mu2``; inputs
    ``eta1, eta2, eta12``): with ``transpose`` the 2-vector ``d`` is mapped
    to the 3 input gradients, otherwise a 3-vector input tangent is mapped
    to the 2 outputs. All other branches are symmetric.
    """
    d = np.asarray(d, dtype=float)
    if cert.branch.startswith("pair-case"):
        J = pair_jacobian(cert)
        return J.T @ d if transpose else J @ d

    mask = cert.negation_mask
    sign = None
    if mask is not None and mask.any():
        sign = np.where(mask, -1.0, 1.0)
        d = sign * d

    branch = cert.branch
    if branch in ("clip-feasible", "orout-step-1"):
        out = np.zeros_like(d)
        idx = list(cert.support)
        out[idx] = d[idx]
    elif branch in ("equality-tight", "orout-step-3"):
        out = jvp_scbqp(cert, cert.weights, d)
    elif branch == "cone":
        out = _jvp_cone(cert.delta, cert.cone_support, d)
    elif branch == "orout-step-2":
        keep = np.zeros_like(d)
        keep[list(cert.support)] = 1.0
        out = _jvp_cone(cert.delta, cert.cone_support, keep * d)
    else:
        raise ValueError(f"unknown certificate branch {branch!r}")
    return sign * out if sign is not None else out
