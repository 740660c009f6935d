"""Backward pass: Jacobian-vector products of the LP-SparseMAP solution.

The Jacobian of ``mu`` with respect to the variable scores is the fixed
point ``J = Ct^T J_M Ct J`` of local Jacobians glued by the selector maps.
Because it is symmetric, ``J d`` is obtained by repeating
``d <- gather(local_jvp(scatter(d)))`` until the iterate stops moving.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .admm import LpSparseMapSolution
from .factors import local_jvp

MAX_MATERIALIZE = 64


@dataclass
class BackwardConfig:
    max_iterations: int = 100
    eps: float = 1e-9

    def __post_init__(self):
        if self.max_iterations < 1 or not self.eps > 0:
            raise ValueError("max_iterations and eps must be positive")


@dataclass
class BackwardResult:
    d_m: np.ndarray
    d_n: list
    converged: bool
    iterations: int

    def __iter__(self):
        return iter((self.d_m, self.d_n))


def _sweep(sol: LpSparseMapSolution, d: np.ndarray):
    g = sol.graph
    pieces = g.scatter(d)
    dm, dn = [], []
    for f, att in enumerate(g.factors):
        a, b = local_jvp(att.factor, sol.solutions[f], pieces[f])
        dm.append(a)
        dn.append(b)
    return g.gather(dm), dn


def jvp(sol: LpSparseMapSolution, d, cfg: BackwardConfig | None = None) -> BackwardResult:
    """Return ``d_M = (dmu/deta_M)^T d`` and per-factor ``d_N``."""
    cfg = cfg or BackwardConfig()
    if not sol.solutions:
        raise ValueError("solution carries no backward state")
    d = np.asarray(d, dtype=float)
    if d.shape != (sol.graph.num_variables,):
        raise ValueError(f"expected direction of length {sol.graph.num_variables}, got {d.shape}")
    for t in range(1, cfg.max_iterations + 1):
        d_m, d_n = _sweep(sol, d)
        if np.linalg.norm(d_m - d) <= cfg.eps:
            return BackwardResult(d_m, d_n, True, t)
        d = d_m
    return BackwardResult(d_m, d_n, False, cfg.max_iterations)


def materialize_jacobian(sol: LpSparseMapSolution, cfg: BackwardConfig | None = None) -> np.ndarray:
    n = sol.graph.num_variables
    if n > MAX_MATERIALIZE:
        raise ValueError(f"refusing to materialize a {n} x {n} Jacobian (limit {MAX_MATERIALIZE})")
    eye = np.eye(n)
    return np.stack([jvp(sol, eye[i], cfg).d_m for i in range(n)])
