"""ADMM forward pass for LP-SparseMAP.

Each iteration solves every factor's SparseMAP subproblem at the scores::

    eta_t = (scatter(eta_m) + lam_f + gamma * scatter(mu)) / (1 + gamma)
    eta_n_t = eta_n / (1 + gamma)

then averages the local solutions into ``mu = gather(local)`` and takes a dual
step ``lam += gamma * (scatter(mu) - local)``.

The multiplier enters the scores with a plus sign: the augmented Lagrangian
carries ``-<lam, scatter(mu) - local>``, so a local copy that overshoots the
consensus gets its scores lowered by the next dual step.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .activeset import SparseMapConfig
from .factors import LocalSolution, solve_local
from .graph import FactorGraph, GraphError

THREADS_ENV = "STRUCTURA_THREADS"


class SolveError(RuntimeError):
    """A factor subproblem failed or produced non-finite values."""


@dataclass
class AdmmConfig:
    gamma: float = 0.1
    max_outer: int = 1000
    eps_primal: float = 1e-6
    eps_dual: float = 1e-6
    inner: SparseMapConfig = field(default_factory=SparseMapConfig)
    backward_power_iterations: int = 100
    force_generic: bool = False
    threads: int | None = None

    def __post_init__(self):
        if not self.gamma >= 0:
            raise ValueError("gamma must be nonnegative")
        if self.max_outer < 1:
            raise ValueError("max_outer must be >= 1")
        if not (self.eps_primal > 0 and self.eps_dual > 0):
            raise ValueError("tolerances must be positive")
        if self.backward_power_iterations < 1:
            raise ValueError("backward_power_iterations must be >= 1")


@dataclass
class AdmmState:
    graph: FactorGraph
    config: AdmmConfig
    eta_c: np.ndarray  # scatter(eta_m)
    eta_n: list
    mu: np.ndarray
    lam: np.ndarray
    solutions: list = field(default_factory=list)
    mu_prev: np.ndarray | None = None
    residual_primal: float = np.inf
    residual_dual: float = np.inf
    iteration: int = 0

    @property
    def local_mu(self) -> np.ndarray:
        return np.concatenate([s.mu for s in self.solutions])


@dataclass
class LpSparseMapSolution:
    graph: FactorGraph
    mu: np.ndarray
    solutions: list
    status: str
    iterations: int
    residual_primal: float
    residual_dual: float
    eta_n: list
    lam: np.ndarray

    @property
    def converged(self) -> bool:
        return self.status == "converged"

    @property
    def signature(self):
        return tuple(s.signature for s in self.solutions)


def resolve_threads(requested: int | None = None) -> int:
    """Worker count: explicit request, else the environment variable, else 1.
    Zero means one worker per CPU."""
    if requested is None:
        raw = os.environ.get(THREADS_ENV, "").strip()
        requested = int(raw) if raw else 1
    if requested < 0:
        raise ValueError(f"{THREADS_ENV} must be >= 0")
    return requested or (os.cpu_count() or 1)


def _check_scores(graph: FactorGraph, eta_m, eta_n):
    graph.finalize()
    eta_m = np.asarray(eta_m, dtype=float).ravel()
    if eta_m.shape != (graph.num_variables,):
        raise GraphError(f"expected {graph.num_variables} variable scores, got {eta_m.shape[0]}")
    if eta_n is None:
        eta_n = [att.eta_n for att in graph.factors]
    if len(eta_n) != len(graph.factors):
        raise GraphError(f"expected additional scores for {len(graph.factors)} factors")
    out = []
    for f, (att, v) in enumerate(zip(graph.factors, eta_n)):
        v = np.asarray(v, dtype=float).ravel()
        if len(v) != len(att.eta_n):
            raise GraphError(f"factor {f}: expected {len(att.eta_n)} additional scores, got {len(v)}")
        out.append(v)
    if not (np.all(np.isfinite(eta_m)) and all(np.all(np.isfinite(v)) for v in out)):
        raise GraphError("scores must be finite")
    return eta_m, out


def init_state(graph: FactorGraph, eta_m, eta_n=None, cfg: AdmmConfig | None = None) -> AdmmState:
    cfg = cfg or AdmmConfig()
    eta_m, eta_n = _check_scores(graph, eta_m, eta_n)
    return AdmmState(
        graph=graph,
        config=cfg,
        eta_c=graph.scatter_flat(eta_m),
        eta_n=eta_n,
        mu=1.0 / graph.degrees.astype(float),
        lam=np.zeros(graph.num_slots),
    )


def _solve_factor(state: AdmmState, f: int, eta_t: np.ndarray) -> LocalSolution:
    g, cfg = state.graph, state.config
    att = g.factors[f]
    warm = state.solutions[f] if state.solutions else None
    try:
        sol = solve_local(att.factor, eta_t, state.eta_n[f] / (1.0 + cfg.gamma), g.factor_delta(f),
                          cfg.inner, warm=warm, force_generic=cfg.force_generic)
    except Exception as exc:
        raise SolveError(f"factor {f} ({att.factor.kind}): {exc}") from exc
    if not (np.isfinite(sol.mu).all() and np.isfinite(sol.nu).all()):
        raise SolveError(f"factor {f} ({att.factor.kind}): non-finite local solution")
    return sol


def _norm(x: np.ndarray) -> float:
    return math.sqrt(float(x @ x))


def admm_step(state: AdmmState, pool: ThreadPoolExecutor | None = None) -> AdmmState:
    g, gamma = state.graph, state.config.gamma
    eta_t = (state.eta_c + state.lam + gamma * g.scatter_flat(state.mu)) / (1.0 + gamma)
    pieces = g.split(eta_t)
    jobs = range(len(g.factors))
    if pool is None:
        sols = [_solve_factor(state, f, pieces[f]) for f in jobs]
    else:
        sols = list(pool.map(lambda f: _solve_factor(state, f, pieces[f]), jobs))

    local = np.concatenate([s.mu for s in sols])
    mu = g.gather_flat(local)
    gap = g.scatter_flat(mu) - local
    return AdmmState(
        graph=g,
        config=state.config,
        eta_c=state.eta_c,
        eta_n=state.eta_n,
        mu=mu,
        lam=state.lam + gamma * gap,
        solutions=sols,
        mu_prev=state.mu,
        residual_primal=_norm(gap),
        residual_dual=_norm(mu - state.mu),
        iteration=state.iteration + 1,
    )


def residuals(state: AdmmState) -> tuple[float, float]:
    """Recompute ``(||scatter(mu) - local||, ||mu - mu_prev||)`` from the state."""
    if not state.solutions or state.mu_prev is None:
        return np.inf, np.inf
    primal = _norm(state.graph.scatter_flat(state.mu) - state.local_mu)
    dual = _norm(state.mu - state.mu_prev)
    return primal, dual


def solve(graph: FactorGraph, eta_m, eta_n=None, cfg: AdmmConfig | None = None,
          callback: Callable[[AdmmState], None] | None = None) -> LpSparseMapSolution:
    """Run ADMM until both residual tests pass or ``max_outer`` iterations.

    With ``gamma == 0`` the subproblem scores never depend on ``mu`` and the
    dual step vanishes, so every iteration reproduces the first one; the
    loop stops after one iteration and only the primal test decides the
    status.
    """
    cfg = cfg or AdmmConfig()
    state = init_state(graph, eta_m, eta_n, cfg)
    workers = resolve_threads(cfg.threads)
    pool = ThreadPoolExecutor(workers) if workers > 1 and len(graph.factors) > 1 else None
    status = "max_iter"
    try:
        for _ in range(cfg.max_outer):
            state = admm_step(state, pool)
            if callback is not None:
                callback(state)
            primal_ok = state.residual_primal < cfg.eps_primal
            if cfg.gamma == 0:
                status = "converged" if primal_ok else "max_iter"
                break
            if primal_ok and state.residual_dual < cfg.eps_dual:
                status = "converged"
                break
    finally:
        if pool is not None:
            pool.shutdown()
    return LpSparseMapSolution(
        graph=graph,
        mu=state.mu,
        solutions=state.solutions,
        status=status,
        iterations=state.iteration,
        residual_primal=state.residual_primal,
        residual_dual=state.residual_dual,
        eta_n=state.eta_n,
        lam=state.lam,
    )
