"""Fenchel-Young loss for LP-SparseMAP.

For gold structures ``y_f`` (agreeing on shared variables, inducing the
global 0/1 vector ``m_y``)::

    loss = <eta_m, mu - m_y> + sum_f <eta_f_n, N_f p_f - n_f>
           + 1/2 (||m_y||^2 - ||mu||^2)

where ``(mu, p)`` is the LP-SparseMAP solution. The gradients are
``mu - m_y`` and ``N_f p_f - n_f``; no backward pass is needed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .admm import AdmmConfig, LpSparseMapSolution, solve
from .factors import Dense
from .graph import FactorGraph


class GoldError(ValueError):
    """Gold structures are invalid or disagree on a shared variable."""


@dataclass
class GoldAssignment:
    m: np.ndarray
    local_m: list
    n: list

    @classmethod
    def from_global(cls, graph: FactorGraph, m) -> "GoldAssignment":
        graph.finalize()
        m = np.asarray(m, dtype=float).ravel()
        if m.shape != (graph.num_variables,):
            raise GoldError(f"gold vector has length {m.shape[0]}, expected {graph.num_variables}")
        local = [m[att.variables] for att in graph.factors]
        return cls.from_local(graph, local)

    @classmethod
    def from_local(cls, graph: FactorGraph, local_m, n=None) -> "GoldAssignment":
        graph.finalize()
        if len(local_m) != len(graph.factors):
            raise GoldError(f"expected gold for {len(graph.factors)} factors, got {len(local_m)}")
        glob = np.full(graph.num_variables, np.nan)
        owner = np.full(graph.num_variables, -1)
        local = []
        for f, (att, lm) in enumerate(zip(graph.factors, local_m)):
            lm = np.asarray(lm, dtype=float).ravel()
            if lm.shape != (att.degree,):
                raise GoldError(f"factor {f}: gold has length {lm.shape[0]}, expected {att.degree}")
            if not np.all((lm == 0) | (lm == 1)):
                raise GoldError(f"factor {f}: gold entries must be 0 or 1")
            for k, j in enumerate(att.variables):
                if owner[j] >= 0 and glob[j] != lm[k]:
                    raise GoldError(
                        f"variable {j}: factor {owner[j]} has {glob[j]:g} but factor {f} has {lm[k]:g}"
                    )
                glob[j], owner[j] = lm[k], f
            local.append(lm)

        adds = []
        for f, (att, lm) in enumerate(zip(graph.factors, local)):
            try:
                derived = att.factor.gold_additionals(lm)
            except ValueError as exc:
                raise GoldError(f"factor {f}: {exc}") from exc
            if n is not None and n[f] is not None:
                given = np.asarray(n[f], dtype=float).ravel()
                if not _matches(att.factor, lm, given):
                    raise GoldError(f"factor {f}: additional statistics {given.tolist()} do not match the gold structure")
                derived = given
            adds.append(derived)
        return cls(glob, local, adds)


def _matches(factor, m, n) -> bool:
    if not isinstance(factor, Dense):
        derived = factor.gold_additionals(m)
        return derived.shape == n.shape and bool(np.allclose(derived, n, rtol=0, atol=1e-9))
    M, N = factor.structures(len(m))
    rows = np.all(np.abs(M - m) <= 1e-9, axis=1)
    if N.shape[1] != len(n):
        return False
    return bool(np.any(rows & np.all(np.abs(N - n) <= 1e-9, axis=1)))


@dataclass
class LossResult:
    value: float
    grad_eta_m: np.ndarray
    grad_eta_n: list
    solution: LpSparseMapSolution

    @property
    def exact(self) -> bool:
        """False when the forward solve stopped at the iteration cap; the
        value is then only a lower bound."""
        return self.solution.converged


def _value(sol: LpSparseMapSolution, eta_m, gold: GoldAssignment) -> float:
    mu = sol.mu
    val = float(np.dot(eta_m, mu - gold.m))
    for s, en, ny in zip(sol.solutions, sol.eta_n, gold.n):
        if len(en):
            val += float(np.dot(en, s.nu - ny))
    return val + 0.5 * (float(gold.m @ gold.m) - float(mu @ mu))


def loss_grad(sol: LpSparseMapSolution, gold: GoldAssignment):
    return sol.mu - gold.m, [s.nu - ny for s, ny in zip(sol.solutions, gold.n)]


def evaluate_loss(graph: FactorGraph, eta_m, gold: GoldAssignment, eta_n=None,
                  cfg: AdmmConfig | None = None) -> LossResult:
    sol = solve(graph, eta_m, eta_n, cfg)
    g_m, g_n = loss_grad(sol, gold)
    value = _value(sol, np.asarray(eta_m, dtype=float), gold)
    return LossResult(value, g_m, g_n, sol)


def loss_value(graph: FactorGraph, eta_m, gold: GoldAssignment, eta_n=None,
               cfg: AdmmConfig | None = None) -> float:
    return evaluate_loss(graph, eta_m, gold, eta_n, cfg).value
