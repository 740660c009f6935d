"""Factor kinds: parameters, structure sets, MAP oracles and local solvers.

Each kind knows how to enumerate its structures (used by the generic path
and by tests), how to build a MAP oracle, how to validate a gold local
assignment and, for the logic catalogue, how to solve its local problem in
closed form.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from . import closedform as cf
from .activeset import SparseMapConfig, SparseMapSolution, jvp_sparsemap, solve_sparsemap
from .graph import GraphError
from .oracles import (
    EnumerationOracle,
    arc_list,
    map_arborescence,
    map_assignment,
    map_viterbi,
)

MAX_ENUMERATION_BITS = 16


@dataclass
class LocalSolution:
    """Output of one local subproblem: ``mu = Mt p``, ``nu = N p`` and the
    backend record needed for the local Jacobian."""

    mu: np.ndarray
    nu: np.ndarray
    backend: object

    @property
    def signature(self):
        return self.backend.signature

    @property
    def converged(self) -> bool:
        return getattr(self.backend, "converged", True)


def _binary_rows(d: int) -> np.ndarray:
    if d > MAX_ENUMERATION_BITS:
        raise GraphError(f"structure enumeration over {d} binary variables is too large")
    return np.array(list(itertools.product((0.0, 1.0), repeat=d))).reshape(-1, d)


def _is_binary(m, tol=1e-9) -> bool:
    m = np.asarray(m, dtype=float)
    return bool(np.all((np.abs(m) <= tol) | (np.abs(m - 1) <= tol)))


class Factor:
    kind = "factor"
    closed_form = False

    def n_additional(self, d: int) -> int:
        return 0

    def default_eta_n(self, d: int) -> np.ndarray:
        return np.zeros(self.n_additional(d))

    def validate(self, d: int, eta_n) -> None:
        expected = self.n_additional(d)
        if len(eta_n) != expected:
            raise GraphError(f"{self.kind}: expected {expected} additional scores, got {len(eta_n)}")
        if not np.all(np.isfinite(eta_n)):
            raise GraphError(f"{self.kind}: additional scores must be finite")

    def structures(self, d: int) -> tuple[np.ndarray, np.ndarray]:
        raise NotImplementedError

    def oracle(self, d: int):
        return _enumeration_oracle(self, d)

    def solve_closed(self, eta_m, eta_n, delta) -> LocalSolution:
        raise NotImplementedError(f"{self.kind} has no closed-form solver")

    def jvp_closed(self, sol: LocalSolution, d) -> tuple[np.ndarray, np.ndarray]:
        return cf.jvp_closed_form(sol.backend, d), np.zeros(0)

    def gold_additionals(self, m) -> np.ndarray:
        """Return ``n`` for a gold local assignment ``m`` or raise
        ``ValueError`` if ``m`` is not a structure of this factor."""
        M, N = self.structures(len(m))
        hit = np.flatnonzero(np.all(np.abs(M - np.asarray(m, dtype=float)) <= 1e-9, axis=1))
        if hit.size == 0:
            raise ValueError(f"{self.kind}: {np.asarray(m).tolist()} is not a valid structure")
        return N[hit[0]].copy()

    def __repr__(self):
        return f"{type(self).__name__}()"


def _enumeration_oracle(factor: Factor, d: int) -> EnumerationOracle:
    cache = factor.__dict__.setdefault("_enumeration_cache", {})
    if d not in cache:
        M, N = factor.structures(d)
        cache[d] = EnumerationOracle(M, N)
    return cache[d]


class _Logic(Factor):
    closed_form = True

    def _solve(self, eta, delta):
        raise NotImplementedError

    def solve_closed(self, eta_m, eta_n, delta):
        mu, cert = self._solve(np.asarray(eta_m, dtype=float), np.asarray(delta, dtype=float))
        return LocalSolution(mu, np.zeros(0), cert)

    def solver(self):
        return self._solve


class Xor(_Logic):
    kind = "xor"

    def structures(self, d):
        return np.eye(d), np.zeros((d, 0))

    def _solve(self, eta, delta):
        return cf.solve_xor(eta, delta)

    def gold_additionals(self, m):
        if not (_is_binary(m) and abs(np.sum(m) - 1) < 1e-9):
            raise ValueError(f"xor: gold {np.asarray(m).tolist()} must have exactly one active variable")
        return np.zeros(0)


class Or(_Logic):
    kind = "or"

    def structures(self, d):
        M = _binary_rows(d)[1:]
        return M, np.zeros((len(M), 0))

    def _solve(self, eta, delta):
        return cf.solve_or(eta, delta)

    def gold_additionals(self, m):
        if not (_is_binary(m) and np.sum(m) >= 1 - 1e-9):
            raise ValueError(f"or: gold {np.asarray(m).tolist()} must have an active variable")
        return np.zeros(0)


def _knapsack_vertices(costs: np.ndarray, budget: float) -> np.ndarray:
    d = len(costs)
    rows = []
    for x in _binary_rows(d):
        load = float(costs @ x)
        if load <= budget + 1e-12:
            rows.append(x)
            for k in np.flatnonzero((x == 0) & (costs > 0)):
                if load < budget < load + costs[k]:
                    y = x.copy()
                    y[k] = (budget - load) / costs[k]
                    rows.append(y)
    M = np.unique(np.array(rows), axis=0)
    return M


class Knapsack(_Logic):
    kind = "knapsack"

    def __init__(self, costs, budget):
        self.costs = np.asarray(costs, dtype=float).ravel()
        self.budget = float(budget)
        if np.any(self.costs < 0) or not np.all(np.isfinite(self.costs)):
            raise GraphError("knapsack: costs must be finite and nonnegative")
        if not self.budget >= 0:
            raise GraphError("knapsack: budget must be nonnegative")

    def validate(self, d, eta_n):
        if len(self.costs) != d:
            raise GraphError(f"knapsack: {len(self.costs)} costs for {d} variables")
        super().validate(d, eta_n)

    def _costs(self, d):
        return self.costs

    def structures(self, d):
        M = _knapsack_vertices(self._costs(d), self.budget)
        return M, np.zeros((len(M), 0))

    def _solve(self, eta, delta):
        return cf.solve_knapsack(eta, delta, self._costs(len(eta)), self.budget)

    def gold_additionals(self, m):
        if not (_is_binary(m) and self._costs(len(m)) @ np.asarray(m, dtype=float) <= self.budget + 1e-9):
            raise ValueError(f"{self.kind}: gold {np.asarray(m).tolist()} exceeds the budget {self.budget}")
        return np.zeros(0)

    def __repr__(self):
        return f"Knapsack(costs={self.costs.tolist()}, budget={self.budget})"


class Budget(Knapsack):
    kind = "budget"

    def __init__(self, budget):
        super().__init__(np.zeros(0), budget)

    def validate(self, d, eta_n):
        Factor.validate(self, d, eta_n)

    def _costs(self, d):
        return np.ones(d)

    def __repr__(self):
        return f"Budget({self.budget})"


class AtMostOne(Budget):
    kind = "atmostone"

    def __init__(self):
        super().__init__(1.0)

    def __repr__(self):
        return "AtMostOne()"


class OrOut(_Logic):
    """``x_d = OR(x_1, ..., x_{d-1})``; the last variable is the output."""

    kind = "orout"

    def validate(self, d, eta_n):
        if d < 2:
            raise GraphError("orout: needs at least two variables")
        super().validate(d, eta_n)

    def structures(self, d):
        X = _binary_rows(d - 1)
        M = np.column_stack([X, X.max(axis=1)])
        return M, np.zeros((len(M), 0))

    def _solve(self, eta, delta):
        return cf.solve_orout(eta, delta)

    def gold_additionals(self, m):
        m = np.asarray(m, dtype=float)
        if not (_is_binary(m) and abs(m[-1] - m[:-1].max()) < 1e-9):
            raise ValueError(f"orout: gold {m.tolist()} violates output = OR(inputs)")
        return np.zeros(0)


class Negated(_Logic):
    """Wraps a kind without additional statistics, negating masked variables."""

    kind = "negated"

    def __init__(self, inner: Factor, mask):
        self.inner = inner
        self.mask = np.asarray(mask, dtype=bool).ravel()
        self.closed_form = inner.closed_form

    def validate(self, d, eta_n):
        if len(self.mask) != d:
            raise GraphError(f"negated: mask has length {len(self.mask)} for {d} variables")
        if self.inner.n_additional(d) != 0:
            raise GraphError(f"negated: inner kind {self.inner.kind} has additional statistics")
        self.inner.validate(d, np.zeros(0))
        super().validate(d, eta_n)

    def structures(self, d):
        M, N = self.inner.structures(d)
        return np.where(self.mask, 1.0 - M, M), N

    def _solve(self, eta, delta):
        return cf.apply_negation(self.inner.solver(), self.mask, eta, delta)

    def gold_additionals(self, m):
        m = np.asarray(m, dtype=float)
        return self.inner.gold_additionals(np.where(self.mask, 1.0 - m, m))

    def __repr__(self):
        return f"Negated({self.inner!r}, mask={self.mask.astype(int).tolist()})"


class Pair(Factor):
    """Pairwise factor over two variables.

    ``mode="coupling"``: one additional score ``eta12`` on ``x1 * x2``.
    ``mode="joint"``: four additional scores on the joint indicators
    ``(FF, FT, TF, TT)``.
    """

    kind = "pair"
    closed_form = True

    def __init__(self, mode: str = "coupling"):
        if mode not in ("coupling", "joint"):
            raise GraphError(f"pair: unknown mode {mode!r}")
        self.mode = mode

    def n_additional(self, d):
        return 1 if self.mode == "coupling" else 4

    def validate(self, d, eta_n):
        if d != 2:
            raise GraphError(f"pair: needs exactly 2 variables, got {d}")
        super().validate(d, eta_n)

    def structures(self, d):
        M = np.array([[0, 0], [0, 1], [1, 0], [1, 1]], dtype=float)
        N = M[:, :1] * M[:, 1:] if self.mode == "coupling" else np.eye(4)
        return M, N

    def reduced_scores(self, eta_m, eta_n, delta):
        e1, e2 = float(eta_m[0]), float(eta_m[1])
        if self.mode == "coupling":
            return e1, e2, float(eta_n[0])
        ff, ft, tf, tt = (float(x) for x in eta_n)
        return e1 + delta[0] * (tf - ff), e2 + delta[1] * (ft - ff), ff - ft - tf + tt

    def solve_closed(self, eta_m, eta_n, delta):
        d1, d2 = float(delta[0]), float(delta[1])
        e1, e2, e12 = self.reduced_scores(eta_m, eta_n, (d1, d2))
        mu1, mu2, mu12, cert = cf.solve_pair(e1, e2, e12, d1, d2)
        if self.mode == "coupling":
            nu = np.array([mu12])
        else:
            a, b = d1 * mu1, d2 * mu2
            nu = np.array([1.0 + mu12 - a - b, b - mu12, a - mu12, mu12])
        return LocalSolution(np.array([mu1, mu2]), nu, cert)

    def jvp_closed(self, sol, d):
        g1, g2, g12 = cf.jvp_closed_form(sol.backend, d, transpose=True)
        if self.mode == "coupling":
            return np.array([g1, g2]), np.array([g12])
        d1, d2 = sol.backend.delta
        dn = np.array([-d1 * g1 - d2 * g2 + g12, d2 * g2 - g12, d1 * g1 - g12, g12])
        return np.array([g1, g2]), dn

    def gold_additionals(self, m):
        if len(m) != 2 or not _is_binary(m):
            raise ValueError(f"pair: gold {np.asarray(m).tolist()} must be two binary values")
        a, b = (int(round(x)) for x in m)
        if self.mode == "coupling":
            return np.array([float(a * b)])
        out = np.zeros(4)
        out[2 * a + b] = 1.0
        return out

    def __repr__(self):
        return f"Pair(mode={self.mode!r})"


class Sequence(Factor):
    """Linear chain over ``L`` positions with ``S`` states each; variables are
    the position-major one-hot grid, additionals the transition indicators."""

    kind = "sequence"

    def __init__(self, states: int):
        if int(states) != states or states < 1:
            raise GraphError("sequence: states must be a positive integer")
        self.states = int(states)

    def length(self, d):
        if d % self.states:
            raise GraphError(f"sequence: {d} variables is not a multiple of {self.states} states")
        return d // self.states

    def n_additional(self, d):
        return max(self.length(d) - 1, 0) * self.states ** 2

    def structures(self, d):
        L, S = self.length(d), self.states
        if L * np.log2(max(S, 2)) > MAX_ENUMERATION_BITS:
            raise GraphError("sequence: too many paths to enumerate")
        M, N = [], []
        for path in itertools.product(range(S), repeat=L):
            m = np.zeros((L, S))
            m[np.arange(L), path] = 1.0
            n = np.zeros((max(L - 1, 0), S, S))
            for t in range(L - 1):
                n[t, path[t], path[t + 1]] = 1.0
            M.append(m.ravel())
            N.append(n.ravel())
        return np.array(M), np.array(N).reshape(len(M), -1)

    def oracle(self, d):
        L, S = self.length(d), self.states

        def call(eta_m, eta_n):
            T = np.asarray(eta_n, dtype=float).reshape(max(L - 1, 0), S, S)
            return map_viterbi(np.asarray(eta_m, dtype=float).reshape(L, S), T)

        return call

    def gold_additionals(self, m):
        L, S = self.length(len(m)), self.states
        grid = np.asarray(m, dtype=float).reshape(L, S)
        if not (_is_binary(grid) and np.allclose(grid.sum(axis=1), 1)):
            raise ValueError("sequence: gold must select exactly one state per position")
        path = grid.argmax(axis=1)
        n = np.zeros((max(L - 1, 0), S, S))
        for t in range(L - 1):
            n[t, path[t], path[t + 1]] = 1.0
        return n.ravel()

    def __repr__(self):
        return f"Sequence(states={self.states})"


def _square_side(d, kind):
    n = int(round(np.sqrt(d)))
    if n * n != d:
        raise GraphError(f"{kind}: variable count {d} is not a perfect square")
    return n


def _is_arborescence(heads: dict, m: int) -> bool:
    for start in range(1, m + 1):
        seen, v = set(), start
        while v != 0:
            if v in seen or v not in heads:
                return False
            seen.add(v)
            v = heads[v]
    return True


class Tree(Factor):
    """Non-projective dependency tree over ``m`` words; variables follow
    :func:`structura.oracles.arc_list`."""

    kind = "tree"

    def __init__(self, single_root: bool = False):
        self.single_root = bool(single_root)

    def validate(self, d, eta_n):
        _square_side(d, self.kind)
        super().validate(d, eta_n)

    def grid(self, eta_m, m):
        A = np.zeros((m + 1, m))
        for k, (h, dep) in enumerate(arc_list(m)):
            A[h, dep - 1] = eta_m[k]
        return A

    def oracle(self, d):
        m = _square_side(d, self.kind)

        def call(eta_m, eta_n):
            return map_arborescence(self.grid(eta_m, m), single_root=self.single_root)

        return call

    def structures(self, d):
        m = _square_side(d, self.kind)
        arcs = {a: k for k, a in enumerate(arc_list(m))}
        rows = []
        choices = [[h for h in range(m + 1) if h != dep] for dep in range(1, m + 1)]
        for heads in itertools.product(*choices):
            hd = {dep: h for dep, h in zip(range(1, m + 1), heads)}
            if not _is_arborescence(hd, m):
                continue
            if self.single_root and sum(h == 0 for h in heads) != 1:
                continue
            v = np.zeros(d)
            for dep, h in hd.items():
                v[arcs[(h, dep)]] = 1.0
            rows.append(v)
        M = np.array(rows)
        return M, np.zeros((len(M), 0))

    def gold_additionals(self, m_vec):
        m = _square_side(len(m_vec), self.kind)
        if not _is_binary(m_vec):
            raise ValueError("tree: gold must be binary")
        heads = {}
        for k, (h, dep) in enumerate(arc_list(m)):
            if m_vec[k] > 0.5:
                if dep in heads:
                    raise ValueError(f"tree: word {dep} has two heads")
                heads[dep] = h
        if len(heads) != m or not _is_arborescence(heads, m):
            raise ValueError("tree: gold arcs do not form an arborescence")
        if self.single_root and sum(h == 0 for h in heads.values()) != 1:
            raise ValueError("tree: gold must have a single root child")
        return np.zeros(0)

    def __repr__(self):
        return f"Tree(single_root={self.single_root})"


class Assignment(Factor):
    """Perfect matching on an ``n x n`` grid (row-major variables)."""

    kind = "assignment"

    def validate(self, d, eta_n):
        _square_side(d, self.kind)
        super().validate(d, eta_n)

    def oracle(self, d):
        n = _square_side(d, self.kind)

        def call(eta_m, eta_n):
            return map_assignment(np.asarray(eta_m, dtype=float).reshape(n, n))

        return call

    def structures(self, d):
        n = _square_side(d, self.kind)
        rows = []
        for perm in itertools.permutations(range(n)):
            v = np.zeros((n, n))
            v[np.arange(n), perm] = 1.0
            rows.append(v.ravel())
        M = np.array(rows)
        return M, np.zeros((len(M), 0))

    def gold_additionals(self, m):
        n = _square_side(len(m), self.kind)
        grid = np.asarray(m, dtype=float).reshape(n, n)
        if not (_is_binary(grid) and np.allclose(grid.sum(0), 1) and np.allclose(grid.sum(1), 1)):
            raise ValueError("assignment: gold must be a permutation matrix")
        return np.zeros(0)


class Dense(Factor):
    """Explicit structure list (rows of ``M``) with optional additionals."""

    kind = "dense"

    def __init__(self, structures, additionals=None):
        self.M = np.atleast_2d(np.asarray(structures, dtype=float))
        if self.M.size == 0:
            raise GraphError("dense: empty structure list")
        if additionals is None:
            self.N = np.zeros((self.M.shape[0], 0))
        else:
            self.N = np.asarray(additionals, dtype=float).reshape(self.M.shape[0], -1)
        if not (np.all(np.isfinite(self.M)) and np.all(np.isfinite(self.N))):
            raise GraphError("dense: structures must be finite")

    def n_additional(self, d):
        return self.N.shape[1]

    def validate(self, d, eta_n):
        if self.M.shape[1] != d:
            raise GraphError(f"dense: structures have length {self.M.shape[1]} for {d} variables")
        super().validate(d, eta_n)

    def structures(self, d):
        return self.M, self.N

    def __repr__(self):
        return f"Dense({self.M.shape[0]} structures)"


def solve_local(factor: Factor, eta_m, eta_n, delta, cfg: SparseMapConfig | None = None,
                warm: LocalSolution | None = None, force_generic: bool = False) -> LocalSolution:
    """Solve one local subproblem, dispatching to the closed form when available."""
    if factor.closed_form and not force_generic:
        return factor.solve_closed(eta_m, eta_n, delta)
    cfg = cfg or SparseMapConfig()
    state = None
    if warm is not None and isinstance(warm.backend, SparseMapSolution):
        state = warm.backend.state
    run_cfg = SparseMapConfig(cfg.max_iterations, cfg.support_tolerance, state)
    sol = solve_sparsemap(factor.oracle(len(eta_m)), eta_m, eta_n, delta, run_cfg)
    return LocalSolution(sol.mu, sol.nu, sol)


def local_jvp(factor: Factor, sol: LocalSolution, d) -> tuple[np.ndarray, np.ndarray]:
    """``(J_M^T d, J_N^T d)`` for a local solution."""
    if isinstance(sol.backend, SparseMapSolution):
        return jvp_sparsemap(sol.backend, d)
    return factor.jvp_closed(sol, d)


FACTOR_KINDS = {
    cls.kind: cls
    for cls in (Xor, Or, AtMostOne, Budget, Knapsack, OrOut, Negated, Pair, Sequence, Tree,
                Assignment, Dense)
}
