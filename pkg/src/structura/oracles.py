"""MAP oracles returning the highest-scoring structure of a factor.

Every oracle breaks ties towards the lexicographically smallest structure in
its canonical order:

* enumeration: lowest list index;
* Viterbi: smallest state sequence ``(s_0, ..., s_{L-1})``;
* arborescence: smallest head sequence ``(head(1), ..., head(m))``;
* assignment: smallest column sequence ``(col(0), ..., col(n-1))``.

These orders coincide with ``itertools.product`` / ``itertools.permutations``
enumeration, which is how the tests build exhaustive structure lists.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment

# finite stand-in for -inf padding
NEG_SENTINEL = -1e18


@dataclass
class Structure:
    """A structure ``a_y = [m_y, n_y]`` with its score."""

    m: np.ndarray
    n: np.ndarray = field(default_factory=lambda: np.zeros(0))
    score: float = 0.0

    def __post_init__(self):
        self.m = np.asarray(self.m, dtype=float).ravel()
        self.n = np.asarray(self.n, dtype=float).ravel()

    @property
    def key(self) -> tuple[bytes, bytes]:
        return self.m.tobytes(), self.n.tobytes()


def structure_score(m, n, eta_m, eta_n) -> float:
    score = float(np.dot(m, eta_m))
    if len(n):
        score += float(np.dot(n, eta_n))
    return score


class EnumerationOracle:
    """Argmax over an explicit structure list, stored as row matrices."""

    def __init__(self, M: np.ndarray, N: np.ndarray | None = None):
        self.M = np.atleast_2d(np.asarray(M, dtype=float))
        if self.M.shape[0] == 0:
            raise ValueError("structure list is empty")
        if N is None:
            N = np.zeros((self.M.shape[0], 0))
        self.N = np.asarray(N, dtype=float).reshape(self.M.shape[0], -1)

    @classmethod
    def from_structures(cls, structures: Sequence[Structure]) -> "EnumerationOracle":
        if len(structures) == 0:
            raise ValueError("structure list is empty")
        M = np.stack([s.m for s in structures])
        N = np.stack([s.n for s in structures])
        return cls(M, N)

    def __len__(self):
        return self.M.shape[0]

    def scores(self, eta_m, eta_n=None) -> np.ndarray:
        s = self.M @ np.asarray(eta_m, dtype=float)
        if self.N.shape[1]:
            s = s + self.N @ np.asarray(eta_n, dtype=float)
        return s

    def __call__(self, eta_m, eta_n=None) -> Structure:
        k = int(np.argmax(self.scores(eta_m, eta_n)))
        m, n = self.M[k], self.N[k]
        return Structure(m.copy(), n.copy(), structure_score(m, n, eta_m, eta_n))


def map_enumerate(structures: Sequence[Structure], eta_m, eta_n=None) -> Structure:
    return EnumerationOracle.from_structures(structures)(eta_m, eta_n)


# Viterbi


def _transition_grid(transition, L: int, S: int) -> np.ndarray:
    T = np.asarray(transition, dtype=float)
    if T.shape == (S, S):
        return np.broadcast_to(T, (max(L - 1, 0), S, S))
    if T.shape == (max(L - 1, 0), S, S):
        return T
    raise ValueError(f"transition grid must be {S}x{S} or {L - 1}x{S}x{S}, got {T.shape}")


def map_viterbi(unary, transition) -> Structure:
    """Best state path of a linear chain.

    ``unary`` is ``L x S``; ``transition`` is ``S x S`` (shared across
    positions) or ``(L-1) x S x S``. The returned ``m`` is the one-hot path
    (length ``L*S``) and ``n`` the transition indicators (length
    ``(L-1)*S*S``, position-major).
    """
    U = np.asarray(unary, dtype=float)
    if U.ndim != 2 or U.size == 0:
        raise ValueError("unary scores must be a non-empty L x S grid")
    L, S = U.shape
    T = _transition_grid(transition, L, S)

    # V[t, s]: best score of the suffix starting in state s at position t
    V = np.empty((L, S))
    V[L - 1] = U[L - 1]
    for t in range(L - 2, -1, -1):
        V[t] = U[t] + np.max(T[t] + V[t + 1][None, :], axis=1)

    path = [int(np.argmax(V[0]))]
    for t in range(L - 1):
        path.append(int(np.argmax(T[t][path[-1]] + V[t + 1])))

    m = np.zeros((L, S))
    m[np.arange(L), path] = 1.0
    n = np.zeros((max(L - 1, 0), S, S))
    for t in range(L - 1):
        n[t, path[t], path[t + 1]] = 1.0
    eta_n = T.ravel() if L > 1 else np.zeros(0)
    return Structure(m.ravel(), n.ravel(), structure_score(m.ravel(), n.ravel(), U.ravel(), eta_n))


# Arborescence


def arc_list(m: int) -> list[tuple[int, int]]:
    """Variable order of a tree factor over ``m`` words: ``(head, modifier)``
    pairs, heads ``0..m`` (0 is the root), modifiers ``1..m``, no self arcs."""
    return [(h, d) for h in range(m + 1) for d in range(1, m + 1) if h != d]


def _find_cycle(heads: np.ndarray) -> list[int] | None:
    n = len(heads)
    color = np.zeros(n, dtype=np.int8)
    color[0] = 2
    for start in range(1, n):
        if color[start]:
            continue
        path = []
        v = start
        while color[v] == 0:
            color[v] = 1
            path.append(v)
            v = heads[v]
        if color[v] == 1:
            return path[path.index(v):]
        for u in path:
            color[u] = 2
    return None


def _chu_liu_edmonds(W: np.ndarray) -> np.ndarray:
    """Maximum arborescence rooted at node 0. ``W[h, d]`` scores arc h->d;
    -inf marks forbidden arcs. Returns heads with ``heads[0] = -1``."""
    n = W.shape[0]
    heads = np.argmax(W, axis=0)
    heads[0] = -1
    cycle = _find_cycle(heads)
    if cycle is None:
        return heads

    in_cycle = np.zeros(n, dtype=bool)
    in_cycle[cycle] = True
    rest = [v for v in range(n) if not in_cycle[v]]
    c = len(rest)
    pos = {v: i for i, v in enumerate(rest)}
    cyc = np.array(cycle)

    W2 = np.full((c + 1, c + 1), -np.inf)
    W2[:c, :c] = W[np.ix_(rest, rest)]
    # arcs entering the cycle: score relative to the displaced cycle arc
    gain = W[np.ix_(rest, cyc)] - W[heads[cyc], cyc][None, :]
    enter = np.argmax(gain, axis=1)
    W2[:c, c] = gain[np.arange(c), enter]
    # arcs leaving the cycle: best source inside
    out = W[np.ix_(cyc, rest)]
    leave = np.argmax(out, axis=0)
    W2[c, :c] = out[leave, np.arange(c)]
    W2[:, 0] = -np.inf

    sub = _chu_liu_edmonds(W2)
    new_heads = heads.copy()
    for v in rest:
        if v == 0:
            continue
        h = sub[pos[v]]
        new_heads[v] = cyc[leave[pos[v]]] if h == c else rest[h]
    h = sub[c]
    new_heads[cyc[enter[h]]] = rest[h]
    return new_heads


def _tree_value(W: np.ndarray, heads: np.ndarray) -> float:
    d = np.arange(1, W.shape[0])
    return float(np.sum(W[heads[d], d]))


def _best_tree(W: np.ndarray, single_root: bool) -> tuple[np.ndarray, float]:
    if not single_root:
        heads = _chu_liu_edmonds(W)
        return heads, _tree_value(W, heads)
    best, best_val = None, -np.inf
    for r in range(1, W.shape[0]):
        if not np.isfinite(W[0, r]):
            continue
        Wr = W.copy()
        Wr[0, :] = -np.inf
        Wr[0, r] = W[0, r]
        heads = _chu_liu_edmonds(Wr)
        val = _tree_value(Wr, heads)
        if val > best_val:
            best, best_val = heads, val
    return best, best_val


def _tie_tol(value: float) -> float:
    return 1e-12 * max(1.0, abs(value))


def map_arborescence(arc_scores, single_root: bool = False) -> Structure:
    """Maximum spanning arborescence.

    ``arc_scores`` is an ``(m+1) x m`` grid: row 0 holds root arcs, row ``h``
    (1-based word) holds arcs from word ``h``; column ``j`` is word ``j+1``.
    Self-arc entries are ignored. ``m`` is returned over :func:`arc_list`.
    """
    A = np.asarray(arc_scores, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1] + 1 or A.shape[1] < 1:
        raise ValueError(f"arc scores must be an (m+1) x m grid, got {A.shape}")
    m = A.shape[1]
    W = np.full((m + 1, m + 1), -np.inf)
    W[:, 1:] = A
    W[np.arange(1, m + 1), np.arange(1, m + 1)] = -np.inf

    heads, value = _best_tree(W, single_root)
    if heads is None:
        raise ValueError("no admissible root arc")
    # walk modifiers in order, moving each to the smallest head that keeps
    # the optimum; this yields the lexicographically smallest optimal tree
    for d in range(1, m + 1):
        col_max = np.max(W[:, 1:], axis=0)
        for h in range(heads[d]):
            if not np.isfinite(W[h, d]):
                continue
            bound = float(np.sum(col_max)) - col_max[d - 1] + W[h, d]
            if bound < value - _tie_tol(value):
                continue
            Wt = W.copy()
            Wt[:, d] = -np.inf
            Wt[h, d] = W[h, d]
            cand, cval = _best_tree(Wt, single_root)
            if cand is not None and cval >= value - _tie_tol(value):
                heads = cand
                break
        keep = W[heads[d], d]
        W[:, d] = -np.inf
        W[heads[d], d] = keep

    index = {arc: k for k, arc in enumerate(arc_list(m))}
    vec = np.zeros(m * m)
    for d in range(1, m + 1):
        vec[index[(int(heads[d]), d)]] = 1.0
    scores = np.array([A[h, d - 1] for h, d in arc_list(m)])
    return Structure(vec, np.zeros(0), structure_score(vec, [], scores, None))


# Assignment


def _lsa_value(S: np.ndarray) -> float:
    if S.size == 0:
        return 0.0
    r, c = linear_sum_assignment(S, maximize=True)
    return float(S[r, c].sum())


def map_assignment(scores) -> Structure:
    """Maximum-weight perfect matching of a square grid (Kuhn-Munkres via
    scipy). ``m`` is the row-major permutation matrix."""
    S = np.asarray(scores, dtype=float)
    if S.ndim != 2 or S.shape[0] != S.shape[1] or S.shape[0] == 0:
        raise ValueError(f"assignment scores must be a non-empty square grid, got {S.shape}")
    n = S.shape[0]
    rows, cols = linear_sum_assignment(S, maximize=True)
    col = np.empty(n, dtype=np.int64)
    col[rows] = cols
    value = float(S[np.arange(n), col].sum())

    free_cols = list(range(n))
    fixed = 0.0
    for i in range(n):
        rest_rows = list(range(i + 1, n))
        for c in free_cols:
            if c >= col[i]:
                break
            others = [k for k in free_cols if k != c]
            sub = S[np.ix_(rest_rows, others)]
            bound = fixed + S[i, c] + (float(sub.max(axis=1).sum()) if sub.size else 0.0)
            if bound < value - _tie_tol(value):
                continue
            cand = fixed + S[i, c] + _lsa_value(sub)
            if cand >= value - _tie_tol(value):
                r, cc = linear_sum_assignment(sub, maximize=True) if sub.size else ([], [])
                col[i] = c
                for rr, k in zip(r, cc):
                    col[rest_rows[rr]] = others[k]
                break
        fixed += S[i, col[i]]
        free_cols.remove(int(col[i]))

    m = np.zeros((n, n))
    m[np.arange(n), col] = 1.0
    return Structure(m.ravel(), np.zeros(0), structure_score(m.ravel(), [], S.ravel(), None))
