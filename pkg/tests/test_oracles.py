import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from structura.oracles import (
    EnumerationOracle,
    Structure,
    arc_list,
    map_arborescence,
    map_assignment,
    map_enumerate,
    map_viterbi,
)


def _xor_structures(d):
    return [Structure(m) for m in np.eye(d)]


def test_enumerate_xor_picks_best():
    s = map_enumerate(_xor_structures(3), [0.5, 0.3, 0.1])
    np.testing.assert_array_equal(s.m, [1, 0, 0])
    assert s.score == pytest.approx(0.5)


def test_enumerate_sequence_with_additionals():
    # y = 011 over three binary positions, additionals flag adjacent (1, 1) pairs
    structures = []
    for bits in itertools.product([0, 1], repeat=3):
        n = [bits[0] * bits[1], bits[1] * bits[2]]
        structures.append(Structure(np.array(bits, dtype=float), np.array(n, dtype=float)))
    s = map_enumerate(structures, [-1.0, 1.0, 1.0], [0.0, 0.5])
    np.testing.assert_array_equal(s.m, [0, 1, 1])
    np.testing.assert_array_equal(s.n, [0, 1])


def test_enumerate_tie_goes_to_earlier():
    s = map_enumerate([Structure(np.array([1.0, 0.0])), Structure(np.array([0.0, 1.0]))], [0.2, 0.2])
    np.testing.assert_array_equal(s.m, [1, 0])


def test_enumeration_oracle_scores_include_additionals():
    oracle = EnumerationOracle(np.eye(2), np.array([[1.0], [0.0]]))
    np.testing.assert_allclose(oracle.scores([0.1, 0.5], [1.0]), [1.1, 0.5])


def test_viterbi_small_chain():
    s = map_viterbi([[1, 0], [0, 1]], [[0, 2], [0, 0]])
    np.testing.assert_array_equal(s.m, [1, 0, 0, 1])
    assert s.score == pytest.approx(4.0)
    np.testing.assert_array_equal(s.n, [0, 1, 0, 0])


def test_viterbi_all_zero_takes_lowest_states():
    s = map_viterbi(np.zeros((3, 3)), np.zeros((3, 3)))
    np.testing.assert_array_equal(s.m.reshape(3, 3).argmax(1), [0, 0, 0])


def test_viterbi_rejects_bad_transition():
    with pytest.raises(ValueError, match="transition"):
        map_viterbi(np.zeros((3, 2)), np.zeros((3, 3)))


def _chain_enumeration(L, S):
    out = []
    for path in itertools.product(range(S), repeat=L):
        m = np.zeros((L, S))
        m[np.arange(L), path] = 1
        n = np.zeros((max(L - 1, 0), S, S))
        for t in range(L - 1):
            n[t, path[t], path[t + 1]] = 1
        out.append(Structure(m.ravel(), n.ravel()))
    return out


@settings(max_examples=60, deadline=None)
@given(L=st.integers(1, 4), S=st.integers(1, 3), seed=st.integers(0, 2**32 - 1), ties=st.booleans())
def test_viterbi_matches_enumeration(L, S, seed, ties):
    rng = np.random.default_rng(seed)
    if ties:
        draw = lambda *shape: rng.integers(-1, 2, size=shape).astype(float)  # noqa: E731
    else:
        draw = lambda *shape: rng.normal(size=shape)  # noqa: E731
    U, T = draw(L, S), draw(max(L - 1, 0), S, S)
    got = map_viterbi(U, T)
    want = map_enumerate(_chain_enumeration(L, S), U.ravel(), T.ravel())
    np.testing.assert_array_equal(got.m, want.m)
    np.testing.assert_array_equal(got.n, want.n)
    assert got.score == pytest.approx(want.score)


def test_arc_list_order():
    assert arc_list(2) == [(0, 1), (0, 2), (1, 2), (2, 1)]
    assert len(arc_list(4)) == 16


def test_arborescence_single_word():
    s = map_arborescence([[0.3], [0.0]])
    np.testing.assert_array_equal(s.m, [1])


def test_arborescence_two_words():
    W = np.array([[0.5, 0.4], [0.0, 0.9], [0.1, 0.0]])  # rows: root, 1, 2; cols: words 1, 2
    s = map_arborescence(W)
    arcs = [a for a, x in zip(arc_list(2), s.m) if x]
    assert arcs == [(0, 1), (1, 2)]
    assert s.score == pytest.approx(1.4)


def _trees(m, single_root):
    out = []
    for heads in itertools.product(*[[h for h in range(m + 1) if h != d] for d in range(1, m + 1)]):
        # walk up from every word; a tree reaches the root without revisiting
        ok = True
        for d in range(1, m + 1):
            seen, cur = set(), d
            while cur != 0 and ok:
                if cur in seen:
                    ok = False
                seen.add(cur)
                cur = heads[cur - 1]
        if not ok or (single_root and heads.count(0) != 1):
            continue
        out.append(heads)
    return out


def _tree_vector(heads, m):
    idx = {a: k for k, a in enumerate(arc_list(m))}
    v = np.zeros(m * m)
    for d, h in enumerate(heads, start=1):
        v[idx[(h, d)]] = 1
    return v


@settings(max_examples=60, deadline=None)
@given(m=st.integers(1, 4), seed=st.integers(0, 2**32 - 1), ties=st.booleans(), single_root=st.booleans())
def test_arborescence_matches_enumeration(m, seed, ties, single_root):
    rng = np.random.default_rng(seed)
    W = rng.integers(-1, 2, size=(m + 1, m)).astype(float) if ties else rng.normal(size=(m + 1, m))
    flat = np.array([W[h, d - 1] for h, d in arc_list(m)])
    structures = [Structure(_tree_vector(h, m)) for h in _trees(m, single_root)]
    want = map_enumerate(structures, flat)
    got = map_arborescence(W, single_root=single_root)
    np.testing.assert_array_equal(got.m, want.m)
    assert got.score == pytest.approx(want.score)


def test_assignment_examples():
    np.testing.assert_array_equal(map_assignment([[1, 0], [0, 1]]).m, [1, 0, 0, 1])
    np.testing.assert_array_equal(map_assignment([[0, 1], [1, 0]]).m, [0, 1, 1, 0])
    s = map_assignment([[3, 1, 0], [1, 3, 1], [0, 1, 3]])
    np.testing.assert_array_equal(s.m.reshape(3, 3), np.eye(3))
    assert s.score == pytest.approx(9.0)


@settings(max_examples=60, deadline=None)
@given(n=st.integers(1, 4), seed=st.integers(0, 2**32 - 1), ties=st.booleans())
def test_assignment_matches_enumeration(n, seed, ties):
    rng = np.random.default_rng(seed)
    S = rng.integers(-1, 2, size=(n, n)).astype(float) if ties else rng.normal(size=(n, n))
    structures = []
    for perm in itertools.permutations(range(n)):
        v = np.zeros((n, n))
        v[np.arange(n), perm] = 1
        structures.append(Structure(v.ravel()))
    want = map_enumerate(structures, S.ravel())
    got = map_assignment(S)
    np.testing.assert_array_equal(got.m, want.m)
