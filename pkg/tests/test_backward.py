import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from _graphs import random_graph, random_scores
from structura import factors as fk
from structura.activeset import SparseMapConfig
from structura.admm import AdmmConfig, solve
from structura.backward import BackwardConfig, jvp, materialize_jacobian
from structura.graph import FactorGraph

TIGHT = AdmmConfig(gamma=1.0, max_outer=5000, eps_primal=1e-12, eps_dual=1e-12,
                   inner=SparseMapConfig(max_iterations=200))
BACK = BackwardConfig(max_iterations=100000, eps=1e-14)


def _xor3():
    g = FactorGraph(3)
    g.add(fk.Xor(), [0, 1, 2])
    return g.finalize()


def test_xor_example():
    sol = solve(_xor3(), [0.5, 0.3, 0.1], cfg=AdmmConfig(gamma=0.0))
    res = jvp(sol, [1.0, 0.0, 0.0])
    np.testing.assert_allclose(res.d_m, [2 / 3, -1 / 3, -1 / 3], atol=1e-12)
    assert res.converged
    np.testing.assert_allclose(jvp(sol, np.zeros(3)).d_m, 0)


def test_materialized_xor_jacobian():
    sol = solve(_xor3(), [0.5, 0.3, 0.1], cfg=AdmmConfig(gamma=0.0))
    np.testing.assert_allclose(materialize_jacobian(sol), np.eye(3) - 1 / 3, atol=1e-12)


def test_vertex_solution_has_zero_jacobian():
    sol = solve(_xor3(), [10.0, 0.0, 0.0], cfg=AdmmConfig(gamma=0.0))
    np.testing.assert_allclose(materialize_jacobian(sol), 0, atol=1e-15)


def test_direction_length_checked():
    sol = solve(_xor3(), [0.5, 0.3, 0.1], cfg=AdmmConfig(gamma=0.0))
    with pytest.raises(ValueError, match="length 3"):
        jvp(sol, [1.0, 0.0])


def test_materialize_size_guard():
    g = FactorGraph(65)
    g.add(fk.Or(), range(65))
    sol = solve(g.finalize(), np.zeros(65), cfg=AdmmConfig(gamma=0.0))
    with pytest.raises(ValueError, match="refusing"):
        materialize_jacobian(sol)


def test_iteration_cap_reported():
    g = FactorGraph(3)
    g.add(fk.Xor(), [0, 1])
    g.add(fk.Or(), [1, 2])
    g.add(fk.Budget(1), [0, 2])
    sol = solve(g.finalize(), [0.2, 0.3, 0.1], cfg=TIGHT)
    res = jvp(sol, [1.0, -1.0, 0.5], BackwardConfig(max_iterations=1, eps=1e-300))
    assert not res.converged and res.iterations == 1


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_jacobian_is_symmetric_contraction(seed):
    rng = np.random.default_rng(seed)
    g = random_graph(rng, max_vars=6)
    eta, eta_n = random_scores(rng, g)
    sol = solve(g, eta, eta_n, TIGHT)
    J = materialize_jacobian(sol, BACK)
    np.testing.assert_allclose(J, J.T, atol=1e-8)
    assert np.linalg.norm(J, 2) <= 1 + 1e-8
    np.testing.assert_allclose(J @ J, J, atol=1e-6)
