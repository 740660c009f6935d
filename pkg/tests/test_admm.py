import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from _graphs import assignment_graphs, random_graph, random_scores
from structura import factors as fk
from structura.activeset import SparseMapConfig
from structura.admm import AdmmConfig, SolveError, admm_step, init_state, residuals, solve
from structura.graph import FactorGraph, GraphError

TIGHT = AdmmConfig(gamma=1.0, max_outer=5000, eps_primal=1e-10, eps_dual=1e-10,
                   inner=SparseMapConfig(max_iterations=200))


def _graph(*attachments, n):
    g = FactorGraph(n)
    for factor, vs in attachments:
        g.add(factor, vs)
    return g.finalize()


def test_single_xor_with_zero_gamma():
    g = _graph((fk.Xor(), [0, 1, 2]), n=3)
    sol = solve(g, [0.5, 0.3, 0.1], cfg=AdmmConfig(gamma=0.0))
    np.testing.assert_allclose(sol.mu, [8 / 15, 1 / 3, 2 / 15], atol=1e-12)
    assert sol.status == "converged"
    assert sol.iterations == 1


def test_zero_gamma_status_comes_from_primal_test():
    g = _graph((fk.Xor(), [0, 1]), (fk.Budget(1), [0, 1]), n=2)
    agree = solve(g, [2.0, -1.0], cfg=AdmmConfig(gamma=0.0))
    assert agree.status == "converged" and agree.iterations == 1
    np.testing.assert_allclose(agree.mu, [1, 0])
    # the factors disagree (xor wants mass 1, budget keeps the clipped scores)
    split = solve(g, [0.2, 0.1], cfg=AdmmConfig(gamma=0.0))
    assert split.status == "max_iter" and split.iterations == 1
    assert split.residual_primal > 0.1


def test_fine_matching_recovers_identity():
    _, fine = assignment_graphs(2)
    sol = solve(fine, [1.0, 0.0, 0.0, 1.0], cfg=TIGHT)
    assert sol.converged
    np.testing.assert_allclose(sol.mu, [1, 0, 0, 1], atol=1e-6)


def test_xor_with_budget():
    g = _graph((fk.Xor(), [0, 1]), (fk.Budget(1), [0, 1]), n=2)
    sol = solve(g, [0.9, 0.8], cfg=TIGHT)
    assert sol.converged
    np.testing.assert_allclose(sol.mu, [0.55, 0.45], atol=1e-6)


def test_coarse_and_fine_matching_agree():
    coarse, fine = assignment_graphs(3)
    eta = np.random.default_rng(3).normal(size=9)
    a = solve(coarse, eta, cfg=TIGHT)
    b = solve(fine, eta, cfg=TIGHT)
    np.testing.assert_allclose(a.mu, b.mu, atol=1e-5)


def test_residuals_recomputed_from_state():
    g = _graph((fk.Xor(), [0, 1]), (fk.Or(), [1, 2]), n=3)
    state = init_state(g, [0.3, -0.2, 0.5], cfg=AdmmConfig(gamma=0.5))
    assert residuals(state) == (np.inf, np.inf)
    for _ in range(5):
        state = admm_step(state)
        primal, dual = residuals(state)
        assert primal == pytest.approx(state.residual_primal, abs=1e-15)
        assert dual == pytest.approx(state.residual_dual, abs=1e-15)


def test_callback_sees_every_iteration():
    g = _graph((fk.Xor(), [0, 1]), (fk.Or(), [1, 2]), n=3)
    seen = []
    sol = solve(g, [0.3, -0.2, 0.5], cfg=AdmmConfig(gamma=1.0, max_outer=7, eps_primal=1e-15, eps_dual=1e-15),
                callback=lambda s: seen.append(s.iteration))
    assert seen == list(range(1, sol.iterations + 1))
    assert sol.status == "max_iter" and sol.iterations == 7


@pytest.mark.parametrize("threads", [2, 4])
def test_threads_do_not_change_result(threads):
    rng = np.random.default_rng(11)
    g = random_graph(rng, max_factors=4)
    eta, eta_n = random_scores(rng, g)
    one = solve(g, eta, eta_n, AdmmConfig(gamma=1.0, threads=1))
    many = solve(g, eta, eta_n, AdmmConfig(gamma=1.0, threads=threads))
    assert one.mu.tobytes() == many.mu.tobytes()
    assert one.iterations == many.iterations


def test_rejects_non_finite_scores():
    g = _graph((fk.Xor(), [0, 1]), n=2)
    with pytest.raises(GraphError, match="finite"):
        solve(g, [np.nan, 0.0])
    with pytest.raises(GraphError, match="expected 2"):
        solve(g, [0.0, 0.0, 1.0])


class _Broken(fk.Xor):
    kind = "broken"

    def solve_closed(self, eta_m, eta_n, delta):
        raise RuntimeError("boom")


def test_factor_failure_names_factor():
    g = _graph((fk.Xor(), [0, 1]), (_Broken(), [1, 2]), n=3)
    with pytest.raises(SolveError, match=r"factor 1 \(broken\): boom"):
        solve(g, [0.1, 0.2, 0.3])


def test_config_validation():
    for bad in (dict(gamma=-1.0), dict(max_outer=0), dict(eps_primal=0.0), dict(backward_power_iterations=0)):
        with pytest.raises(ValueError):
            AdmmConfig(**bad)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_solution_invariants(seed):
    rng = np.random.default_rng(seed)
    g = random_graph(rng)
    eta, eta_n = random_scores(rng, g)
    sol = solve(g, eta, eta_n, AdmmConfig(gamma=1.0))
    assert np.all(sol.mu >= -1e-9) and np.all(sol.mu <= 1 + 1e-9)
    # the dual iterate stays in the kernel of gather
    np.testing.assert_allclose(g.gather_flat(sol.lam), 0, atol=1e-10)
