import numpy as np
import pytest

from structura import factors as fk
from structura.reference import (
    Polyhedron,
    box_polyhedron,
    brute_force_sparsemap,
    dykstra_projection,
    factor_polyhedron,
    finite_difference_jvp,
    pair_polyhedron,
    projected_gradient_qp,
)


def test_brute_force_xor():
    res = brute_force_sparsemap((np.eye(3), np.zeros((3, 0))), [0.5, 0.3, 0.1])
    np.testing.assert_allclose(res.mu, [8 / 15, 1 / 3, 2 / 15], atol=1e-12)
    np.testing.assert_allclose(res.p, res.mu, atol=1e-12)


def test_brute_force_guard():
    M = np.tile(np.eye(3), (7, 1))
    with pytest.raises(ValueError, match="20 structures"):
        brute_force_sparsemap((M, np.zeros((21, 0))), np.zeros(3))


def test_box_projection():
    x = projected_gradient_qp(box_polyhedron(np.ones(3)), [-0.3, 0.5, 1.7])
    np.testing.assert_allclose(x, [0, 0.5, 1], atol=1e-12)


def test_dykstra_on_simplex():
    poly = factor_polyhedron(fk.Xor(), np.ones(3))
    np.testing.assert_allclose(dykstra_projection(poly, [0.5, 0.3, 0.1]), [8 / 15, 1 / 3, 2 / 15], atol=1e-9)


def test_pair_with_flat_direction():
    x = projected_gradient_qp(pair_polyhedron(np.ones(2)), [0.2, 0.3, 0.5], curvature=[1.0, 1.0, 0.0])
    np.testing.assert_allclose(x, [0.5, 0.5, 0.5], atol=1e-7)


def test_orout_polyhedron():
    x = projected_gradient_qp(factor_polyhedron(fk.OrOut(), np.ones(3)), [0.3, 0.4, 0.8])
    np.testing.assert_allclose(x, [1 / 3, 1.3 / 3, 2.3 / 3], atol=1e-9)


def test_negated_polyhedron_flips_coordinates():
    poly = factor_polyhedron(fk.Negated(fk.Or(), [True, True]), np.ones(2))
    assert poly.contains([0.5, 0.5])
    assert not poly.contains([1.0, 1.0])
    assert poly.contains([0.0, 1.0])


def test_polyhedron_violation():
    poly = Polyhedron(2, np.zeros(2), np.ones(2), A_ub=[[1.0, 1.0]], b_ub=[1.0])
    assert poly.violation([0.5, 0.5]) == pytest.approx(0.0)
    assert poly.violation([1.0, 1.0]) == pytest.approx(1.0)
    assert poly.violation([-0.25, 0.0]) == pytest.approx(0.25)


def test_finite_difference_of_quadratic():
    f = lambda x: x**2  # noqa: E731
    got = finite_difference_jvp(f, [1.0, 2.0], [1.0, 0.0], [1.0, 1.0])
    assert got == pytest.approx(2.0)


def test_no_description_for_combinatorial_kinds():
    with pytest.raises(TypeError):
        factor_polyhedron(fk.Tree(), np.ones(4))
