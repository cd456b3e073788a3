import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hortrace.domains import (Box, DomainError, DomainSpec, ScalarField, admissible_delta, bump,
                              modulated_bump, test_corpus as make_corpus, time_product)
from hortrace.expr import parse


def test_box_basics():
    B = Box([0.0, -1.0], [2.0, 1.0])
    assert B.dim == 2 and B.volume == 4.0 and B.inradius == 1.0
    assert np.array_equal(B.center, [1.0, 0.0])
    assert B.contains([[0.0, 0.0], [2.5, 0.0]]).tolist() == [True, False]
    assert not B.contains([0.0, 0.0], strict=True)[0]
    assert B.intersect(Box([3.0, 0.0], [4.0, 1.0])) is None
    assert B.hull(Box([3.0, 0.0], [4.0, 1.0])) == Box([0.0, -1.0], [4.0, 1.0])
    assert B.times(Box([0.0], [1.0])).dim == 3
    assert repr(B) == "Box([0, 2] x [-1, 1])"


def test_empty_box_rejected():
    with pytest.raises(DomainError):
        Box([0.0], [0.0])


def test_midpoint_grid_integrates_polynomial():
    B = Box([0.0, 0.0], [1.0, 2.0])
    pts, w = B.midpoints(20)
    assert pts.shape == (400, 2) and w == pytest.approx(0.005)
    assert np.sum(pts[:, 0] * pts[:, 1]) * w == pytest.approx(1.0)


def test_boundary_sample_on_faces():
    pts = Box.cube(-1, 1, 3).boundary_sample(5)
    assert len(pts) == 5 ** 3 - 3 ** 3
    assert np.all(np.max(np.abs(pts), axis=1) == 1.0)


def test_domain_nesting_enforced():
    with pytest.raises(DomainError):
        DomainSpec.default(2, V1=Box.cube(-1, 1, 2))
    with pytest.raises(DomainError):
        DomainSpec.default(2, V2=Box.cube(-0.7, 0.7, 2))
    with pytest.raises(DomainError):
        DomainSpec.default(2, delta=0.0)
    spec = DomainSpec.default(2)
    assert spec.U.dim == 3 and spec.U.hi[-1] == spec.epsilon


def test_bump_values_and_support():
    f = bump([0.0, 0.0], 0.5)
    assert f([0.0, 0.0]) == 1.0
    assert f([0.5, 0.0]) == 0.0 and f([0.6, 0.0]) == 0.0
    r = 0.25 / 0.5
    assert f([0.25, 0.0]) == pytest.approx(np.exp(1 - 1 / (1 - r ** 2)))
    assert f.support == Box([-0.5, -0.5], [0.5, 0.5])


@pytest.mark.parametrize("make", [lambda: bump([0.1, -0.2], 0.3),
                                  lambda: modulated_bump([0.1, -0.2], 0.3, axis=1)])
def test_gradient_matches_finite_difference(make):
    f = make()
    X = np.random.default_rng(3).uniform(-0.3, 0.3, (40, 2))
    h = 1e-6
    fd = np.column_stack([(f(X + h * e) - f(X - h * e)) / (2 * h) for e in np.eye(2)])
    assert np.allclose(f.gradient(X), fd, atol=1e-6)


def test_modulated_bump_bounded():
    f = modulated_bump([0.0, 0.0], 0.2)
    X = np.random.default_rng(0).uniform(-0.3, 0.3, (2000, 2))
    assert np.max(np.abs(f(X))) <= 1.0


def test_scalar_field_algebra():
    f = bump([0.0], 0.5)
    g = f.scaled(3.0) + ScalarField.constant(1.0, 1, support=Box([0.0], [1.0]))
    assert g([0.0]) == pytest.approx(4.0)
    assert g.support == Box([-0.5], [1.0]) and g.sup_norm == 4.0
    with pytest.raises(ValueError):
        f([0.0, 0.0])


def test_from_expression_gradient():
    f = ScalarField.from_expression(parse("x1^2 * x2", 2))
    assert np.allclose(f.gradient([[1.0, 2.0]]), [[4.0, 1.0]])


def test_time_product():
    psi = bump([0.0, 0.0], 0.5)
    rho = bump([0.0], 0.2)
    phi = time_product(psi, rho)
    assert phi.dim == 3 and phi([0.0, 0.0, 0.0]) == 1.0
    assert phi.support == Box([-0.5, -0.5, -0.2], [0.5, 0.5, 0.2])
    X = np.array([[0.1, 0.1, 0.05]])
    assert np.allclose(phi.gradient(X)[0, :2], psi.gradient(X[:, :2])[0] * rho(X[:, 2:]))


@pytest.mark.parametrize("count", [1, 4, 10])
def test_corpus_inside_V2(spec3, count):
    funcs = make_corpus(spec3, count)
    assert len(funcs) == count
    assert [f.meta["index"] for f in funcs] == list(range(count))
    for f in funcs:
        assert spec3.V2.contains_box(f.support)


def test_corpus_is_deterministic(spec3):
    a, b = make_corpus(spec3, 7), make_corpus(spec3, 7)
    X = np.random.default_rng(0).uniform(-0.4, 0.4, (50, 3))
    assert all(np.array_equal(f(X), g(X)) for f, g in zip(a, b))


def test_admissible_delta_translation(heisenberg):
    # X1 moves x1 at unit speed: from [-0.6, 0.6] inside [-1, 1] the limit is 0.4
    V1, V = Box.cube(-0.6, 0.6, 3), Box.cube(-1, 1, 3)
    d = admissible_delta(heisenberg, V1, V, 1.0, grid_res=5, safety=1.0)
    assert d == pytest.approx(0.4, abs=2e-3) and d <= 0.4
    assert admissible_delta(heisenberg, V1, V, 0.2, grid_res=5) == pytest.approx(0.18)


@settings(max_examples=25, deadline=None)
@given(lo=st.lists(st.floats(-5, 5), min_size=2, max_size=2),
       w=st.lists(st.floats(0.1, 3), min_size=2, max_size=2),
       m=st.floats(0.01, 1))
def test_expand_and_contains(lo, w, m):
    B = Box(lo, np.add(lo, w))
    E = B.expand(m)
    assert E.contains_box(B, strict=True)
    assert E.intersect(B) == B
