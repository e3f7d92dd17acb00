import numpy as np
import pytest
from hypothesis import given, strategies as st

from cascadesr.poly import (Polynomial, add, compose_affine, evaluate, grad, lie_derivative,
                            monomials_up_to, mul)

N = 3
coef = st.floats(-5, 5, allow_nan=False).filter(lambda c: abs(c) > 1e-3)
mono = st.tuples(*[st.integers(0, 2)] * N)
polys = st.dictionaries(mono, coef, max_size=6).map(lambda d: Polynomial(N, d))
points = st.lists(st.floats(-2, 2, allow_nan=False), min_size=N, max_size=N)


def x(i, n=2):
    return Polynomial.var(n, i)


def direct_eval(p, pt):
    """Second evaluator: plain products, no cached powers."""
    total = 0.0
    for m, c in p.terms.items():
        term = c
        for a, v in zip(m, pt):
            for _ in range(a):
                term *= v
        total += term
    return total


def test_add_examples():
    x1, x2 = x(0), x(1)
    assert add(x1 * x1, 2 * x1 * x2) == Polynomial(2, {(2, 0): 1.0, (1, 1): 2.0})
    p = x1 * x1 + 3 * x2
    assert add(p, Polynomial.zero(2)) == p
    assert add(x1 * x1, -(x1 * x1)).terms == {}


def test_mul_examples():
    x1, x2 = x(0), x(1)
    assert mul(x1 + x2, x1 - x2) == x1 * x1 - x2 * x2
    p = x1 * x2 + 4
    assert mul(p, Polynomial.constant(2, 1.0)) == p
    assert (x1 ** 2 * x2).degree() == 3


def test_dimension_mismatch():
    with pytest.raises(ValueError):
        Polynomial.var(2, 0) + Polynomial.var(3, 0)
    with pytest.raises(ValueError):
        Polynomial.var(2, 0).eval([1.0])
    with pytest.raises(ValueError):
        Polynomial.var(2, 0).compose_affine(np.eye(3), np.zeros(3))


def test_eval_examples():
    x1, x2 = x(0), x(1)
    assert evaluate(x1 * x1 + 2 * x1 * x2, [1.0, 2.0]) == 5.0
    assert (x1 * x2 + x1 ** 3).eval([0.0, 0.0]) == 0.0


def test_prune_threshold():
    p = Polynomial(2, {(1, 0): 1e-15, (0, 1): 1.0})
    assert p.terms == {(0, 1): 1.0}


@given(polys, polys, st.lists(points, min_size=1, max_size=5))
def test_mul_matches_pointwise_product(a, b, pts):
    for pt in pts:
        assert np.isclose((a * b).eval(pt), a.eval(pt) * b.eval(pt), rtol=1e-10, atol=1e-9)


@given(polys, points)
def test_eval_matches_direct_sum(p, pt):
    assert abs(p.eval(pt) - direct_eval(p, pt)) <= 1e-12 * max(1.0, abs(direct_eval(p, pt)))
    assert np.isclose(p.eval_many(np.array([pt]))[0], p.eval(pt), rtol=1e-12, atol=1e-12)


@given(polys, polys, polys)
def test_ring_axioms(a, b, c):
    assert ((a + b) + c).allclose(a + (b + c))
    assert ((a * b) * c).allclose(a * (b * c), tol=1e-9)
    assert (a * (b + c)).allclose(a * b + a * c, tol=1e-9)
    assert (a + b).allclose(b + a)
    assert (a * b).allclose(b * a)


def test_grad_examples():
    x1, x2 = x(0), x(1)
    g = grad(x1 * x1 + 2 * x1 * x2)
    assert g[0] == 2 * x1 + 2 * x2
    assert g[1] == 2 * x1
    assert all(gi.is_zero() for gi in grad(Polynomial.constant(2, 3.0)))


def test_grad_matches_finite_differences():
    rng = np.random.default_rng(1)
    p = Polynomial(N, {tuple(rng.integers(0, 4, N)): rng.normal() for _ in range(12)})
    h = 1e-5
    G = p.grad()
    for pt in rng.uniform(-1, 1, (50, N)):
        for i in range(N):
            e = np.zeros(N)
            e[i] = h
            fd = (p.eval(pt + e) - p.eval(pt - e)) / (2 * h)
            exact = G[i].eval(pt)
            assert abs(fd - exact) <= 1e-6 * max(1.0, abs(exact))


@given(polys, polys)
def test_grad_is_linear(a, b):
    for ga, gb, gs in zip(a.grad(), b.grad(), (a + b).grad()):
        assert gs.allclose(ga + gb)


def test_compose_affine_examples():
    p = x(0) * x(0) + 3 * x(1)
    assert compose_affine(p, np.eye(2), np.zeros(2)) == p
    q = Polynomial.var(1, 0) ** 2
    r = compose_affine(q, np.array([[2.0]]), np.array([1.0]))
    assert r.allclose(Polynomial(1, {(2,): 4.0, (1,): 4.0, (0,): 1.0}))


@given(polys, st.integers(0, 2**31 - 1))
def test_compose_affine_commutes_with_eval(p, seed):
    rng = np.random.default_rng(seed)
    A = rng.normal(size=(N, 2))
    b = rng.normal(size=N)
    q = p.compose_affine(A, b)
    assert q.nvars == 2 and q.degree() <= p.degree()
    for zp in rng.uniform(-1, 1, (20, 2)):
        assert np.isclose(q.eval(zp), p.eval(A @ zp + b), rtol=1e-9, atol=1e-9)


@given(polys)
def test_text_round_trip(p):
    assert Polynomial.from_text(p.to_text(), N).allclose(p, tol=0.0)


def test_text_ignores_insertion_order():
    p = Polynomial(2, {(0, 2): 1.0, (1, 0): 2.0, (0, 0): 3.0, (2, 0): 4.0})
    assert Polynomial.from_text(p.to_text(), 2) == p
    assert p.to_text() == Polynomial(2, dict(reversed(list(p.terms.items())))).to_text()


def test_lie_derivative():
    x1, x2 = x(0), x(1)
    V = x1 * x1 + x2 * x2
    f = [x2, -x1 - x2]
    assert lie_derivative(V, f) == -2 * x2 * x2


def test_monomial_counts():
    assert len(monomials_up_to(2, 1)) == 3
    assert len(monomials_up_to(6, 2)) == 28
    assert len(monomials_up_to(6, 1, 1)) == 6
