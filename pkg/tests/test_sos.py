import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cascadesr.poly import Polynomial
from cascadesr.sos import (AffinePoly, BilinearError, MultiplierDegrees, SOSCertificate, SOSProgram,
                           assemble_psatz_constraint, check_sos, gram_polynomial, monomial_basis)


def xs(n=2):
    return Polynomial.variables(n)


def motzkin():
    x1, x2 = xs()
    return x1 ** 4 * x2 ** 2 + x1 ** 2 * x2 ** 4 - 3 * x1 ** 2 * x2 ** 2 + 1


def test_monomial_basis_examples():
    assert sorted(monomial_basis(2, 1)) == [(0, 0), (0, 1), (1, 0)]
    assert sorted(monomial_basis(2, 1, no_constant=True)) == [(0, 1), (1, 0)]
    assert len(monomial_basis(6, 1, no_constant=True)) == 6


def test_fixed_quadratic_hand_decomposition():
    # 2x1^2 + 2x1x2 + x2^2 = (x1 + x2)^2 + x1^2, Gram [[2, 1], [1, 1]]
    x1, x2 = xs()
    q = 2 * x1 ** 2 + 2 * x1 * x2 + x2 ** 2
    res = check_sos(q)
    assert res.is_sos
    cert = res.certificate
    G, basis = cert.gram_matrices[0], cert.bases[0]
    order = [basis.index((1, 0)), basis.index((0, 1))]
    assert np.allclose(G[np.ix_(order, order)], [[2, 1], [1, 1]], atol=1e-6)
    assert cert.reconstruction_residual <= 1e-8


def test_identity_gram():
    x1, x2 = xs()
    cert = check_sos(x1 ** 2 + x2 ** 2).certificate
    assert np.allclose(cert.gram_matrices[0], np.eye(2), atol=1e-6)


def test_sos_with_quartic():
    x1, x2 = xs()
    res = check_sos((x1 + x2) ** 2 + x1 ** 4)
    assert res.is_sos and res.certificate.reconstruction_residual <= 1e-8


@pytest.mark.parametrize("p", [-xs()[0] ** 2, motzkin()], ids=["neg_square", "motzkin"])
def test_not_sos(p):
    res = check_sos(p)
    assert not res.is_sos
    assert res.infeasibility_verified()


def test_motzkin_is_nonnegative_but_rejected():
    # nonnegative by AM-GM, which is what makes it the classical counterexample
    pts = np.random.default_rng(0).uniform(-2, 2, (2000, 2))
    assert motzkin().eval_many(pts).min() >= -1e-12
    assert not check_sos(motzkin()).is_sos


def test_odd_degree_is_not_sos():
    assert not check_sos(xs()[0] ** 3).is_sos


def test_bilinear_rejected():
    prog = SOSProgram(1)
    a = prog.free_poly("a", 1)
    b = prog.free_poly("b", 1)
    with pytest.raises(BilinearError):
        a * b


def test_free_decision_polynomial():
    # largest gamma with x^2 - 2x + 3 - gamma SOS is the minimum, 2
    x, = xs(1)
    prog = SOSProgram(1)
    gamma = prog.free_scalar("gamma")
    prog.add_sos(AffinePoly.const(x ** 2 - 2 * x + 3) - gamma)
    prog.maximize(gamma)
    res = prog.solve()
    assert res.feasible and abs(res.scalar(gamma) - 2.0) <= 1e-6


def test_certificate_text_round_trip():
    x1, x2 = xs()
    cert = check_sos((x1 + x2) ** 2 + x1 ** 4).certificate
    again = SOSCertificate.from_text(cert.to_text())
    assert again.names == cert.names and again.bases == cert.bases
    assert all(np.array_equal(a, b) for a, b in zip(again.gram_matrices, cert.gram_matrices))
    assert again.reconstruction_residual == cert.reconstruction_residual


def test_compile_is_degree_sound():
    x1, x2 = xs()
    prog = SOSProgram(2)
    prog.add_sos(AffinePoly.const(x1 ** 4 + x2 ** 2 + 1))
    inst, blocks = prog.compile()
    basis = blocks[0][1]
    assert max(sum(m) for m in basis) == 2
    assert inst.n_constraints <= len({tuple(a + b for a, b in zip(u, v)) for u in basis for v in basis})


@settings(max_examples=20)
@given(st.integers(0, 2**31 - 1))
def test_squares_are_sos_and_nonnegative(seed):
    rng = np.random.default_rng(seed)
    p = Polynomial(2, {m: rng.normal() for m in monomial_basis(2, 2)})
    res = check_sos(p * p)
    assert res.is_sos
    cert = res.certificate
    assert cert.reconstruction_residual <= 1e-8
    recon = gram_polynomial(cert.gram_matrices[0], cert.bases[0], 2)
    assert (recon - p * p).max_abs_coeff() <= 1e-8
    assert (p * p).eval_many(rng.uniform(-3, 3, (1000, 2))).min() >= -1e-6


def _expr_text(out, name):
    return out["exprs"][name]


def test_psatz_successor_template():
    # -s13 (1 - V) - lam4 g - (W - 1)
    n = 3
    z = xs(n)
    V = z[0] ** 2 + z[1] ** 2
    W = 2 * V
    g = [z[1] ** 2 + z[2] ** 2 - 2 * z[2]]
    prog = SOSProgram(n)
    out = assemble_psatz_constraint(prog, "successor", g=g, V=V, W=W,
                                    fixed={"s13": Polynomial.constant(n, 0.5)})
    expr = _expr_text(out, "successor")
    lam = out["lam4"][0]
    vals = {k: 0.0 for k in lam.variables()}
    assert expr.evaluate(vals).allclose(-0.5 * (1 - V) - (W - 1), tol=1e-12)
    assert len(prog.sos_constraints) == 1


def test_psatz_expand_template_decrease():
    # third expression: -s8 (1 - V) - s9 Vdot - lam3 g - l2
    n = 1
    z, = xs(n)
    V = z ** 2
    Vdot = -2 * z ** 2
    prog = SOSProgram(n)
    one = Polynomial.constant(n, 1.0)
    out = assemble_psatz_constraint(prog, "expand", V=V, Vdot=Vdot, p=V, beta=0.5, eps=0.0,
                                    fixed={"s2": one, "s6": one, "s8": one, "s9": one})
    expr = out["exprs"]["decrease"].evaluate({})
    assert expr.allclose(-(1 - V) - Vdot)


def test_psatz_without_constraints_has_no_lambda_terms():
    n = 2
    z = xs(n)
    V = z[0] ** 2 + z[1] ** 2
    prog = SOSProgram(n)
    out = assemble_psatz_constraint(prog, "successor", V=V, W=V,
                                    fixed={"s13": Polynomial.constant(n, 1.0)})
    assert out["lam4"] == []
    assert out["exprs"]["successor"].evaluate({}).allclose(-(1 - V) - (V - 1))


def test_psatz_unknown_template():
    with pytest.raises(ValueError):
        assemble_psatz_constraint(SOSProgram(1), "nonsense")


def test_expansion_degrees_are_configurable():
    d = MultiplierDegrees(lam3=0)
    assert d.lam3 == 0 and MultiplierDegrees().s8 == 2
