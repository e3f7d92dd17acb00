import json

import numpy as np
import pytest

from cascadesr.cascade import CascadeSequence
from cascadesr.certify import (CertificateChain, CertifyOptions, LyapunovCertificate, Uncertifiable,
                               bisect_max, certify_sequence, expand_interior, initial_estimate,
                               local_containment, sample_sublevel, shape_function, validate_certificate)
from cascadesr.poly import Polynomial, lie_derivative
from cascadesr.psys import PolySystem, smib

OPTS = CertifyOptions()


def scalar(sign):
    z = Polynomial.var(1, 0)
    return PolySystem([sign * z], [])


def ball(n, r2=1.0):
    return sum((Polynomial.var(n, i) ** 2 for i in range(n)), Polynomial.zero(n)) * (1.0 / r2)


def vdp():
    # reversed-time Van der Pol: bounded region of attraction around the origin
    x1, x2 = Polynomial.variables(2)
    return PolySystem([-x2, x1 + (x1 * x1 - 1) * x2], [])


def test_bisect_max():
    assert bisect_max(lambda v: True if v <= 3.0 else None, 1e-6, 1e3, 60)[0] == pytest.approx(3.0, rel=1e-9)
    assert bisect_max(lambda v: True, 1.0, 5.0)[0] == 5.0
    assert bisect_max(lambda v: None, 1.0, 5.0) == (None, None)


def test_initial_estimate_stable_scalar():
    z = Polynomial.var(1, 0)
    V, beta = initial_estimate(scalar(-1.0), z * z)
    assert beta > 0
    assert set(V.terms) == {(2,)} and V.coeff((2,)) > 0


def test_initial_estimate_unstable_scalar():
    z = Polynomial.var(1, 0)
    with pytest.raises(Uncertifiable, match="no certificate"):
        initial_estimate(scalar(1.0), z * z)


def test_initial_estimate_smib_decreases(smib_system, rng):
    ps = smib_system.recast
    V, beta = initial_estimate(ps, shape_function(ps))
    cert = LyapunovCertificate(1, V, beta, smib_system.sep)
    X = sample_sublevel(cert, 2000, rng)
    Z = ps.chart.to_z(X)
    Z = Z[np.linalg.norm(Z, axis=1) > 1e-6]
    assert np.all(lie_derivative(V, ps.f).eval_many(Z) < 0)


def test_shape_function_is_lyapunov():
    ps = vdp()
    p = shape_function(ps)
    A = ps.linearization()
    P = np.array([[p.coeff((2, 0)), p.coeff((1, 1)) / 2], [p.coeff((1, 1)) / 2, p.coeff((0, 2))]])
    assert np.allclose(A.T @ P + P @ A, -np.eye(2), atol=1e-12)


@pytest.mark.parametrize("v_scale, w_scale, expect", [(4.0, 1.0, 1.0), (1.0, 1.0, 1.0), (1.0, 4.0, 0.25)],
                         ids=["inside", "identical", "quarter"])
def test_local_containment_balls(v_scale, w_scale, expect):
    n = 2
    x1, x2 = Polynomial.variables(n)
    ps = PolySystem([-x1, -x2], [])
    V = ball(n) * v_scale
    W = ball(n) * w_scale
    Vs, c = local_containment(V, ps, W, c_max=1.0)
    assert c == pytest.approx(expect, rel=1e-3)
    assert Vs.allclose(V * (1.0 / c))


def test_expansion_linear_no_worse():
    x1, x2 = Polynomial.variables(2)
    ps = PolySystem([x2, -x1 - x2], [])
    p = shape_function(ps)
    V0, beta0 = initial_estimate(ps, p)
    V1, c = local_containment(V0, ps, None, p, beta0, c_max=100.0)
    _, beta, _ = expand_interior(V1, ps, p)
    assert beta >= beta0 * (1 - 1e-6)


def test_expansion_is_monotone_on_vdp():
    ps = vdp()
    p = shape_function(ps)
    V0, beta0 = initial_estimate(ps, p)
    V1, _ = local_containment(V0, ps, None, p, beta0, c_max=100.0)
    V, beta, diag = expand_interior(V1 * (1 / 0.98), ps, p)
    assert beta >= diag["beta_seed"]
    for history in diag["beta_history"]:
        assert all(b > a for a, b in zip(history, history[1:]))
    # known estimate scale for this system with quadratic V
    assert 1.5 < beta < 3.0


def two_stage(pm_final):
    return {1: smib(1.0, 0.4, 0.1, 0.4), 2: smib(1.0, pm_final, 0.1, 0.4)}


def test_two_stage_chain_nested(smib_pair, rng):
    systems, chain = smib_pair
    assert chain.certified and len(chain.stages) == 2
    outer, inner = chain.stages
    assert outer.successor is None
    assert inner.successor is outer
    X = sample_sublevel(inner, 10_000, rng)
    assert np.all(outer.value(X) <= 1 + 1e-8)


def test_certificate_invariants(smib_pair, rng):
    systems, chain = smib_pair
    for cert, sid in zip(chain.stages, [2, 1]):
        ps = systems[sid].recast
        assert cert.V.coeff((0,) * cert.V.nvars) == 0.0
        rep = validate_certificate(cert, ps, cert.successor, 10_000, rng)
        assert rep.ok and rep.n_points > 9000


def test_no_trip_chain_is_single_stage(smib_chain):
    assert smib_chain.certified and len(smib_chain.stages) == 1
    assert smib_chain.stages[0].successor is None


def test_uncertifiable_stress_fixture():
    # the final equilibrium sits close to its stability limit, and the first
    # state's equilibrium lies outside the final region of attraction
    chain = certify_sequence(CascadeSequence((1,), 1), two_stage(0.95))
    assert not chain.certified
    assert chain.failed_state == 1
    assert chain.innermost is None
    assert not chain.contains(np.zeros((1, 2))).any()


def test_failure_is_cached():
    cache = {}
    systems = two_stage(0.95)
    seq = CascadeSequence((1,), 1)
    certify_sequence(seq, systems, OPTS, cache)
    assert isinstance(cache[(1, 2)], Uncertifiable)


def test_deterministic_serialisation(smib_system, smib_chain):
    again = certify_sequence(CascadeSequence((), 1), {1: smib_system})
    assert again.to_json() == smib_chain.to_json()


def test_chain_round_trip(smib_pair):
    _, chain = smib_pair
    back = CertificateChain.from_dict(json.loads(chain.to_json()), 1)
    assert back.to_json() == chain.to_json()
    assert back.stages[1].successor is back.stages[0]
