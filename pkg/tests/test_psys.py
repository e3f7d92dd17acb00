import copy

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.integrate import solve_ivp

from cascadesr.psys import (Branch, Bus, Chart, Generator, NetworkError, NetworkModel, SEPError,
                            SwitchingState, all_states, build_ybus, chart_map, kron_reduce,
                            reduce_network, smib, solve_sep)


def x_to_zdot(red, x):
    """Time derivative of the chart coordinates by the chain rule on the trig model."""
    m = red.m
    xd = red.vector_field(x)
    th = x[:m] - red.sep
    zd = np.empty(3 * m)
    zd[:m] = xd[m:]
    zd[m::2] = np.cos(th) * xd[:m]
    zd[m + 1::2] = np.sin(th) * xd[:m]
    return zd


def random_states(red, n, rng, spread=np.pi):
    m = red.m
    ang = red.sep + rng.uniform(-spread, spread, (n, m))
    spd = rng.uniform(-3, 3, (n, m))
    return np.hstack([ang, spd])


# -- switching states ---------------------------------------------------------

def test_state_id_convention():
    assert SwitchingState((True, True, True)).id == 1
    assert SwitchingState((False, False, False)).id == 8
    assert SwitchingState((False, True, True)).id == 5
    assert SwitchingState((True, True, True)).trip(1).status == "011"


@given(st.integers(0, 5))
def test_state_id_bijection(n):
    ids = [s.id for s in all_states(n)]
    assert ids == list(range(1, 2 ** n + 1))
    assert all(SwitchingState.from_id(i, n).id == i for i in ids)


def test_cannot_trip_twice():
    with pytest.raises(ValueError):
        SwitchingState((False, True)).trip(1)


# -- admittance matrices ------------------------------------------------------

def test_single_line_ybus():
    net = NetworkModel([Bus(1), Bus(2)], [Branch(1, 2, 0.0, 0.1)], [])
    Y = build_ybus(net)
    assert np.allclose(Y, [[-10j, 10j], [10j, -10j]], atol=1e-12)


def test_offline_rgs_equal_removed_rgs(demo_net):
    bare = copy.deepcopy(demo_net)
    bare.rg_units = []
    Y0 = build_ybus(bare)
    Yoff = build_ybus(demo_net, SwitchingState((False,) * demo_net.n_rg))
    assert np.array_equal(Y0, Yoff)


@pytest.mark.parametrize("sid", range(1, 9))
def test_row_sums_equal_shunts(demo_net, sid):
    sigma = SwitchingState.from_id(sid, 3)
    Y = build_ybus(demo_net, sigma)
    shunt = np.zeros(Y.shape[0], dtype=complex)
    idx = demo_net.bus_index
    for ld in demo_net.loads:
        shunt[idx[ld.bus]] += complex(ld.P, -ld.Q)
    for unit, on in zip(demo_net.rg_units, sigma.online):
        if on:
            shunt[idx[unit.bus]] -= unit.P
    for br in demo_net.branches:
        shunt[idx[br.from_bus]] += 0.5j * br.b
        shunt[idx[br.to_bus]] += 0.5j * br.b
    assert np.allclose(Y.sum(axis=1), shunt, atol=1e-10)


def test_star_reduces_to_delta():
    y = 1 / 0.1j
    Y = np.zeros((4, 4), dtype=complex)
    for k in range(3):
        Y[k, k] += y
        Y[3, 3] += y
        Y[k, 3] -= y
        Y[3, k] -= y
    G, B = kron_reduce(Y, [0, 1, 2])
    # hand elimination: each delta branch carries y*y/(3y) = y/3
    expect = np.full((3, 3), -y / 3)
    np.fill_diagonal(expect, 2 * y / 3)
    assert np.allclose(G + 1j * B, expect, atol=1e-12)


def test_reducing_nothing_is_identity():
    Y = np.array([[2 - 1j, -1 + 0.5j], [-1 + 0.5j, 3 - 2j]])
    G, B = kron_reduce(Y, [0, 1])
    assert np.array_equal(G + 1j * B, Y)


def test_current_injection_equivalence(demo_net, rng):
    Y = build_ybus(demo_net)
    nb = len(demo_net.buses)
    keep = list(range(nb, Y.shape[0]))
    elim = list(range(nb))
    G, B = kron_reduce(Y, keep)
    for _ in range(20):
        Vr = rng.normal(size=len(keep)) + 1j * rng.normal(size=len(keep))
        # interior nodes carry no injection: solve the full network for them
        Ve = -np.linalg.solve(Y[np.ix_(elim, elim)], Y[np.ix_(elim, keep)] @ Vr)
        I_full = Y[np.ix_(keep, keep)] @ Vr + Y[np.ix_(keep, elim)] @ Ve
        assert np.max(np.abs(I_full - (G + 1j * B) @ Vr)) <= 1e-10


def test_kron_is_transitive(demo_net):
    Y = build_ybus(demo_net)
    n = Y.shape[0]
    keep = list(range(len(demo_net.buses), n))
    G1, B1 = kron_reduce(Y, keep)
    # first drop bus 0 only, then the rest
    G0, B0 = kron_reduce(Y, list(range(1, n)))
    Gs, Bs = kron_reduce(G0 + 1j * B0, [k - 1 for k in keep])
    assert np.max(np.abs((G1 + 1j * B1) - (Gs + 1j * Bs))) <= 1e-10


def test_singular_interior_block():
    Y = np.array([[1.0, 0, 0], [0, 0, 0], [0, 0, 1.0]], dtype=complex)
    with pytest.raises(np.linalg.LinAlgError, match="pivot"):
        kron_reduce(Y, [0, 2])


def test_reduced_matrices_symmetric(demo_systems):
    for red in demo_systems.values():
        assert np.allclose(red.G, red.G.T, atol=1e-12)
        assert np.allclose(red.B, red.B.T, atol=1e-12)


# -- ingestion checks -----------------------------------------------------------

def test_nonuniform_damping_rejected(demo_net):
    d = demo_net.to_dict()
    d["generators"][0]["D"] *= 1.5
    with pytest.raises(NetworkError, match="uniform"):
        NetworkModel.from_dict(d)


def test_disconnected_network_rejected(demo_net):
    d = demo_net.to_dict()
    d["branches"] = d["branches"][1:]
    with pytest.raises(NetworkError):
        NetworkModel.from_dict(d)


def test_demo_round_trips(demo_net):
    again = NetworkModel.from_dict(demo_net.to_dict())
    assert again.to_dict() == demo_net.to_dict()
    assert abs(demo_net.damping_ratio - 4.0) <= 1e-12
    assert 0.4 <= demo_net.rg_penetration() <= 0.6


# -- equilibria -------------------------------------------------------------------

def test_sep_zero_mechanical_power():
    red = smib(1.0, 0.0, 0.1, 0.4)
    assert abs(solve_sep(red, [0.3])[0]) <= 1e-12


@given(st.floats(0.0, 0.9), st.floats(0.5, 3.0))
def test_sep_closed_form_smib(ratio, pmax):
    red = smib(pmax, ratio * pmax, 0.1, 0.4)
    sep = solve_sep(red, [0.0])
    assert abs(sep[0] - np.arcsin(ratio)) <= 1e-9


def test_demo_has_eight_seps(demo_systems):
    assert sorted(demo_systems) == list(range(1, 9))
    for red in demo_systems.values():
        assert np.max(np.abs(red.accel(red.sep))) <= 1e-10
        assert np.max(np.abs(red.vector_field(np.concatenate([red.sep, np.zeros(red.m)])))) <= 1e-9


def test_sep_nonconvergence_reported():
    red = smib(1.0, 0.5, 0.1, 0.4)
    with pytest.raises(SEPError):
        solve_sep(red, [np.pi / 2], max_iter=1)


# -- vector field and recasting -------------------------------------------------------

def test_angle_derivative_is_speed(demo_systems, rng):
    red = demo_systems[1]
    for x in random_states(red, 20, rng):
        assert np.array_equal(red.vector_field(x)[:red.m], x[red.m:])


@pytest.mark.parametrize("sid", [1, 5, 8])
def test_recast_field_matches_trig_field(demo_systems, rng, sid):
    red = demo_systems[sid]
    ps = red.recast
    for x in random_states(red, 100, rng):
        z = ps.chart.to_z(x)
        assert np.max(np.abs(ps.field(z) - x_to_zdot(red, x))) <= 1e-9


def test_recast_structure(demo_systems):
    red = demo_systems[1]
    ps = red.recast
    assert np.max(np.abs(ps.field(np.zeros(ps.nvars)))) == 0.0
    assert max(fi.degree() for fi in ps.f) <= 2
    ch = ps.chart
    for i in range(red.m):
        # d/dt (1 - cos) = sin * speed
        w = ps.f[ch.c_index(i)]
        expect = (type(w).var(ps.nvars, ch.s_index(i)) * type(w).var(ps.nvars, i))
        assert w.allclose(expect)


def test_smib_recast_matches_trig(smib_system, rng):
    ps = smib_system.recast
    for x in random_states(smib_system, 50, rng):
        assert np.max(np.abs(ps.field(ps.chart.to_z(x)) - x_to_zdot(smib_system, x))) <= 1e-9


def test_dual_integration_agrees(demo_systems):
    red = demo_systems[6]
    ps = red.recast
    x0 = np.concatenate([red.sep + [0.4, -0.3], [0.5, 0.2]])
    opts = dict(rtol=1e-11, atol=1e-12, method="DOP853", t_eval=np.linspace(0, 5, 51))
    tx = solve_ivp(lambda t, y: red.vector_field(y), (0, 5), x0, **opts)
    tz = solve_ivp(lambda t, y: ps.field(y), (0, 5), ps.chart.to_z(x0), **opts)
    assert np.max(np.abs(ps.chart.to_z(tx.y.T) - tz.y.T)) <= 1e-6
    assert np.max(np.abs(ps.chart.manifold_residual(tz.y.T))) <= 1e-6


def test_manifold_invariant_over_20s(demo_systems):
    red = demo_systems[8]
    ps = red.recast
    z0 = ps.chart.to_z(np.concatenate([red.sep + [-0.5, 0.6], [1.0, -1.0]]))
    sol = solve_ivp(lambda t, y: ps.field(y), (0, 20), z0, method="DOP853", rtol=1e-10, atol=1e-12)
    assert np.max(np.abs(ps.chart.manifold_residual(sol.y.T))) <= 1e-6


# -- charts -------------------------------------------------------------------------

def test_chart_round_trip_to_x(rng):
    ch = Chart(np.array([0.3, -0.2]))
    X = np.hstack([ch.sep + rng.uniform(-3, 3, (100, 2)), rng.normal(size=(100, 2))])
    assert np.allclose(ch.to_x(ch.to_z(X)), X, atol=1e-12)
    assert np.max(np.abs(ch.manifold_residual(ch.to_z(X)))) <= 1e-12


def test_chart_map_identity():
    ch = Chart(np.array([0.3, -0.2]))
    A, b = ch.map_to(ch)
    assert np.allclose(A, np.eye(6)) and np.allclose(b, 0)


def test_chart_map_round_trip(demo_systems, rng):
    a, b = demo_systems[1].chart, demo_systems[8].chart
    Z = a.to_z(random_states(demo_systems[1], 100, rng))
    back = chart_map(chart_map(Z, a, b), b, a)
    assert np.max(np.abs(back - Z)) <= 1e-12


def test_chart_map_commutes_with_recasting(demo_systems, rng):
    for j in demo_systems:
        for k in demo_systems:
            cj, ck = demo_systems[j].chart, demo_systems[k].chart
            X = random_states(demo_systems[j], 1000, rng)
            assert np.max(np.abs(chart_map(cj.to_z(X), cj, ck) - ck.to_z(X))) <= 1e-9


def test_chart_map_invertible(demo_systems):
    A, _ = demo_systems[1].chart.map_to(demo_systems[8].chart)
    assert abs(abs(np.linalg.det(A)) - 1.0) <= 1e-12
