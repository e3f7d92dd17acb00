import numpy as np
import pytest
from hypothesis import given, strategies as st

from cascadesr import sdp
from cascadesr.sdp import SDPInstance, Status, solve


def one_by_one(rhs):
    return SDPInstance.from_functionals([1], 0, {("X", 0, 0, 0): 1.0}, [({("X", 0, 0, 0): 1.0}, rhs)])


def trace_with_offdiag(off):
    # minimise x11 + x22 subject to x12 = off
    return SDPInstance.from_functionals(
        [2], 0, {("X", 0, 0, 0): 1.0, ("X", 0, 1, 1): 1.0}, [({("X", 0, 0, 1): 1.0}, off)])


def test_fixed_scalar():
    sol = solve(one_by_one(2.0))
    assert sol.status is Status.OPTIMAL
    assert abs(sol.objective_value - 2.0) <= 1e-6


def test_trace_minimisation_analytic():
    # det >= 0 forces x11 x22 >= 1, so the trace is at least 2
    sol = solve(trace_with_offdiag(1.0))
    assert sol.status is Status.OPTIMAL
    assert abs(sol.objective_value - 2.0) <= 1e-6
    assert np.allclose(sol.block_values[0], [[1, 1], [1, 1]], atol=1e-6)


def test_negative_scalar_infeasible():
    assert solve(one_by_one(-1.0)).status is Status.INFEASIBLE


def test_unbounded():
    inst = SDPInstance.from_functionals([1], 1, {("y", 0): 1.0}, [])
    assert solve(inst).status is Status.UNBOUNDED


def test_block_size_validation():
    with pytest.raises(ValueError):
        SDPInstance.from_functionals([0], 0, {}, [])
    with pytest.raises(IndexError):
        SDPInstance.from_functionals([1], 0, {("X", 0, 1, 1): 1.0}, [])


def test_iteration_cap_is_not_optimal():
    sol = solve(trace_with_offdiag(1.0), max_iter=1)
    assert sol.status is not Status.OPTIMAL


@given(st.floats(0.1, 10.0))
def test_optimal_solutions_are_feasible_and_dual_bounded(off):
    inst = trace_with_offdiag(off)
    sol = solve(inst)
    assert sol.status is Status.OPTIMAL
    assert abs(sol.objective_value - 2 * off) <= 1e-6 * max(1, off)
    assert sol.residuals["primal"] <= sdp.DEFAULT_TOL
    assert sol.residuals["eig_floor"] >= -1e-7
    assert sol.dual_objective_value <= sol.objective_value + 1e-6


def test_deterministic():
    a = solve(trace_with_offdiag(3.0))
    b = solve(trace_with_offdiag(3.0))
    assert np.array_equal(a.vector, b.vector)


def test_dump_round_trip():
    inst = trace_with_offdiag(1.5)
    again = SDPInstance.load(inst.dump())
    assert again.psd_blocks == inst.psd_blocks
    assert np.array_equal(again.c, inst.c) and np.array_equal(again.b, inst.b)
    assert (again.A != inst.A).nnz == 0


def test_infeasible_comes_with_farkas_certificate():
    inst = one_by_one(-1.0)
    sol = solve(inst)
    assert sol.farkas is not None and sol.farkas.verify(inst)
    # a flipped multiplier proves nothing
    assert not sdp.FarkasCertificate(-sol.farkas.y).verify(inst)


def test_farkas_pairing_with_offdiagonal():
    # x12 = 2 with x11 = x22 = 1 violates the 2x2 PSD condition
    inst = SDPInstance.from_functionals([2], 0, {}, [({("X", 0, 0, 1): 1.0}, 2.0), ({("X", 0, 0, 0): 1.0}, 1.0),
                                                     ({("X", 0, 1, 1): 1.0}, 1.0)])
    sol = solve(inst)
    assert sol.status is Status.INFEASIBLE
    assert sol.farkas.verify(inst)
    assert sol.optimal is False and solve(trace_with_offdiag(1.0)).farkas is None
