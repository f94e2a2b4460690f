import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from chrelax.distflow import (NetworkState, SweepError, VoltageCollapseError, bound_violation,
                              eval_residuals, is_exact, max_residual, me_branch, me_des, recover_feasible,
                              sweep_solve)
from chrelax.feeder import Branch, Bus, DesUnit, Feeder, InstanceSpec, Profiles, gen_instance
from chrelax.problem import solve_desos


def two_bus(r=0.01, x=0.01, des=()):
    return Feeder(buses=(Bus("1", is_substation=True), Bus("2")),
                  branches=(Branch("1", "2", r, x, 10.0, 100.0),), des_units=tuple(des))


def point_state(P, Q, ell, v):
    z = np.zeros((1, 2))
    return NetworkState(P=np.array([[P]]), Q=np.array([[Q]]), l=np.array([[ell]]), v=np.array([[v, v]]),
                        p_grid=np.zeros(1), q_grid=np.zeros(1), p_inj=z, q_inj=z)


def two_bus_reference(p, q, r, x, v1):
    """Closed-form two-bus flow: the physical (small) root of the current quadratic."""
    z2 = r * r + x * x
    B = 2 * r * p + 2 * x * q - v1
    ell = (-B - math.sqrt(B * B - 4 * z2 * (p * p + q * q))) / (2 * z2)
    P, Q = p + r * ell, q + x * ell
    return P, Q, ell, v1 - 2 * (r * P + x * Q) + z2 * ell


def test_zero_state_has_zero_residuals():
    f = gen_instance(InstanceSpec(9, 0.0, horizon=1), seed=0)
    nb, nl = len(f.buses), len(f.branches)
    st_ = NetworkState(P=np.zeros((1, nl)), Q=np.zeros((1, nl)), l=np.zeros((1, nl)), v=np.ones((1, nb)),
                       p_grid=np.zeros(1), q_grid=np.zeros(1), p_inj=np.zeros((1, nb)), q_inj=np.zeros((1, nb)))
    f0 = Feeder(buses=tuple(b.__class__(**{**b.__dict__, "k_tx": 0.0}) for b in f.buses), branches=f.branches)
    assert max_residual(eval_residuals(f0, st_)) == 0.0


def test_branch_equation_residual_examples():
    f = two_bus()
    assert eval_residuals(f, point_state(1, 0, 1, 1))["branch_flow"][0, 0] == 0.0
    assert eval_residuals(f, point_state(1, 0, 0.5, 1))["branch_flow"][0, 0] == -0.5


def test_dimension_mismatch():
    f = gen_instance(InstanceSpec(5, 0.0, horizon=1), seed=0)
    with pytest.raises(ValueError):
        eval_residuals(f, point_state(0, 0, 0, 1))


def test_sweep_single_branch_example():
    f = two_bus()
    s = sweep_solve(f, [0.0, -0.1], [0.0, 0.0], 1.0)
    assert s.P[0, 0] == pytest.approx(0.1001, abs=2e-6)
    assert s.v[0, 1] == pytest.approx(0.99800, abs=5e-6)
    assert max_residual(eval_residuals(f, s)) <= 1e-8


@given(p=st.floats(0.0, 1.5), q=st.floats(-0.5, 0.8), r=st.floats(0.001, 0.05), ratio=st.floats(0.2, 3.0),
       v1=st.floats(0.85, 1.2))
def test_sweep_matches_closed_form(p, q, r, ratio, v1):
    x = r * ratio
    f = two_bus(r, x)
    s = sweep_solve(f, [0.0, -p], [0.0, -q], v1)
    P, Q, ell, v2 = two_bus_reference(p, q, r, x, v1)
    assert s.P[0, 0] == pytest.approx(P, abs=1e-9)
    assert s.Q[0, 0] == pytest.approx(Q, abs=1e-9)
    assert s.l[0, 0] == pytest.approx(ell, abs=1e-9)
    assert s.v[0, 1] == pytest.approx(v2, abs=1e-9)
    assert max_residual(eval_residuals(f, s)) <= 1e-8


def test_zero_load_flat_voltage():
    f = gen_instance(InstanceSpec(20, 0.0, horizon=1), seed=3)
    f = Feeder(buses=tuple(Bus(b.id, is_substation=b.is_substation) for b in f.buses), branches=f.branches)
    z = np.zeros(len(f.buses))
    s = sweep_solve(f, z, z, 1.1)
    assert np.all(s.P == 0) and np.all(s.Q == 0) and np.all(s.l == 0)
    assert np.all(s.v == 1.1)


def test_voltage_collapse_beyond_loadability():
    r = x = 0.1
    pmax = 1.0 / (2 * (r + math.hypot(r, x)))  # discriminant of the current quadratic vanishes
    f = two_bus(r, x)
    s = sweep_solve(f, [0.0, -0.99 * pmax], [0.0, 0.0], 1.0)
    assert max_residual(eval_residuals(f, s)) <= 1e-8
    with pytest.raises(VoltageCollapseError):
        sweep_solve(f, [0.0, -1.05 * pmax], [0.0, 0.0], 1.0)


def test_non_convergence_reported():
    r = x = 0.1
    pmax = 1.0 / (2 * (r + math.hypot(r, x)))
    with pytest.raises(SweepError) as err:
        sweep_solve(two_bus(r, x), [0.0, -0.99 * pmax], [0.0, 0.0], 1.0, max_iter=3)
    assert err.value.residual > 0


@given(seed=st.integers(0, 10_000), n=st.integers(2, 40))
def test_sweep_residuals_on_generated_feeders(seed, n):
    f = gen_instance(InstanceSpec(n, 0.4, horizon=3), seed=seed)
    p = f.pv() - f.load_p()
    q = -f.load_q()
    s = sweep_solve(f, p, q, 1.0)
    assert max_residual(eval_residuals(f, s)) <= 1e-8


def test_me_branch_examples():
    f = two_bus()
    assert me_branch(f, point_state(0.3, 0.1, 0.1, 1.0)) == pytest.approx(0.0, abs=1e-15)
    assert me_branch(f, point_state(0, 0, 1, 1)) == 1.0


def test_me_des_examples():
    unit = DesUnit("2", 1.0, 0.01, 0.01, 0.0, 2.0, 1.0)
    f = two_bus(des=[unit])
    s = point_state(0, 0, 0, 1)
    s.p_des, s.q_des, s.p_loss = np.zeros((1, 1)), np.zeros((1, 1)), np.zeros((1, 1))
    assert me_des(f, s) == 0.0
    s.p_des, s.p_loss = np.ones((1, 1)), np.full((1, 1), 0.02)
    assert me_des(f, s) == pytest.approx(0.0, abs=1e-15)
    assert me_des(two_bus(), s) is None


def test_exactness_threshold():
    assert is_exact(9.99e-4, None)
    assert not is_exact(1e-3, None)
    assert not is_exact(0.0, 2e-3)


def test_recover_exact_solution_is_identity():
    f = gen_instance(InstanceSpec(13, 0.4, horizon=1), seed=4)
    res = solve_desos(f, "f2", "socp", snapshot=True)
    assert me_branch(res.feeder, res.state) < 1e-6
    rec, rep = recover_feasible(res.feeder, res.state, "f2", res.solution.objective)
    assert np.max(np.abs(rec.v - res.state.v)) <= 1e-6
    assert np.max(np.abs(rec.P - res.state.P)) <= 1e-6
    assert abs(rep.gap) <= 1e-6
    assert rep.max_residual <= 1e-8


def test_recover_inexact_solution_has_nonnegative_gap():
    for seed in range(4):
        f = gen_instance(InstanceSpec(9 + 4 * seed, 0.5, horizon=1), seed=seed)
        res = solve_desos(f, "f1", "socp", snapshot=True)
        assert me_branch(res.feeder, res.state) > 1e-3
        _, rep = recover_feasible(res.feeder, res.state, "f1", res.solution.objective)
        assert rep.gap >= -1e-6
        assert rep.max_residual <= 1e-8


def test_recover_zero_injection():
    f = Feeder(buses=(Bus("1", is_substation=True), Bus("2"), Bus("3")),
               branches=(Branch("1", "2", 0.01, 0.01, 1.0, 1.0), Branch("2", "3", 0.01, 0.01, 1.0, 1.0)),
               profiles=Profiles(horizon=1, price=(40.0,)))
    relaxed = NetworkState(P=np.full((1, 2), 0.3), Q=np.zeros((1, 2)), l=np.full((1, 2), 0.5),
                           v=np.ones((1, 3)), p_grid=np.zeros(1), q_grid=np.zeros(1),
                           p_inj=np.zeros((1, 3)), q_inj=np.zeros((1, 3)))
    rec, rep = recover_feasible(f, relaxed, "f1", 0.0)
    assert np.all(rec.P == 0) and np.all(rec.l == 0)
    assert rep.gap == 0.0


@given(seed=st.integers(0, 10_000), n=st.integers(2, 80), pen=st.floats(0.0, 1.0),
       horizon=st.sampled_from([1, 24]))
def test_generated_feeders_operable_without_storage(seed, n, pen, horizon):
    f = gen_instance(InstanceSpec(n, pen, horizon=horizon), seed=seed)
    p, q = f.pv() - f.load_p(), -f.load_q()
    s = sweep_solve(f, p, q, 1.0)
    assert bound_violation(f, s) == 0.0
