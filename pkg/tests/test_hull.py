from types import SimpleNamespace

import numpy as np
import pytest
from hypothesis import given, strategies as st

from chrelax.feeder import Branch, Bus, DesUnit
from chrelax.hull import (BranchHull, DesHull, decompose, make_branch_hull, make_des_hull, membership,
                          projection_predicates, random_directions, sample_des_set, sample_facet,
                          sample_omega0, support_gap, support_value)
from oracles import omega0_support

H = BranchHull.from_bounds(0.81, 1.21, 1.0, 1.0)


def test_default_cut_coefficients():
    h = make_branch_hull(Branch("1", "2", 0.01, 0.01, 1.0, 1.0), Bus("1"))
    assert h.l_max == 1.0
    assert h.cut_coef.tolist() == [0.0, 0.0, 1.21, 1.0]
    assert h.cut_rhs == pytest.approx(2.21, abs=1e-15)


def test_cut_tight_at_both_anchors():
    assert abs(H.cut_value([1, 0, 1, 1])) <= 1e-12
    assert abs(H.cut_value([0, 1, 1 / 1.21, 1.21])) <= 1e-12


@given(vmin=st.floats(0.5, 0.95), vnom=st.floats(0.96, 1.05), vmax=st.floats(1.06, 1.4),
       smax=st.floats(0.05, 10))
def test_cut_tight_at_anchor_loci(vmin, vnom, vmax, smax):
    h = BranchHull.from_bounds(vmin, vmax, vnom, smax)
    for ell, v in h.anchors_lv:
        assert abs(h.cut_value([0, 0, ell, v])) <= 1e-12 * max(1.0, h.cut_rhs)


def test_coupling_mismatch_rejected():
    with pytest.raises(ValueError):
        make_branch_hull(Branch("1", "2", 0.01, 0.01, 1.0, 2.0), Bus("1"))


def test_des_chord_example():
    h = make_des_hull(DesUnit("1", 1.0, 0.01, 0.01, 0.0, 1.0, 0.5), Bus("1"))
    assert h.chord_coef[2] == pytest.approx(0.9801, abs=1e-15)
    assert h.chord_coef[3] == pytest.approx(0.02, abs=1e-15)
    assert h.chord_rhs == pytest.approx(0.0404, abs=1e-15)
    for v in (h.v_min, h.v_max):
        assert abs(h.c3([0, 0, h.e / v, v])) <= 1e-12


def test_des_cone_equality_example():
    h = DesHull(0.01, 0.01, 1.0, 0.81, 1.21)
    assert h.c1([1.0, 0.0, 0.02 / 1.0, 1.0]) == pytest.approx(0.0, abs=1e-15)


def test_des_asymmetry_cut_tight():
    h = DesHull(0.02, 0.01, 1.5, 0.81, 1.21)
    y = [0.0, h.s_max, h.r_cvt * h.s_max ** 2 / h.v_min, h.v_min]
    assert abs(h.c2(y)) <= 1e-12


def test_des_resistances_positive():
    unit = SimpleNamespace(r_batt=0.0, r_cvt=0.01, s_max=1.0)
    with pytest.raises(ValueError):
        make_des_hull(unit, Bus("1"))


def test_membership_examples():
    assert membership(H, [0, 0, 0, 1.0]).inside
    assert membership(H, [1, 0, 1, 1]).inside
    m = membership(H, [0, 0, 1.0, 1.21])
    assert not m.inside and m.violated == ("cut",)
    assert membership(H, [0, 0, 1.0, 1.21], cuts=False).inside
    with pytest.raises(ValueError):
        membership(H, [0, 0, 1])


def test_cone_point_far_from_branch_set():
    samples = sample_omega0(H, 20000, 0)
    w = np.array([0, 0, 1.0, 1.21])
    # nearest exact point is a finite distance away; the witness is not a limit of the set
    assert np.min(np.linalg.norm(samples - w, axis=1)) > 0.05


@given(P=st.floats(-1, 1), Q=st.floats(-1, 1), ell=st.floats(0, 1), v=st.floats(0.81, 1.21))
def test_hull_inside_cone_relaxation(P, Q, ell, v):
    x = [P, Q, ell, v]
    if membership(H, x).inside:
        assert membership(H, x, cuts=False).inside
        assert all(projection_predicates(H, x).values())


def test_decompose_degenerate_center():
    x = [0.0, 0.0, 1.0, 1.0]  # (l, v) at the nominal anchor
    d = decompose(H, x)
    assert d.gamma.tolist() == [0.5, 0.0, 0.5, 0.0]
    assert np.allclose(np.sort(d.pq_anchors[:, 0]), [-1.0, 1.0]) and np.allclose(d.pq_anchors[:, 1], 0.0)
    mid_l = 0.5 * (1.0 + 1 / 1.21)
    mid_v = 0.5 * (1.0 + 1.21)
    d = decompose(H, [0.0, 0.0, mid_l, mid_v])
    assert np.allclose(d.gamma, 0.25, atol=1e-12)


def test_decompose_rejects_off_facet():
    with pytest.raises(ValueError):
        decompose(H, [0.0, 0.0, 0.5, 1.0])


@given(seed=st.integers(0, 2**31 - 1))
def test_decompose_random_facet_points(seed):
    for x in sample_facet(H, 20, seed):
        d = decompose(H, x)
        assert np.all(d.gamma >= 0) and abs(d.gamma.sum() - 1) <= 1e-12
        a = d.anchors
        assert np.max(np.abs(a[:, 3] * a[:, 2] - a[:, 0] ** 2 - a[:, 1] ** 2)) <= 1e-12
        assert np.linalg.norm(d.reconstruct() - x) <= 1e-9


def test_projection_examples():
    assert projection_predicates(H, [0.3, 0.2, 0.5, 1.0]) == {"PQl": True, "PQv": True, "Plv": True, "Qlv": True}
    p = projection_predicates(H, [0, 0, 1.0, 1.21])
    assert p["PQl"] and p["PQv"] and not p["Plv"] and not p["Qlv"]
    assert not projection_predicates(H, [1.0, 0, 0, 1.0])["PQl"]


def test_omega0_samples_exact_and_inside():
    s = sample_omega0(H, 5000, 3)
    assert s.shape == (5000, 4)
    assert np.max(np.abs(s[:, 3] * s[:, 2] - s[:, 0] ** 2 - s[:, 1] ** 2)) <= 1e-15
    assert all(membership(H, x).inside for x in s)
    assert sample_omega0(H, 0, 3).shape == (0, 4)
    assert np.array_equal(sample_omega0(H, 100, 9), sample_omega0(H, 100, 9))


@given(rb=st.floats(0.001, 0.1), rc=st.floats(0.001, 0.1), smax=st.floats(0.1, 5), seed=st.integers(0, 1000))
def test_des_cuts_valid_on_loss_set(rb, rc, smax, seed):
    h = DesHull(rb, rc, smax, 0.81, 1.21)
    y = sample_des_set(h, 2000, seed)
    assert all(membership(h, p).inside for p in y)


def test_support_gap_box_direction():
    s = sample_omega0(H, 10000, 1)
    assert support_value(H, [0, 0, 0, 1]) == pytest.approx(0.81, abs=1e-8)
    assert support_gap(H, [0, 0, 0, 1], s) <= 1e-12


def test_support_gap_l_plus_v():
    s = sample_omega0(H, 100000, 1)
    g = support_gap(H, [0, 0, 1, 1], s)
    assert -1e-3 <= g <= 1e-12


def test_support_gap_l_plus_v_shrinks_like_inverse_sqrt():
    # near the minimizer the sampled mass of {l + v - v_min < eps} grows like eps**2,
    # so the expected gap scales as n**-0.5
    gaps = {n: np.mean([support_gap(H, [0, 0, 1, 1], sample_omega0(H, n, s)) for s in range(8)])
            for n in (10_000, 1_000_000)}
    assert all(g <= 1e-12 for g in gaps.values())
    ratio = gaps[10_000] / gaps[1_000_000]
    assert 5.0 <= ratio <= 20.0


def test_support_gap_needs_samples():
    with pytest.raises(ValueError):
        support_gap(H, [0, 0, 0, 1], np.zeros((0, 4)))


@pytest.mark.parametrize("bounds", [(0.81, 1.21, 1.0, 1.0), (0.9, 1.1, 1.0, 2.5), (0.7, 1.3, 0.95, 0.4)])
def test_hull_support_equals_exact_support(bounds):
    # the branch set is not convex but its support function is that of its hull
    h = BranchHull.from_bounds(*bounds)
    for d in random_directions(40, 11):
        assert support_value(h, d) == pytest.approx(omega0_support(h, d), abs=1e-6)


def test_cone_only_support_is_strictly_weaker():
    from chrelax import conic
    from chrelax.hull import hull_problem

    d = np.array([0, 0, -1.0, -1.0])
    cone_only = conic.solve(hull_problem(H, d, cuts=False)).objective
    assert cone_only < omega0_support(H, d) - 0.1
