"""Gluings, correspondences, Gromov-W1 upper bounds, and the flow distance
with its exceptional-set search and triangle certificate."""

import math

import numpy as np
import pytest

import metricflow as mf
from metricflow import (
    FiniteMetricSpace,
    GluedSpace,
    InputError,
    MetricFlow,
    MetricFlowPair,
    ProbMeasure,
    TimeGrid,
)

from conftest import C_STAR, two_point_space


def tp_pair(flow, anchor):
    return MetricFlowPair(flow, mf.conj_backward(flow, flow.grid.times[-1], anchor))


# ---------------------------------------------------------------------------
# glued spaces
# ---------------------------------------------------------------------------


def test_glued_space_validate_and_push():
    ambient = FiniteMetricSpace(
        labels=("p", "q", "r"),
        dist=np.array([[0.0, 1.0, 2.0], [1.0, 0.0, 1.0], [2.0, 1.0, 0.0]]),
    )
    glued = GluedSpace(ambient=ambient, embeddings=((0, 1), (1, 2)))
    seg = FiniteMetricSpace(labels=("x", "y"), dist=np.array([[0.0, 1.0], [1.0, 0.0]]))
    glued.validate((seg, seg))
    far = FiniteMetricSpace(labels=("x", "y"), dist=np.array([[0.0, 2.0], [2.0, 0.0]]))
    with pytest.raises(InputError, match="isometric"):
        glued.validate((seg, far))
    with pytest.raises(InputError):
        glued.validate((seg,))
    pushed = glued.push(1, ProbMeasure(np.array([0.3, 0.7])))
    assert np.array_equal(pushed.weights, np.array([0.0, 0.3, 0.7]))


def test_glue_two_slices_cross_distance():
    """Routing through the best kernel point: d(x, y) =
    min_w (d_t(y, w) + expected d_s(x, .) under the kernel at w) + delta."""
    space_s = two_point_space(1.0)
    space_t = two_point_space(0.8)
    link = {0: np.array([0.8, 0.2]), 1: np.array([0.2, 0.8])}
    # d_t - W1(kernels) = 0.8 - 0.6 = 0.2, so any delta >= 0.2 is admissible
    glued = mf.glue_two_slices(space_s, space_t, link, delta=0.25)
    glued.validate((space_s, space_t))
    d = glued.ambient.dist
    assert d[0, 2] == pytest.approx(0.2 + 0.25, abs=1e-15)
    assert d[0, 3] == pytest.approx(0.8 + 0.25, abs=1e-15)  # route via w = 1
    report = mf.check_metric_axioms(glued.ambient, require_positive=False)
    assert report.ok


def test_glue_two_slices_rejects_bad_hypothesis():
    space_s = two_point_space(1.0)
    link = {0: np.array([0.8, 0.2]), 1: np.array([0.2, 0.8])}
    with pytest.raises(InputError, match="hypothesis"):
        mf.glue_two_slices(space_s, two_point_space(0.8), link, delta=0.1)
    with pytest.raises(InputError, match="hypothesis"):
        # d_t below the kernel W1 distance: the gap goes negative
        mf.glue_two_slices(space_s, two_point_space(0.5), link, delta=0.3)
    with pytest.raises(InputError):
        mf.glue_two_slices(space_s, two_point_space(0.8), link, delta=-0.1)
    with pytest.raises(InputError):
        mf.glue_two_slices(space_s, two_point_space(0.8), {}, delta=0.3)


# ---------------------------------------------------------------------------
# correspondences
# ---------------------------------------------------------------------------


def test_union_correspondence_eps_is_half_distortion():
    grid = TimeGrid.uniform(0.0, 1.0, 4)
    f1 = mf.two_point_flow(C_STAR, 1.0, grid)
    f2 = mf.two_point_flow(C_STAR, 1.2, grid)
    c = mf.build_union_correspondence(f1, f2, [(0, 0), (1, 1)])
    assert c.time_indices == tuple(range(5))
    for eps in c.extras["eps_by_time"].values():
        assert eps == pytest.approx(0.1, abs=1e-15)
    collapsed = mf.build_union_correspondence(f1, f2, [(0, 0), (1, 0)])
    assert collapsed.extras["eps_by_time"][0] == pytest.approx(0.5, abs=1e-15)
    with pytest.raises(InputError):
        mf.build_union_correspondence(f1, f2, [])
    with pytest.raises(InputError):
        mf.build_union_correspondence(f1, f2, [(0, 5)])
    other = mf.two_point_flow(C_STAR, 1.0, TimeGrid.uniform(0.0, 2.0, 4))
    with pytest.raises(InputError, match="grid"):
        mf.build_union_correspondence(f1, other, [(0, 0)])


def test_combine_correspondences_three_way():
    grid = TimeGrid.uniform(0.0, 1.0, 4)
    fa, fb, fc = (mf.two_point_flow(C_STAR, d, grid) for d in (1.0, 1.1, 1.2))
    ident = [(0, 0), (1, 1)]
    c12 = mf.build_union_correspondence(fa, fb, ident)
    c23 = mf.build_union_correspondence(fb, fc, ident)
    c123 = mf.combine_correspondences(c12, c23)
    assert c123.n_flows == 3
    for t in c123.time_indices:
        g = c123.ambient_at(t)
        g.validate((fa.slices[t], fb.slices[t], fc.slices[t]))
    view = c123.pair_view(0, 2)
    assert view.n_flows == 2
    early = mf.build_union_correspondence(fa, fb, ident, time_indices=(0, 1))
    late = mf.build_union_correspondence(fb, fc, ident, time_indices=(3, 4))
    with pytest.raises(InputError, match="no participating times"):
        mf.combine_correspondences(early, late)


# ---------------------------------------------------------------------------
# Gromov-W1 upper bounds
# ---------------------------------------------------------------------------


def test_gw1_identical_inputs_give_zero():
    space = two_point_space(1.0)
    mu = ProbMeasure(np.array([0.3, 0.7]))
    bound = mf.gw1_upper_bound(space, mu, space, mu)
    assert bound.value == 0.0
    assert bound.exhaustive


def test_gw1_rescaled_two_point():
    mu = ProbMeasure.uniform(2)
    bound = mf.gw1_upper_bound(two_point_space(1.0), mu, two_point_space(1.1), mu)
    assert bound.value == pytest.approx(0.05, abs=1e-12)


def test_gw1_relabeling_invariance():
    rng = np.random.default_rng(7)
    pts = rng.normal(size=(5, 3))
    d = np.sqrt(((pts[:, None] - pts[None, :]) ** 2).sum(axis=2))
    space = FiniteMetricSpace(labels=tuple("abcde"), dist=d)
    mu = ProbMeasure(rng.dirichlet(np.ones(5)))
    perm = np.array([2, 0, 4, 1, 3])
    shuffled = FiniteMetricSpace(labels=tuple("vwxyz"), dist=d[np.ix_(perm, perm)])
    mu_p = ProbMeasure(mu.weights[perm])
    bound = mf.gw1_upper_bound(space, mu, shuffled, mu_p)
    assert bound.value <= 1e-10
    assert dict(bound.relation) == {int(i): int(np.nonzero(perm == i)[0][0]) for i in range(5)}


def test_gw1_exhaustive_no_worse_than_explicit_relation():
    rng = np.random.default_rng(8)
    d1 = np.abs(rng.normal(size=(4, 4)))
    d1 = d1 + d1.T
    np.fill_diagonal(d1, 0.0)
    # force the triangle inequality by shortest-path closure
    for k in range(4):
        d1 = np.minimum(d1, d1[:, [k]] + d1[[k], :])
    s1 = FiniteMetricSpace(labels=tuple("abcd"), dist=d1)
    s2 = FiniteMetricSpace(labels=tuple("wxyz"), dist=1.3 * d1)
    mu1, mu2 = ProbMeasure(rng.dirichlet(np.ones(4))), ProbMeasure(rng.dirichlet(np.ones(4)))
    best = mf.gw1_upper_bound(s1, mu1, s2, mu2)
    explicit = mf.gw1_upper_bound(s1, mu1, s2, mu2, relation=[(i, i) for i in range(4)])
    assert best.value <= explicit.value + 1e-12
    assert not explicit.exhaustive


def test_gw1_exhaustive_limits():
    n = 7
    d = np.abs(np.subtract.outer(np.arange(n), np.arange(n))).astype(float)
    space = FiniteMetricSpace(labels=tuple(str(i) for i in range(n)), dist=d)
    mu = ProbMeasure.uniform(n)
    with pytest.raises(InputError, match="6"):
        mf.gw1_upper_bound(space, mu, space, mu)
    small = two_point_space(1.0)
    with pytest.raises(InputError):
        mf.gw1_upper_bound(small, ProbMeasure.uniform(2), space, mu)


# ---------------------------------------------------------------------------
# the flow distance
# ---------------------------------------------------------------------------


def _coupling_oracle_value(c, pair1, pair2):
    """Independent recomputation for two-point flows: couplings of the
    (a, 1-a) x (b, 1-b) marginals form a one-parameter family, each cost
    integral is affine in the parameter, so the best worst-case integral is
    found by ternary search on a convex piecewise-linear function."""

    def cost_matrix(s_idx, t_idx):
        g = c.ambient_at(s_idx)
        M = np.zeros((2, 2))
        for x1 in range(2):
            for x2 in range(2):
                nu1 = ProbMeasure(pair1.flow.kernel(s_idx, t_idx)[x1])
                nu2 = ProbMeasure(pair2.flow.kernel(s_idx, t_idx)[x2])
                M[x1, x2] = mf.w1_distance(g.ambient, g.push(0, nu1), g.push(1, nu2)).value
        return M

    def r_t(t_idx):
        a = pair1.mu.measure_at(t_idx).weights[0]
        b = pair2.mu.measure_at(t_idx).weights[0]
        costs = [cost_matrix(s, t_idx) for s in range(t_idx + 1)]

        def worst(th):
            q = np.array([[th, a - th], [b - th, 1.0 - a - b + th]])
            return max(float((M * q).sum()) for M in costs)

        lo, hi = max(0.0, a + b - 1.0), min(a, b)
        for _ in range(200):
            m1, m2 = lo + (hi - lo) / 3.0, hi - (hi - lo) / 3.0
            if worst(m1) <= worst(m2):
                hi = m2
            else:
                lo = m1
        return worst(0.5 * (lo + hi))

    return max(r_t(t) for t in c.time_indices)


@pytest.fixture(scope="module")
def tp_corr():
    grid = TimeGrid.uniform(0.0, 1.0, 4)
    f1 = mf.two_point_flow(C_STAR, 1.0, grid)
    f2 = mf.two_point_flow(C_STAR, 1.1, grid)
    c = mf.build_union_correspondence(f1, f2, [(0, 0), (1, 1)])
    return c, f1, f2


def test_f_distance_self_is_zero(tp_corr):
    _, f1, _ = tp_corr
    c_self = mf.build_union_correspondence(f1, f1, [(0, 0), (1, 1)])
    pair = tp_pair(f1, ProbMeasure.uniform(2))
    rep = mf.f_distance_within(c_self, pair, pair)
    assert rep.value == 0.0
    assert rep.E_indices == ()


def test_f_distance_frozen_value_uniform(tp_corr):
    c, f1, f2 = tp_corr
    p1, p2 = tp_pair(f1, ProbMeasure.uniform(2)), tp_pair(f2, ProbMeasure.uniform(2))
    rep = mf.f_distance_within(c, p1, p2)
    assert rep.value == pytest.approx(0.050025906092710626, abs=1e-12)
    assert rep.value >= c.extras["eps_by_time"][0]  # crossing costs at least eps
    assert rep.E_indices == () and rep.mode == "empty" and rep.flags == ()
    # every certified integral respects the value
    assert all(v <= rep.value + 1e-9 for v in rep.per_pair_integrals.values())
    assert rep.E_measure <= rep.value**2


def test_f_distance_symmetric_bit_for_bit(tp_corr):
    c, f1, f2 = tp_corr
    for anchor in (ProbMeasure.uniform(2), ProbMeasure.delta(0, 2)):
        p1, p2 = tp_pair(f1, anchor), tp_pair(f2, anchor)
        fwd = mf.f_distance_within(c, p1, p2)
        bwd = mf.f_distance_within(c.pair_view(1, 0), p2, p1)
        assert bwd.value == fwd.value
        assert fwd.swapped != bwd.swapped


def test_f_distance_matches_coupling_family_oracle(tp_corr):
    c, f1, f2 = tp_corr
    for anchor in (ProbMeasure.uniform(2), ProbMeasure.delta(0, 2)):
        p1, p2 = tp_pair(f1, anchor), tp_pair(f2, anchor)
        rep = mf.f_distance_within(c, p1, p2)
        oracle = _coupling_oracle_value(c, p1, p2)
        assert rep.value == pytest.approx(oracle, abs=1e-6)


def test_f_distance_top_time_pushforward_bound(tp_corr):
    c, f1, f2 = tp_corr
    p1, p2 = tp_pair(f1, ProbMeasure.uniform(2)), tp_pair(f2, ProbMeasure.uniform(2))
    rep = mf.f_distance_within(c, p1, p2)
    for t in rep.r_by_time:
        g = c.ambient_at(t)
        top = mf.w1_distance(
            g.ambient, g.push(0, p1.mu.measure_at(t)), g.push(1, p2.mu.measure_at(t))
        ).value
        assert top <= rep.value + 1e-9


@pytest.fixture(scope="module")
def spiked_corr():
    """flow2's middle slice is blown up to distance 4: a time worth cutting."""
    grid = TimeGrid((0.0, 0.5, 1.0))
    f1 = mf.two_point_flow(C_STAR, 1.0, grid)
    kern = np.array([[0.9, 0.1], [0.1, 0.9]])
    f2 = MetricFlow(
        grid,
        (two_point_space(1.0), two_point_space(4.0), two_point_space(1.0)),
        adjacent_kernels=(kern, kern),
    )
    c = mf.build_union_correspondence(f1, f2, [(0, 0), (1, 1)])
    anchor = ProbMeasure.uniform(2)
    return c, tp_pair(f1, anchor), tp_pair(f2, anchor)


def test_f_distance_exhaustive_cuts_spike(spiked_corr):
    c, p1, p2 = spiked_corr
    emp = mf.f_distance_within(c, p1, p2)
    assert emp.value > 1.5  # dominated by the spiked slice
    exh = mf.f_distance_within(c, p1, p2, e_mode="exhaustive")
    assert exh.E_indices == (1,)
    # cutting the middle time leaves sqrt of its half-gap measure
    assert exh.value == pytest.approx(math.sqrt(0.5), abs=1e-12)
    assert exh.E_measure == pytest.approx(0.5, abs=1e-15)
    assert exh.value <= emp.value


def test_f_distance_greedy_is_flagged_and_weaker(spiked_corr):
    c, p1, p2 = spiked_corr
    grd = mf.f_distance_within(c, p1, p2, e_mode="greedy")
    assert "greedy" in grd.flags
    exh = mf.f_distance_within(c, p1, p2, e_mode="exhaustive")
    assert grd.value >= exh.value  # greedy may miss the best cut (here it does)


def test_f_distance_protected_times(spiked_corr):
    c, p1, p2 = spiked_corr
    prot = mf.f_distance_within(c, p1, p2, e_mode="exhaustive", J=(1,))
    assert 1 not in prot.E_indices
    assert prot.J_indices == (1,)
    exh = mf.f_distance_within(c, p1, p2, e_mode="exhaustive")
    assert prot.value >= exh.value
    with pytest.raises(InputError):
        mf.f_distance_within(c, p1, p2, J=(9,))


def test_f_distance_input_validation(tp_corr):
    c, f1, f2 = tp_corr
    p1, p2 = tp_pair(f1, ProbMeasure.uniform(2)), tp_pair(f2, ProbMeasure.uniform(2))
    with pytest.raises(InputError):
        mf.f_distance_within(c, p1, p2, e_mode="annealed")
    other = mf.two_point_flow(C_STAR, 1.0, TimeGrid.uniform(0.0, 2.0, 4))
    with pytest.raises(InputError, match="grid"):
        mf.f_distance_within(c, tp_pair(other, ProbMeasure.uniform(2)), p2)
    fa, fb, fc = (mf.two_point_flow(C_STAR, d, c.grid) for d in (1.0, 1.1, 1.2))
    c12 = mf.build_union_correspondence(fa, fb, [(0, 0), (1, 1)])
    c23 = mf.build_union_correspondence(fb, fc, [(0, 0), (1, 1)])
    c3 = mf.combine_correspondences(c12, c23)
    with pytest.raises(InputError, match="two-flow"):
        mf.f_distance_within(c3, p1, p2)


def test_f_distance_json_payload(tp_corr):
    c, f1, f2 = tp_corr
    p1, p2 = tp_pair(f1, ProbMeasure.uniform(2)), tp_pair(f2, ProbMeasure.uniform(2))
    rep = mf.f_distance_within(c, p1, p2)
    doc = rep.to_json_dict()
    assert set(doc) == {
        "value", "E", "r_by_time", "per_pair_integrals", "mode", "flags", "J_indices",
    }
    assert doc["E"] == {"indices": [], "measure": 0.0}
    with_q = rep.to_json_dict(include_couplings=True)
    assert "couplings" in with_q
    q0 = np.array(with_q["couplings"]["0"])
    assert q0.shape == (2, 2) and q0.sum() == pytest.approx(1.0, abs=1e-12)


def test_f_triangle_certificate():
    grid = TimeGrid.uniform(0.0, 1.0, 4)
    fa, fb, fc = (mf.two_point_flow(C_STAR, d, grid) for d in (1.0, 1.1, 1.2))
    ident = [(0, 0), (1, 1)]
    c123 = mf.combine_correspondences(
        mf.build_union_correspondence(fa, fb, ident),
        mf.build_union_correspondence(fb, fc, ident),
    )
    anchor = ProbMeasure.uniform(2)
    tri = mf.f_triangle_check(
        c123, tp_pair(fa, anchor), tp_pair(fb, anchor), tp_pair(fc, anchor)
    )
    assert tri.holds
    assert tri.certificate_ok
    assert tri.d13.value <= tri.d12.value + tri.d23.value + 1e-8
    assert tri.certificate_value <= tri.d12.value + tri.d23.value + 1e-9
    assert tri.d12.value == pytest.approx(0.050025906092710626, abs=1e-12)
    assert tri.d23.value == pytest.approx(0.050122126241779, abs=1e-10)
    assert tri.d13.value == pytest.approx(0.10013692994887335, abs=1e-10)
    assert tri.E_union == ()
    with pytest.raises(InputError, match="three-flow"):
        mf.f_triangle_check(
            c123.pair_view(0, 1), tp_pair(fa, anchor), tp_pair(fb, anchor), tp_pair(fc, anchor)
        )
