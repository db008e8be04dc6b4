"""Exact transport layer: metric spaces, measures, couplings, W1 with dual
certificates, variance identities, mass-distribution functions, and the
finite-approximation lemma."""

import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

import metricflow as mf
from metricflow import (
    BFunction,
    CertificateError,
    Coupling,
    FiniteMetricSpace,
    InputError,
    ProbMeasure,
)

from conftest import euclidean_space, random_measure, random_space, two_point_space


# ---------------------------------------------------------------------------
# metric spaces
# ---------------------------------------------------------------------------


def test_metric_axioms_pass_on_point_cloud():
    space = random_space(np.random.default_rng(0), 12)
    rep = mf.check_metric_axioms(space)
    assert rep.ok
    assert rep.violations == ()


def test_metric_axioms_detect_asymmetry():
    # the constructor checks structure only; the audit finds the asymmetry
    space = FiniteMetricSpace(labels=("a", "b"), dist=np.array([[0.0, 1.0], [2.0, 0.0]]))
    rep = mf.check_metric_axioms(space)
    assert not rep.ok
    assert any(v.kind == "symmetry" for v in rep.violations)


def test_metric_axioms_detect_triangle_violation():
    d = np.array([[0.0, 1.0, 5.0], [1.0, 0.0, 1.0], [5.0, 1.0, 0.0]])
    space = FiniteMetricSpace(labels=("a", "b", "c"), dist=d)
    rep = mf.check_metric_axioms(space)
    assert not rep.ok
    assert any(v.kind == "triangle" for v in rep.violations)


def test_zero_offdiagonal_needs_relaxed_positivity():
    space = FiniteMetricSpace(labels=("a", "b"), dist=np.zeros((2, 2)))
    assert not mf.check_metric_axioms(space).ok
    assert mf.check_metric_axioms(space, require_positive=False).ok


def test_subspace_and_scaling():
    space = euclidean_space(np.array([0.0, 1.0, 3.0]))
    sub = space.subspace([0, 2])
    assert sub.n == 2
    assert sub.dist[0, 1] == 3.0
    assert space.scaled(2.0).diameter == pytest.approx(6.0, abs=0)
    assert space.index_of("p1") == 1
    with pytest.raises(InputError):
        space.index_of("nope")


# ---------------------------------------------------------------------------
# measures and couplings
# ---------------------------------------------------------------------------


def test_measure_must_be_probability():
    with pytest.raises(InputError):
        ProbMeasure(np.array([0.5, 0.4]))
    with pytest.raises(InputError):
        ProbMeasure(np.array([1.5, -0.5]))
    mu = ProbMeasure.delta(1, 3)
    assert mu.weights.tolist() == [0.0, 1.0, 0.0]
    assert ProbMeasure.uniform(4).weights.tolist() == [0.25] * 4
    assert ProbMeasure(np.array([0.0, 1.0])).support().tolist() == [1]


def test_coupling_marginals():
    rng = np.random.default_rng(3)
    q = rng.dirichlet(np.ones(12)).reshape(3, 4)
    c = Coupling(q)
    a, b = c.marginal_first(), c.marginal_second()
    assert np.allclose(a, q.sum(axis=1), atol=1e-15)
    assert np.allclose(b, q.sum(axis=0), atol=1e-15)
    ok, resid = c.check_marginals(ProbMeasure(a), ProbMeasure(b))
    assert ok and resid <= 1e-12
    with pytest.raises(InputError):
        c.check_marginals(ProbMeasure(b), ProbMeasure(a))  # shapes 4 vs 3
    with pytest.raises(InputError):
        Coupling(q * 0.5)  # total mass 1/2


def test_diagonal_and_independent_couplings():
    mu = ProbMeasure(np.array([0.25, 0.75]))
    nu = ProbMeasure(np.array([0.5, 0.5]))
    diag = Coupling.diagonal(mu)
    assert np.array_equal(diag.matrix, np.diag(mu.weights))
    ind = Coupling.independent(mu, nu)
    assert np.array_equal(ind.matrix, np.outer(mu.weights, nu.weights))


def test_glue_couplings_marginal_identities():
    rng = np.random.default_rng(7)
    mu1 = random_measure(rng, 4)
    mu2 = ProbMeasure(rng.dirichlet(np.ones(4)))
    mu3 = random_measure(rng, 5)
    sp12 = mf.w1_distance(random_space(rng, 4), mu1, mu2).coupling
    # manual coupling mu2 -> mu3 via independence
    q23 = Coupling.independent(mu2, mu3)
    q123 = mf.glue_couplings(sp12, q23)
    assert q123.shape == (4, 4, 5)
    assert np.abs(q123.sum(axis=(1, 2)) - mu1.weights).max() <= 1e-12
    assert np.abs(q123.sum(axis=(0, 1)) - mu3.weights).max() <= 1e-12
    assert np.abs(q123.sum(axis=2) - sp12.matrix).max() <= 1e-12
    assert np.abs(q123.sum(axis=0) - q23.matrix).max() <= 1e-12
    # the (1,3)-marginal is itself a valid coupling
    ok, _ = Coupling(q123.sum(axis=1)).check_marginals(mu1, mu3)
    assert ok


def test_glue_couplings_rejects_mismatched_middle():
    mu1 = ProbMeasure(np.array([0.5, 0.5]))
    mu2 = ProbMeasure(np.array([0.25, 0.75]))
    q12 = Coupling.independent(mu1, mu1)
    q23 = Coupling.independent(mu2, mu1)
    with pytest.raises(InputError):
        mf.glue_couplings(q12, q23)


# ---------------------------------------------------------------------------
# W1 exactness
# ---------------------------------------------------------------------------


def test_w1_two_point_closed_form():
    space = two_point_space(d=2.5)
    for a, b in ((0.5, 0.5), (0.2, 0.9), (1.0, 0.0), (0.37, 0.61)):
        mu = ProbMeasure(np.array([a, 1 - a]))
        nu = ProbMeasure(np.array([b, 1 - b]))
        res = mf.w1_distance(space, mu, nu)
        assert res.value == pytest.approx(abs(a - b) * 2.5, abs=1e-13)
        res.certificate.validate(space, mu, nu)


def test_w1_identical_measures_is_exact_zero():
    rng = np.random.default_rng(11)
    space = random_space(rng, 9)
    mu = random_measure(rng, 9)
    res = mf.w1_distance(space, mu, ProbMeasure(mu.weights.copy()))
    assert res.value == 0.0
    assert np.array_equal(res.coupling.matrix, np.diag(mu.weights))


def test_w1_line_matches_cdf_formula():
    """On a 1-D euclidean space, W1 equals the L1 distance between CDFs:
    sum over consecutive gaps of gap * |F1 - F2|. Independent oracle."""
    rng = np.random.default_rng(23)
    for _ in range(25):
        n = int(rng.integers(2, 12))
        pts = np.sort(rng.normal(size=n) * 3)
        space = euclidean_space(pts)
        mu, nu = random_measure(rng, n), random_measure(rng, n, sparse=True)
        gaps = np.diff(pts)
        cdf_gap = np.abs(np.cumsum(mu.weights - nu.weights)[:-1])
        oracle = float((gaps * cdf_gap).sum())
        res = mf.w1_distance(space, mu, nu)
        assert res.value == pytest.approx(oracle, abs=1e-9, rel=1e-9)


def test_w1_symmetry_is_bit_exact():
    rng = np.random.default_rng(5)
    space = random_space(rng, 7)
    mu, nu = random_measure(rng, 7), random_measure(rng, 7)
    assert mf.w1_distance(space, mu, nu).value == mf.w1_distance(space, nu, mu).value


def test_w1_certificate_gap_is_certified():
    rng = np.random.default_rng(19)
    space = random_space(rng, 20)
    mu, nu = random_measure(rng, 20), random_measure(rng, 20)
    res = mf.w1_distance(space, mu, nu)
    cert = res.certificate
    assert 0.0 <= cert.gap <= 1e-8 * max(1.0, cert.primal_value)
    # potential is 1-Lipschitz
    lip = np.abs(cert.dual_potential[:, None] - cert.dual_potential[None, :]) - space.dist
    assert lip.max() <= 1e-12 * max(1.0, space.diameter)


def test_certificate_validate_rejects_tampering():
    space = two_point_space()
    mu = ProbMeasure(np.array([1.0, 0.0]))
    nu = ProbMeasure(np.array([0.0, 1.0]))
    res = mf.w1_distance(space, mu, nu)
    bad = mf.TransportCertificate(
        primal_value=res.certificate.primal_value,
        dual_potential=np.array([5.0, 0.0]),  # 5-Lipschitz
        gap=res.certificate.gap,
    )
    with pytest.raises(CertificateError):
        bad.validate(space, mu, nu)


def test_wp_distance_consistency():
    space = two_point_space(d=2.0)
    mu = ProbMeasure(np.array([0.8, 0.2]))
    nu = ProbMeasure(np.array([0.3, 0.7]))
    w1 = mf.w1_distance(space, mu, nu).value
    assert mf.wp_distance(space, mu, nu, 1.0) == pytest.approx(w1, abs=1e-12)
    # two-point W_p: mass |a-b| moves across distance d
    assert mf.wp_distance(space, mu, nu, 2.0) == pytest.approx(
        2.0 * math.sqrt(0.5), abs=1e-9
    )
    # p-monotonicity (Jensen)
    assert mf.wp_distance(space, mu, nu, 1.0) <= mf.wp_distance(space, mu, nu, 2.0) + 1e-12
    with pytest.raises(InputError):
        mf.wp_distance(space, mu, nu, 0.5)


# ---------------------------------------------------------------------------
# variance
# ---------------------------------------------------------------------------


def test_variance_closed_form_two_point():
    space = two_point_space(d=3.0)
    mu = ProbMeasure(np.array([0.25, 0.75]))
    nu = ProbMeasure(np.array([0.6, 0.4]))
    expect = 9.0 * (0.25 * 0.4 + 0.75 * 0.6)
    assert mf.variance(space, mu, nu) == pytest.approx(expect, abs=1e-15)
    assert mf.variance(space, mu) == pytest.approx(9.0 * 2 * 0.25 * 0.75, abs=1e-15)
    assert mf.variance(space, ProbMeasure.delta(0, 2)) == 0.0


@given(st.integers(0, 10_000))
@settings(max_examples=30, deadline=None)
def test_variance_bilinearity(seed):
    """Var(sum a_i mu_i, sum a_j' nu_j) = sum_ij a_i a_j' Var(mu_i, nu_j)."""
    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, 7))
    space = random_space(rng, n)
    mus = [random_measure(rng, n) for _ in range(2)]
    nus = [random_measure(rng, n) for _ in range(3)]
    a = rng.dirichlet(np.ones(2))
    b = rng.dirichlet(np.ones(3))
    mix_mu = ProbMeasure(a[0] * mus[0].weights + a[1] * mus[1].weights)
    mix_nu = ProbMeasure(sum(b[j] * nus[j].weights for j in range(3)))
    lhs = mf.variance(space, mix_mu, mix_nu)
    rhs = sum(
        a[i] * b[j] * mf.variance(space, mus[i], nus[j])
        for i in range(2)
        for j in range(3)
    )
    assert lhs == pytest.approx(rhs, abs=1e-12 * max(1.0, rhs))


@given(st.integers(0, 10_000))
@settings(max_examples=30, deadline=None)
def test_variance_sandwich_and_triangle(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, 9))
    space = random_space(rng, n)
    m1, m2, m3 = (random_measure(rng, n) for _ in range(3))
    w = mf.w1_distance(space, m1, m2).value
    root = math.sqrt(mf.variance(space, m1, m2))
    assert w <= root + 1e-9
    assert root <= w + math.sqrt(mf.variance(space, m1)) + math.sqrt(
        mf.variance(space, m2)
    ) + 1e-9
    assert math.sqrt(mf.variance(space, m1, m3)) <= math.sqrt(
        mf.variance(space, m1, m2)
    ) + math.sqrt(mf.variance(space, m2, m3)) + 1e-9


@given(st.integers(0, 10_000))
@settings(max_examples=25, deadline=None)
def test_w1_triangle_inequality(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, 8))
    space = random_space(rng, n)
    m1, m2, m3 = (random_measure(rng, n, sparse=bool(seed % 2)) for _ in range(3))
    d12 = mf.w1_distance(space, m1, m2).value
    d23 = mf.w1_distance(space, m2, m3).value
    d13 = mf.w1_distance(space, m1, m3).value
    assert d13 <= d12 + d23 + 1e-9


# ---------------------------------------------------------------------------
# mass-distribution function and class membership
# ---------------------------------------------------------------------------


def test_mass_distribution_two_point_enumeration():
    space = two_point_space()
    mu = ProbMeasure.uniform(2)
    assert mf.mass_distribution_fn(space, mu, 1.0, 0.5) == pytest.approx(0.5, abs=0)
    assert mf.mass_distribution_fn(space, mu, 1.0, 1.0) == 1.0


def test_mass_distribution_single_point():
    space = euclidean_space(np.array([0.0]))
    mu = ProbMeasure(np.array([1.0]))
    for eps in (0.1, 0.5, 1.0):
        assert mf.mass_distribution_fn(space, mu, 2.0, eps) == 1.0


@given(st.integers(0, 10_000))
@settings(max_examples=30, deadline=None)
def test_mass_distribution_monotone_in_eps(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, 9))
    space = random_space(rng, n)
    mu = random_measure(rng, n)
    r = float(rng.uniform(0.2, 3.0))
    eps_grid = np.linspace(0.05, 1.0, 9)
    vals = [mf.mass_distribution_fn(space, mu, r, float(e)) for e in eps_grid]
    assert all(a <= b + 1e-15 for a, b in zip(vals, vals[1:]))
    assert vals[-1] <= 1.0 + 1e-15


def test_bfunction_step_evaluation():
    b = BFunction(eps_grid=(0.25, 0.5, 1.0), values=(0.1, 0.2, 0.9))
    assert b(0.25) == 0.1
    assert b(0.3) == 0.1
    assert b(0.5) == 0.2
    assert b(1.0) == 0.9
    assert BFunction.constant(0.3)(0.7) == 0.3
    # below the sampled grid the step function extends left
    assert b(0.1) == 0.1


def test_in_class_M_examples():
    space = two_point_space()
    mu = ProbMeasure.uniform(2)
    ok = mf.in_class_M(space, mu, r=1.0, V=1.0, b=BFunction.constant(0.25))
    assert ok.ok and ok.var_value == pytest.approx(0.5, abs=0)
    bad = mf.in_class_M(space, mu, r=1.0, V=0.4, b=BFunction.constant(0.25))
    assert not bad.ok
    single = euclidean_space(np.array([0.0]))
    assert mf.in_class_M(single, ProbMeasure(np.ones(1)), 1.0, 0.0, BFunction.constant(1.0)).ok


def test_in_class_M_restricts_to_support():
    space = euclidean_space(np.array([0.0, 1.0, 2.0]))
    mu = ProbMeasure(np.array([0.5, 0.0, 0.5]))
    rep = mf.in_class_M(space, mu, r=2.0, V=1.0, b=BFunction.constant(0.25))
    assert rep.restricted
    assert rep.support_indices == (0, 2)


def test_finite_approximation_ten_point_line():
    pts = 0.1 * np.arange(10)
    space = euclidean_space(pts)
    mu = ProbMeasure.uniform(10)
    b = BFunction.constant(0.05)
    for alpha in (0.5, 0.25):
        fa = mf.finite_approximation(space, mu, r=1.0, alpha=alpha, V=1.0, b=b)
        w = fa.measure.weights
        scaled = w * fa.N
        assert np.abs(scaled - np.round(scaled)).max() <= 1e-9
        sub = space.subspace(fa.subset_indices)
        check = mf.w1_distance(space, mu, _embed(fa, space)).value
        assert check <= alpha * 1.0 + 1e-12
        assert fa.bound <= alpha * 1.0
        assert sub.n <= fa.N


def _embed(fa, space):
    w = np.zeros(space.n)
    for idx, mass in zip(fa.subset_indices, fa.measure.weights):
        w[idx] += mass
    return ProbMeasure(w)


def test_finite_approximation_trivial_cases():
    space = euclidean_space(np.array([0.0, 1.0, 2.0]))
    mu = ProbMeasure(np.array([0.5, 0.5, 0.0]))
    fa = mf.finite_approximation(space, mu, r=1.0, alpha=10.0, V=1.0, b=BFunction.constant(0.1))
    assert fa.bound <= 10.0
    assert set(fa.subset_indices) <= {0, 1, 2}
    with pytest.raises(InputError):
        # V = 0 puts a nondegenerate measure outside the class
        mf.finite_approximation(space, mu, r=1.0, alpha=0.5, V=0.0, b=BFunction.constant(0.1))


def test_product_space_pythagoras():
    s1 = two_point_space(d=3.0)
    s2 = two_point_space(d=4.0)
    prod = mf.product_space(s1, s2)
    assert prod.n == 4
    assert prod.dist.max() == pytest.approx(5.0, abs=1e-12)
