import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import special

from priorcvae.data import PriorDataset
from priorcvae.gp import (
    Grid,
    HyperPrior,
    KernelSpec,
    NotPositiveDefiniteError,
    build_covariance,
    cholesky_lower,
    empirical_covariance,
    frobenius_distance,
    kernel_eval,
    kernel_matrix,
    kernel_matrix_dlengthscale,
    sample_gp,
    sample_gp_dataset,
    sample_hyperprior,
)

FAMILIES = ["rbf", "matern12", "matern52"]


# ---------------------------------------------------------------- kernel_eval


@pytest.mark.parametrize("family", FAMILIES)
def test_zero_distance_gives_variance(family):
    spec = KernelSpec(family, 0.2, variance=1.7)
    assert kernel_eval(spec, 0.3, 0.3) == pytest.approx(1.7)


def test_lin_rbf_vanishes_at_centre():
    spec = KernelSpec("lin_rbf", 0.2, c_lin=0.4)
    assert kernel_eval(spec, 0.4, 0.9) == 0.0
    assert kernel_eval(spec, 0.4, 0.4) == 0.0


def test_rbf_unit_lengthscale_distance_two():
    # independent scalar evaluation: exp(-d^2 / 2) with d = 2
    frozen = 0.1353352832366127
    assert kernel_eval(KernelSpec("rbf", 1.0), 0.0, 2.0) == pytest.approx(frozen, rel=1e-14)
    assert kernel_eval(KernelSpec("rbf", 1.0), [0.0, 0.0], [2.0, 0.0]) == pytest.approx(math.exp(-2.0), rel=1e-14)


def test_matern52_closed_form():
    ell, r = 0.3, 0.45
    a = math.sqrt(5) * r / ell
    expected = (1 + a + a * a / 3) * math.exp(-a)
    assert kernel_eval(KernelSpec("matern52", ell), 0.1, 0.1 + r) == pytest.approx(expected, rel=1e-13)


def test_dimension_mismatch_rejected():
    with pytest.raises(ValueError):
        kernel_eval(KernelSpec("rbf", 0.2), [0.0, 1.0], [0.0])


@pytest.mark.parametrize(
    "kwargs",
    [
        dict(family="cosine", lengthscale=0.2),
        dict(family="rbf", lengthscale=0.0),
        dict(family="rbf", lengthscale=0.2, variance=-1.0),
        dict(family="lin_rbf", lengthscale=0.2),
        dict(family="rbf", lengthscale=0.2, c_lin=0.4),
    ],
)
def test_invalid_kernel_specs(kwargs):
    with pytest.raises(ValueError):
        KernelSpec(**kwargs)


@settings(max_examples=60, deadline=None)
@given(
    family=st.sampled_from(FAMILIES + ["lin_rbf"]),
    ell=st.floats(0.01, 2.0),
    x=st.floats(-2, 2),
    y=st.floats(-2, 2),
)
def test_kernel_symmetric_and_nonnegative_on_diagonal(family, ell, x, y):
    spec = KernelSpec(family, ell, c_lin=0.4 if family == "lin_rbf" else None)
    assert kernel_eval(spec, x, y) == pytest.approx(kernel_eval(spec, y, x), abs=1e-15)
    assert kernel_eval(spec, x, x) >= 0.0


@pytest.mark.parametrize("family", FAMILIES + ["lin_rbf"])
def test_lengthscale_derivative_matches_finite_difference(family):
    x = np.linspace(0, 1, 7)
    spec = KernelSpec(family, 0.3, c_lin=0.4 if family == "lin_rbf" else None)
    h = 1e-6
    fd = (kernel_matrix(spec.with_lengthscale(0.3 + h), x) - kernel_matrix(spec.with_lengthscale(0.3 - h), x)) / (2 * h)
    np.testing.assert_allclose(kernel_matrix_dlengthscale(spec, x), fd, rtol=1e-6, atol=1e-8)


# ---------------------------------------------------------------- build_covariance / cholesky


def test_single_point_covariance():
    K = build_covariance(KernelSpec("rbf", 0.2), Grid.regular(1), jitter=0.0)
    np.testing.assert_array_equal(K, [[1.0]])


def test_two_point_matern12():
    K = build_covariance(KernelSpec("matern12", 1.0), Grid(np.array([0.0, 1.0])), jitter=0.0)
    e = math.exp(-1.0)
    np.testing.assert_allclose(K, [[1.0, e], [e, 1.0]], rtol=1e-15)


def test_negative_jitter_rejected():
    with pytest.raises(ValueError):
        build_covariance(KernelSpec("rbf", 0.2), Grid.regular(3), jitter=-1.0)


def test_cholesky_identity_and_hand_example():
    np.testing.assert_array_equal(cholesky_lower(np.eye(3)), np.eye(3))
    np.testing.assert_allclose(cholesky_lower([[4.0, 2.0], [2.0, 5.0]]), [[2.0, 0.0], [1.0, 2.0]], rtol=1e-15)


def test_cholesky_names_failing_pivot():
    K = np.diag([1.0, 2.0, -1.0, 4.0])
    with pytest.raises(NotPositiveDefiniteError) as err:
        cholesky_lower(K)
    assert err.value.pivot == 2
    assert "pivot 2" in str(err.value)


def test_cholesky_rejects_non_square():
    with pytest.raises(ValueError):
        cholesky_lower(np.ones((2, 3)))


@pytest.mark.parametrize("family", FAMILIES + ["lin_rbf"])
@pytest.mark.parametrize("ell", [0.01, 0.1, 0.5, 1.0])
@pytest.mark.parametrize("n", [80, 100])
def test_experiment_grids_factorize(family, ell, n):
    spec = KernelSpec(family, ell, c_lin=0.4 if family == "lin_rbf" else None)
    K = build_covariance(spec, Grid.regular(n))
    np.testing.assert_array_equal(K, K.T)
    L = cholesky_lower(K)
    assert np.allclose(np.triu(L, 1), 0.0)
    assert frobenius_distance(L @ L.T, K) <= 1e-8 * np.linalg.norm(K)


# ---------------------------------------------------------------- sampling


def test_sample_gp_deterministic_and_shaped():
    spec, grid = KernelSpec("rbf", 0.2), Grid.regular(20)
    a = sample_gp(spec, grid, 1500, 3)
    b = sample_gp(spec, grid, 1500, 3)
    assert a.draws.shape == (1500, 20)
    np.testing.assert_array_equal(a.draws, b.draws)
    np.testing.assert_array_equal(a.conditions, 0.2)
    assert not np.array_equal(a.draws, sample_gp(spec, grid, 1500, 4).draws)


def test_sample_gp_degenerate_variance():
    # a 1-point grid whose variance is dominated by jitter only
    spec = KernelSpec("rbf", 0.2, variance=1e-300)
    d = sample_gp(spec, Grid.regular(1), 1, 0, jitter=1e-6)
    assert abs(d.draws[0, 0]) < 5e-3


def test_sample_gp_count_validated():
    with pytest.raises(ValueError):
        sample_gp(KernelSpec("rbf", 0.2), Grid.regular(3), 0, 0)


def test_sample_gp_propagates_cholesky_failure():
    with pytest.raises(np.linalg.LinAlgError):
        sample_gp(KernelSpec("rbf", 5.0), Grid.regular(60), 2, 0, jitter=0.0)


def test_sample_gp_covariance_oracle():
    spec, grid = KernelSpec("rbf", 0.2), Grid.regular(80)
    C = empirical_covariance(sample_gp(spec, grid, 100_000, 11))
    assert np.max(np.abs(C - kernel_matrix(spec, grid.points))) < 0.05


def test_hierarchical_dataset_conditions_follow_prior():
    prior = HyperPrior.uniform(0.05, 0.5)
    ds = sample_gp_dataset(KernelSpec("matern52", 0.2), prior, Grid.regular(10), 2500, 7)
    assert ds.draws.shape == (2500, 10) and ds.conditions.shape == (2500, 1)
    assert ds.conditions.min() >= 0.05 and ds.conditions.max() <= 0.5
    again = sample_gp_dataset(KernelSpec("matern52", 0.2), prior, Grid.regular(10), 2500, 7)
    np.testing.assert_array_equal(ds.draws, again.draws)


# ---------------------------------------------------------------- hyperpriors


def test_uniform_mean_clt_bound():
    x = sample_hyperprior(HyperPrior.uniform(0.01, 0.99), 100_000, 5)
    assert abs(x.mean() - 0.5) < 0.003


def test_mixture_with_certain_second_component():
    x = sample_hyperprior(HyperPrior.bernoulli_mixture(0.1, 0.4, p=1.0), 1000, 0)
    assert np.all(x == 0.4)


@settings(max_examples=40, deadline=None)
@given(a=st.floats(-5, 5), eps=st.floats(1e-9, 1e-3), seed=st.integers(0, 2**31))
def test_uniform_support_containment(a, eps, seed):
    x = sample_hyperprior(HyperPrior.uniform(a, a + eps), 200, seed)
    assert np.all((x >= a) & (x <= a + eps))


@pytest.mark.parametrize(
    "prior",
    [
        HyperPrior.gamma(2.0, 3.0),
        HyperPrior.half_normal(0.1),
        HyperPrior.exponential(2.0),
        HyperPrior.trunc_normal_pos(1.0, 0.5),
        HyperPrior.beta(2.0, 3.0),
    ],
)
def test_priors_are_deterministic_and_in_support(prior):
    a, b = prior.sample(500, 1), prior.sample(500, 1)
    np.testing.assert_array_equal(a, b)
    lo, hi = prior.bounds
    assert np.all((a > lo) & (a < hi))


def test_logpdf_matches_scipy_normalised_forms():
    from scipy import stats

    x = np.array([0.2, 0.7, 1.9])
    cases = [
        (HyperPrior.gamma(2.0, 3.0), stats.gamma(2.0, scale=1 / 3.0)),
        (HyperPrior.half_normal(0.5), stats.halfnorm(scale=0.5)),
        (HyperPrior.exponential(2.0), stats.expon(scale=0.5)),
        (HyperPrior.normal(1.0, 0.5), stats.norm(1.0, 0.5)),
    ]
    for prior, ref in cases:
        np.testing.assert_allclose(prior.logpdf(x)[0], ref.logpdf(x), rtol=1e-12)
    xb = np.array([0.1, 0.5, 0.8])
    lp, _ = HyperPrior.beta(2.0, 3.0).logpdf(xb)
    np.testing.assert_allclose(lp, stats.beta(2.0, 3.0).logpdf(xb) , rtol=1e-12)
    assert special.betaln(2.0, 3.0) == pytest.approx(math.log(1 / 12))


@pytest.mark.parametrize("kind,params", [("uniform", (0.5, 0.1)), ("gamma", (0.0, 1.0)), ("beta", (1.0,)), ("dirichlet", ())])
def test_invalid_priors(kind, params):
    with pytest.raises(ValueError):
        HyperPrior(kind, params)


# ---------------------------------------------------------------- empirical covariance / frobenius


def test_identical_rows_zero_covariance():
    np.testing.assert_array_equal(empirical_covariance(np.tile([1.0, 2.0, 3.0], (5, 1))), np.zeros((3, 3)))


def test_alternating_rows_hand_computation():
    v = np.array([1.0, -2.0, 0.5])
    rows = np.array([v, -v, v, -v])
    # mean is zero, so the unbiased estimate is (4 / 3) v v^T
    np.testing.assert_allclose(empirical_covariance(rows), (4 / 3) * np.outer(v, v), rtol=1e-14)


def test_empirical_covariance_accepts_datasets_and_needs_two_rows():
    ds = PriorDataset(np.zeros((3, 0)), np.arange(6.0).reshape(3, 2))
    assert empirical_covariance(ds).shape == (2, 2)
    with pytest.raises(ValueError):
        empirical_covariance(np.ones((1, 4)))


def test_frobenius_examples():
    B = np.arange(9.0).reshape(3, 3)
    assert frobenius_distance(B, B) == 0.0
    assert frobenius_distance(B + np.eye(3), B) == pytest.approx(math.sqrt(3))
    assert frobenius_distance(np.eye(2), [[0.0, 1.0], [1.0, 0.0]]) == pytest.approx(2.0)
    with pytest.raises(ValueError):
        frobenius_distance(np.eye(2), np.eye(3))


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 10_000), n=st.integers(1, 6))
def test_frobenius_is_a_metric(seed, n):
    rng = np.random.default_rng(seed)
    A, B, C = rng.normal(size=(3, n, n))
    assert frobenius_distance(A, B) == pytest.approx(frobenius_distance(B, A))
    assert frobenius_distance(A, A) == 0.0
    assert frobenius_distance(A, B) > 0.0
    assert frobenius_distance(A, C) <= frobenius_distance(A, B) + frobenius_distance(B, C) + 1e-12
