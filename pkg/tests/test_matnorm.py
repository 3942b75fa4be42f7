import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.stats import multivariate_normal

from matpca.datagen import build_population, relative_difference, sample_matrix_normal
from matpca.errors import (
    ArgumentError,
    CapacityError,
    InsufficientDataError,
    NumericalDomainError,
    ShapeError,
)
from matpca.matnorm import (
    LOG_2PI,
    MatNormalParams,
    MatrixDataset,
    eigendecompose_params,
    flipflop_fit,
    kron_covariance,
    matnorm_logpdf,
    mmd2,
    mmd2_all,
    vec,
    weighted_loglik,
)

from conftest import random_params, random_spd


def dense_mmd2(X, p):
    e = vec(X - p.M)
    return float(e @ np.linalg.solve(np.kron(p.sigma_r, p.sigma_c), e))


# -- datasets and parameters --------------------------------------------------

def test_dataset_validation():
    with pytest.raises(ArgumentError):
        MatrixDataset(np.array([[[np.nan]]]))
    with pytest.raises(ShapeError):
        MatrixDataset(np.zeros((0, 2, 2)))
    with pytest.raises(ShapeError):
        MatrixDataset(np.zeros(3))
    d = MatrixDataset(np.zeros((3, 2, 4)))
    assert (d.n, d.d_c, d.d_r) == (3, 2, 4)
    assert list(d.ids) == [0, 1, 2]
    assert not d.samples.flags.writeable


def test_params_symmetry_check():
    with pytest.raises(ArgumentError):
        MatNormalParams(np.zeros((2, 1)), np.array([[1.0, 0.5], [0.0, 1.0]]), np.eye(1))
    with pytest.raises(ShapeError):
        MatNormalParams(np.zeros((2, 2)), np.eye(3), np.eye(2))


def test_non_pd_is_numerical_domain_error():
    p = MatNormalParams(np.zeros((2, 2)), np.array([[1.0, 2.0], [2.0, 1.0]]), np.eye(2))
    with pytest.raises(NumericalDomainError):
        mmd2(np.ones((2, 2)), p)


# -- distance and density --------------------------------------------------------

def test_mmd2_at_mean_is_zero(rng):
    p = random_params(rng, 3, 4)
    assert mmd2(p.M, p) == 0.0


def test_mmd2_identity_is_frobenius(rng):
    X = rng.standard_normal((3, 5))
    p = MatNormalParams(np.zeros((3, 5)), np.eye(3), np.eye(5))
    assert mmd2(X, p) == pytest.approx(np.sum(X * X), rel=1e-13)


def test_mmd2_matches_dense_oracle_3x4(rng):
    p = random_params(rng, 3, 4)
    X = rng.standard_normal((3, 4))
    assert abs(mmd2(X, p) - dense_mmd2(X, p)) < 1e-10


def test_mmd2_shape_mismatch(rng):
    p = random_params(rng, 2, 3)
    with pytest.raises(ShapeError):
        mmd2(np.zeros((3, 2)), p)


def test_logpdf_scalar_standard_normal():
    p = MatNormalParams(np.zeros((1, 1)), np.eye(1), np.eye(1))
    assert matnorm_logpdf(np.zeros((1, 1)), p) == pytest.approx(-0.5 * math.log(2 * math.pi), abs=1e-15)


def test_logpdf_at_mean(rng):
    p = random_params(rng, 3, 2)
    want = -0.5 * 6 * LOG_2PI - 0.5 * 2 * np.linalg.slogdet(p.sigma_c)[1] - 0.5 * 3 * np.linalg.slogdet(p.sigma_r)[1]
    assert matnorm_logpdf(p.M, p) == pytest.approx(want, abs=1e-10)


def test_logpdf_matches_dense_mvn_2x3(rng):
    p = random_params(rng, 2, 3)
    X = rng.standard_normal((2, 3))
    want = multivariate_normal(vec(p.M), np.kron(p.sigma_r, p.sigma_c)).logpdf(vec(X))
    assert abs(matnorm_logpdf(X, p) - want) < 1e-10


@settings(max_examples=60, deadline=None)
@given(
    st.integers(1, 6), st.integers(1, 6), st.integers(0, 2**32 - 1)
)
def test_kronecker_equivalence_property(d_c, d_r, seed):
    r = np.random.default_rng(seed)
    p = random_params(r, d_c, d_r, cond=50.0)
    X = p.M + 3.0 * r.standard_normal((d_c, d_r))
    ref = dense_mmd2(X, p)
    assert abs(mmd2(X, p) - ref) < 1e-10 * max(1.0, ref)


@settings(max_examples=40, deadline=None)
@given(st.floats(1e-3, 1e3), st.integers(0, 2**32 - 1))
def test_mmd2_invariant_under_joint_rescale(c, seed):
    r = np.random.default_rng(seed)
    p = random_params(r, 3, 2)
    q = MatNormalParams(p.M, c * p.sigma_c, p.sigma_r / c)
    X = r.standard_normal((3, 2))
    assert mmd2(X, q) == pytest.approx(mmd2(X, p), rel=1e-10)


def test_mmd2_all_matches_single(rng):
    p = random_params(rng, 3, 4)
    X = rng.standard_normal((7, 3, 4))
    assert np.allclose(mmd2_all(X, p), [mmd2(x, p) for x in X], rtol=1e-13)


# -- Kronecker bridge ---------------------------------------------------------------

def test_kron_identity():
    p = MatNormalParams(np.zeros((2, 3)), np.eye(2), np.eye(3))
    assert np.array_equal(kron_covariance(p), np.eye(6))


def test_kron_diagonal():
    p = MatNormalParams(np.zeros((2, 1)), np.diag([2.0, 3.0]), np.diag([5.0]))
    assert np.array_equal(kron_covariance(p), np.diag([10.0, 15.0]))


def test_kron_blocks(rng):
    sc, sr = random_spd(rng, 2), random_spd(rng, 2)
    K = kron_covariance(MatNormalParams(np.zeros((2, 2)), sc, sr))
    for i in range(2):
        for j in range(2):
            assert np.array_equal(K[2 * i:2 * i + 2, 2 * j:2 * j + 2], sr[i, j] * sc)


def test_kron_guard():
    p = MatNormalParams(np.zeros((3, 3)), np.eye(3), np.eye(3))
    with pytest.raises(CapacityError):
        kron_covariance(p, guard=8)


# -- flip-flop ----------------------------------------------------------------------

def naive_sweep(X, sigma_r):
    n, d_c, d_r = X.shape
    E = X - X.mean(axis=0)
    Ri = np.linalg.inv(sigma_r)
    sc = sum(e @ Ri @ e.T for e in E) / (n * d_r)
    Ci = np.linalg.inv(sc)
    sr = sum(e.T @ Ci @ e for e in E) / (n * d_c)
    return sc, sr


def test_flipflop_vector_case_matches_sample_covariance(rng):
    X = rng.standard_normal((50, 3, 1)) * np.array([1.0, 2.0, 0.5])[None, :, None]
    fit = flipflop_fit(X)
    V = X[:, :, 0]
    S = np.cov(V.T, bias=True)
    K = np.kron(fit.params.sigma_r, fit.params.sigma_c)
    assert np.allclose(fit.params.M[:, 0], V.mean(axis=0), atol=1e-12)
    assert np.abs(K - S).max() < 1e-8
    # trace(sigma_c) = d_c pins sigma_r to trace(S) / 3 rather than 1
    assert fit.params.sigma_r[0, 0] == pytest.approx(np.trace(S) / 3, rel=1e-12)


def test_flipflop_constant_data_fails():
    X = np.ones((10, 2, 3))
    with pytest.raises(NumericalDomainError) as info:
        flipflop_fit(X)
    assert info.value.iteration == 1


def test_flipflop_insufficient_data():
    with pytest.raises(InsufficientDataError):
        flipflop_fit(np.random.default_rng(0).standard_normal((3, 2, 2)))
    with pytest.raises(InsufficientDataError):
        flipflop_fit(np.random.default_rng(0).standard_normal((10, 2, 2)), weights=[1, 1, 1] + [0] * 7)


def test_flipflop_argument_checks(rng):
    X = rng.standard_normal((10, 2, 2))
    with pytest.raises(ArgumentError):
        flipflop_fit(X, tol=0)
    with pytest.raises(ArgumentError):
        flipflop_fit(X, max_iter=0)
    with pytest.raises(ArgumentError):
        flipflop_fit(X, weights=-np.ones(10))


def test_flipflop_first_sweep_matches_naive_updates(rng):
    X = rng.standard_normal((40, 3, 4)) * 2 + 1
    fit = flipflop_fit(X, max_iter=1)
    sc, sr = naive_sweep(X, np.eye(4))
    K = np.kron(sr, sc)
    assert np.abs(np.kron(fit.params.sigma_r, fit.params.sigma_c) - K).max() < 1e-12


def test_flipflop_weights_equal_subset(rng):
    X = rng.standard_normal((30, 2, 3))
    w = np.zeros(30)
    w[:20] = 1
    a = flipflop_fit(X, weights=w).params
    b = flipflop_fit(X[:20]).params
    assert np.allclose(a.sigma_c, b.sigma_c, atol=1e-12) and np.allclose(a.M, b.M, atol=1e-14)


def test_flipflop_duplicate_weights(rng):
    X = rng.standard_normal((20, 2, 3))
    w = np.ones(20)
    w[0] = 2.0
    a = flipflop_fit(X, weights=w).params
    b = flipflop_fit(np.concatenate([X, X[:1]])).params
    assert np.allclose(np.kron(a.sigma_r, a.sigma_c), np.kron(b.sigma_r, b.sigma_c), atol=1e-10)


def test_flipflop_trace_is_the_loglikelihood(rng):
    X = rng.standard_normal((60, 3, 2))
    fit = flipflop_fit(X)
    assert fit.objective_trace[-1] == pytest.approx(weighted_loglik(X, fit.params), rel=1e-10)


def test_flipflop_normalized_and_idempotent(rng):
    fit = flipflop_fit(rng.standard_normal((60, 3, 5)))
    p = fit.params
    assert np.trace(p.sigma_c) == pytest.approx(3.0, abs=1e-12)
    q = p.normalized()
    assert np.abs(np.kron(q.sigma_r, q.sigma_c) - np.kron(p.sigma_r, p.sigma_c)).max() < 1e-12


def test_flipflop_data1_consistency():
    pop = build_population("data1")
    data = sample_matrix_normal(pop, seed=3, n=500)
    assert relative_difference(pop, flipflop_fit(data).params) < 0.15


# -- eigenpairs ---------------------------------------------------------------------

def test_eigen_diagonal():
    p = MatNormalParams(np.zeros((3, 1)), np.diag([5.0, 2.0, 1.0]), np.eye(1))
    pcs = eigendecompose_params(p, 2, 1)
    assert np.allclose(pcs.lambda_c, [5, 2])
    assert np.allclose(pcs.U_c, np.eye(3)[:, :2])


def test_eigen_constructed_spectrum(rng):
    u = rng.standard_normal(4)
    u /= np.linalg.norm(u)
    S = 5 * np.outer(u, u) + 0.5 * (np.eye(4) - np.outer(u, u))
    pcs = eigendecompose_params(MatNormalParams(np.zeros((4, 1)), S, np.eye(1)), 1, 1)
    assert abs(pcs.U_c[:, 0] @ u) > 1 - 1e-10
    assert pcs.U_c[np.argmax(np.abs(pcs.U_c[:, 0])), 0] > 0


def test_eigen_data1_leading_vector():
    pcs = eigendecompose_params(build_population("data1").params, 1, 3)
    s = 1 / math.sqrt(2)
    assert np.allclose(pcs.U_c[:, 0], [s, -s, 0, 0], atol=1e-12)


def test_eigen_rank_checks(rng):
    p = random_params(rng, 3, 2)
    for qc, qr in [(0, 1), (4, 1), (1, 0), (1, 3)]:
        with pytest.raises(ArgumentError):
            eigendecompose_params(p, qc, qr)


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 6), st.integers(1, 6), st.integers(0, 2**32 - 1))
def test_factored_pcs_invariants(d_c, d_r, seed):
    r = np.random.default_rng(seed)
    p = random_params(r, d_c, d_r)
    pcs = eigendecompose_params(p, d_c, d_r)
    assert np.allclose(pcs.U_c.T @ pcs.U_c, np.eye(d_c), atol=1e-10)
    assert np.allclose(pcs.U_r.T @ pcs.U_r, np.eye(d_r), atol=1e-10)
    assert np.all(np.diff(pcs.lambda_c) <= 0) and np.all(np.diff(pcs.lambda_r) <= 0)
