import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from conftest import random_psd
from sssl.eigensystem import (
    RankDeficientError,
    eigenfunction_features,
    eigenfunction_values,
    eval_eigenfunction,
    top_eigenpairs,
    write_spectrum_csv,
)
from sssl.kernels import Dataset, KernelSpec, gram_matrix, kernel_matrix


class ConstantKernel:
    def pairwise(self, A, B):
        return np.ones((np.atleast_2d(A).shape[0], np.atleast_2d(B).shape[0]))


def test_identity_spectrum():
    es = top_eigenpairs(np.eye(3), 2)
    np.testing.assert_allclose(es.sigmas, [1.0, 1.0])
    np.testing.assert_allclose(es.lambdas, [1 / 3, 1 / 3])


def test_constant_kernel_rank_one():
    es = top_eigenpairs(np.ones((4, 4)), 1)
    assert es.sigmas[0] == pytest.approx(4.0)
    np.testing.assert_allclose(es.vectors[:, 0], [0.5] * 4, atol=1e-12)
    assert es.lambdas[0] == pytest.approx(1.0)


def test_two_by_two():
    es = top_eigenpairs(np.array([[1.0, 0.5], [0.5, 1.0]]), 2)
    np.testing.assert_allclose(es.sigmas, [1.5, 0.5], atol=1e-14)
    np.testing.assert_allclose(es.lambdas, [0.75, 0.25], atol=1e-14)


def test_constant_kernel_eigenfunction():
    # v = (1/2, ..., 1/2), sigma = 4: phi(x) = 4^-1/2 * 4 * 1/2 = 1
    X = np.arange(4.0)[:, None]
    es = top_eigenpairs(np.ones((4, 4)), 1)
    for x in [-3.0, 0.5, 10.0]:
        assert eval_eigenfunction(es, ConstantKernel(), X, 0, [x]) == pytest.approx(1.0, abs=1e-12)


class TableKernel:
    """Kernel defined by a lookup table over integer point labels."""

    def __init__(self, K):
        self.K = np.asarray(K)

    def pairwise(self, A, B):
        a = np.asarray(A, dtype=int).ravel()
        b = np.asarray(B, dtype=int).ravel()
        return self.K[np.ix_(a, b)]


def test_two_by_two_eigenfunction_hand_value():
    K = [[1.0, 0.5], [0.5, 1.0]]
    es = top_eigenpairs(np.array(K), 2)
    X = np.array([[0.0], [1.0]])
    got = eval_eigenfunction(es, TableKernel(K), X, 0, [0.0])
    # (1/sqrt(1.5)) * 1.5/sqrt(2) = sqrt(3)/2
    assert got == pytest.approx(math.sqrt(3) / 2, abs=1e-12)


def test_eigenfunction_at_training_points_matches_matrix_path(rng):
    X = rng.standard_normal((9, 2))
    spec = KernelSpec("rbf", 1.0)
    K = gram_matrix(spec, Dataset(X))
    es = top_eigenpairs(K, 5)
    M = K @ es.vectors / np.sqrt(es.sigmas)
    for k in range(9):
        for i in range(5):
            assert eval_eigenfunction(es, spec, X, i, X[k]) == pytest.approx(M[k, i], abs=1e-10)


def test_features_gram_is_diag_sigma(rng):
    K = random_psd(rng, 5)
    es = top_eigenpairs(K, 5)
    Phi = eigenfunction_features(es, K)
    np.testing.assert_allclose(Phi.T @ Phi, np.diag(es.sigmas), atol=1e-6)


def test_features_single_point_matches_eval(rng):
    X = rng.standard_normal((6, 2))
    spec = KernelSpec("rbf", 0.8)
    data = Dataset(X)
    K = gram_matrix(spec, data)
    es = top_eigenpairs(K, 1)
    Phi = eigenfunction_features(es, K[:, [3]])
    assert Phi.shape == (1, 1)
    assert Phi[0, 0] == pytest.approx(eval_eigenfunction(es, spec, data, 0, X[3]), abs=1e-12)


def test_features_entrywise(rng):
    X = rng.standard_normal((6, 3))
    spec = KernelSpec("polynomial_normalized", degree=2)
    K = gram_matrix(spec, Dataset(X))
    es = top_eigenpairs(K, 4)
    Q = rng.standard_normal((5, 3))
    Phi = eigenfunction_features(es, kernel_matrix(spec, X, Q))
    for a in range(5):
        for i in range(4):
            assert Phi[a, i] == pytest.approx(eval_eigenfunction(es, spec, X, i, Q[a]), abs=1e-10)


def test_rank_deficient_refused(rng):
    K = random_psd(rng, 6, rank=2)
    es = top_eigenpairs(K, 4)
    assert es.numerical_rank == 2
    with pytest.raises(RankDeficientError):
        eigenfunction_values(es, K[:, 0], 3)
    eigenfunction_values(es, K[:, 0], 2)


def test_rejects_bad_input():
    with pytest.raises(ValueError):
        top_eigenpairs(np.array([[1.0, 0.0], [1.0, 1.0]]), 1)
    with pytest.raises(ValueError):
        top_eigenpairs(np.diag([1.0, -1.0]), 2)
    with pytest.raises(ValueError):
        top_eigenpairs(np.eye(3), 4)


def test_sign_convention(rng):
    es = top_eigenpairs(random_psd(rng, 8), 8)
    V = es.vectors
    rows = np.argmax(np.abs(V), axis=0)
    assert np.all(V[rows, np.arange(8)] > 0)


def test_spectrum_csv(tmp_path):
    es = top_eigenpairs(np.array([[1.0, 0.5], [0.5, 1.0]]), 2)
    p = tmp_path / "s.csv"
    write_spectrum_csv(es, p)
    lines = p.read_text().splitlines()
    assert lines[0] == "index,sigma,lambda"
    assert len(lines) == 3


def test_lambda_exact_division(rng):
    es = top_eigenpairs(random_psd(rng, 7), 3)
    assert np.array_equal(es.lambdas, es.sigmas / 7)


psd_cases = st.tuples(st.integers(1, 50), st.integers(0, 2**32 - 1), st.booleans())


def _instance(args):
    N, seed, low = args
    rng = np.random.default_rng(seed)
    rank = max(1, N // 3) if low else None
    K = random_psd(rng, N, rank)
    return K, N


@given(psd_cases)
def test_residual_orthonormal_monotone(args):
    K, N = _instance(args)
    es = top_eigenpairs(K, N)
    V = es.vectors[:, : es.numerical_rank]
    sig = es.sigmas[: es.numerical_rank]
    assert np.all(np.diff(es.sigmas) <= 0)
    assert np.all(es.sigmas >= 0)
    np.testing.assert_allclose(es.vectors.T @ es.vectors, np.eye(N), atol=1e-8)
    res = np.linalg.norm(K @ V - V * sig, axis=0)
    assert np.all(res <= 1e-6 * max(es.sigmas[0], 1.0))


@given(psd_cases)
def test_rkhs_orthonormality(args):
    K, N = _instance(args)
    es = top_eigenpairs(K, N)
    r = es.numerical_rank
    W = es.scaled_vectors(r)
    G = W.T @ K @ W
    assert np.max(np.abs(G - np.eye(r))) <= 1e-6


@given(st.integers(2, 12), st.integers(0, 2**32 - 1))
def test_degenerate_subspace(N, seed):
    # repeated eigenvalue: compare projectors, not vectors
    rng = np.random.default_rng(seed)
    Q, _ = np.linalg.qr(rng.standard_normal((N, N)))
    d = np.ones(N)
    d[0] = d[1] = 3.0
    K = (Q * d) @ Q.T
    K = (K + K.T) / 2
    es = top_eigenpairs(K, 2)
    P = es.vectors @ es.vectors.T
    P0 = Q[:, :2] @ Q[:, :2].T
    assert np.max(np.abs(P - P0)) <= 1e-6
