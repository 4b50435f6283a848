import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from sssl.kernels import (
    Dataset,
    KernelSpec,
    cross_gram,
    eval_kernel,
    gram_matrix,
    kernel_matrix,
    median_distance,
)

KINDS = [KernelSpec("rbf", 0.7), KernelSpec("linear_normalized"), KernelSpec("polynomial_normalized", degree=3)]


def direct(spec, x, y):
    # plain-python reference evaluation
    if spec.kind == "rbf":
        d2 = sum((a - b) ** 2 for a, b in zip(x, y))
        return math.exp(-d2 / (2 * spec.bandwidth**2))
    ip = sum(a * b for a, b in zip(x, y))
    nx = sum(a * a for a in x)
    ny = sum(b * b for b in y)
    if spec.kind == "linear_normalized":
        return 0.0 if nx == 0 or ny == 0 else ip / math.sqrt(nx * ny)
    d = spec.degree
    return (ip + 1) ** d / math.sqrt((nx + 1) ** d * (ny + 1) ** d)


def test_rbf_self_similarity():
    assert eval_kernel(KernelSpec("rbf", 2.3), [0.4, -1.0], [0.4, -1.0]) == 1.0


def test_rbf_unit_distance():
    assert eval_kernel(KernelSpec("rbf", 1.0), [0.0], [1.0]) == pytest.approx(0.60653066, abs=1e-8)


def test_linear_normalized_orthogonal():
    assert eval_kernel(KernelSpec("linear_normalized"), [1.0, 0.0], [0.0, 1.0]) == 0.0


def test_single_point_gram():
    K = gram_matrix(KernelSpec(), Dataset(np.array([[3.0, 1.0]])))
    np.testing.assert_array_equal(K, [[1.0]])


def test_identical_points_gram():
    K = gram_matrix(KernelSpec("rbf", 0.5), Dataset(np.array([[1.0, 2.0], [1.0, 2.0]])))
    np.testing.assert_array_equal(K, np.ones((2, 2)))


@pytest.mark.parametrize("spec", KINDS, ids=lambda s: s.kind)
def test_gram_matches_elementwise(spec, rng):
    X = rng.standard_normal((3, 4))
    K = gram_matrix(spec, Dataset(X))
    ref = np.array([[direct(spec, X[i], X[j]) for j in range(3)] for i in range(3)])
    np.testing.assert_allclose(K, ref, rtol=1e-12, atol=1e-14)


def test_cross_gram_all_is_gram(rng):
    data = Dataset(rng.standard_normal((7, 2)))
    spec = KernelSpec("rbf", 1.3)
    np.testing.assert_array_equal(cross_gram(spec, data, np.arange(7)), gram_matrix(spec, data))


def test_cross_gram_first_column(rng):
    data = Dataset(rng.standard_normal((3, 2)))
    spec = KernelSpec("rbf", 0.9)
    np.testing.assert_array_equal(cross_gram(spec, data, [0])[:, 0], gram_matrix(spec, data)[:, 0])


def test_cross_gram_permuted_selection(rng):
    data = Dataset(rng.standard_normal((4, 3)))
    spec = KernelSpec("polynomial_normalized", degree=2)
    K = gram_matrix(spec, data)
    np.testing.assert_allclose(cross_gram(spec, data, [2, 0]), K[:, [2, 0]], atol=1e-15)


def test_errors():
    with pytest.raises(ValueError):
        KernelSpec("rbf", 0.0)
    with pytest.raises(ValueError):
        KernelSpec("linear")
    with pytest.raises(ValueError):
        eval_kernel(KernelSpec(), [0.0, 1.0], [0.0])
    with pytest.raises(ValueError):
        Dataset(np.array([[np.nan]]))
    with pytest.raises(IndexError):
        cross_gram(KernelSpec(), Dataset(np.zeros((3, 1))), [3])


def test_median_distance_simple():
    X = np.array([[0.0], [1.0], [3.0]])
    # pairwise distances 1, 3, 2
    assert median_distance(X) == pytest.approx(2.0)


points = st.integers(1, 12).flatmap(
    lambda n: arrays(np.float64, (n, 3), elements=st.floats(-5, 5, allow_nan=False, width=32))
)


@given(points, st.sampled_from(KINDS))
def test_gram_symmetric_bounded(X, spec):
    K = gram_matrix(spec, Dataset(X))
    np.testing.assert_array_equal(K, K.T)
    assert np.all(np.abs(np.diag(K)) <= 1.0)
    assert np.all(np.abs(K) <= 1.0)
    if spec.kind == "rbf":
        np.testing.assert_array_equal(np.diag(K), 1.0)


@given(points, st.sampled_from(KINDS))
def test_gram_psd(X, spec):
    K = gram_matrix(spec, Dataset(X))
    assert np.linalg.eigvalsh(K).min() >= -1e-8 * K.shape[0]


@given(
    arrays(np.float64, 3, elements=st.floats(-4, 4, width=32)),
    arrays(np.float64, 3, elements=st.floats(-4, 4, width=32)),
    st.sampled_from(KINDS),
)
def test_eval_symmetric(x, y, spec):
    assert eval_kernel(spec, x, y) == eval_kernel(spec, y, x)
    if spec.kind == "rbf":
        v = eval_kernel(spec, x, y)
        assert 0 <= v <= 1
        if np.array_equal(x, y):
            assert v == 1.0
        elif np.sum((x - y) ** 2) > 1e-12:
            assert v < 1.0


@given(points)
def test_kernel_matrix_consistent_with_gram(X):
    spec = KernelSpec("rbf", 1.1)
    np.testing.assert_allclose(kernel_matrix(spec, X, X), gram_matrix(spec, Dataset(X)), atol=1e-14)
