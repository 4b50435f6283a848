"""Bounded Mercer kernels and Gram-matrix assembly.

Every kernel exposed here satisfies ``|k(x, x)| <= 1``: the RBF kernel has a
unit diagonal, and the linear / polynomial kernels are cosine-normalized.
Anything with a ``pairwise(A, B)`` method (for instance the truncated series
kernel in :mod:`sssl.synthetic`) can be passed wherever a ``KernelSpec`` is
expected.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Protocol, Sequence

import numpy as np
from scipy.spatial.distance import cdist

KINDS = ("rbf", "linear_normalized", "polynomial_normalized")


class Kernel(Protocol):
    def pairwise(self, A: np.ndarray, B: np.ndarray) -> np.ndarray: ...


def as_points(X, name="points") -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    if X.ndim != 2:
        raise ValueError(f"{name} must be a 2-d array, got shape {X.shape}")
    if not np.all(np.isfinite(X)):
        raise ValueError(f"{name} contain NaN or Inf")
    return X


@dataclass(frozen=True, eq=False)
class Dataset:
    """Feature matrix (N x d) with optional labels.

    ``labels`` may have length N, or be absent. ``labeled_indices`` marks which
    rows carry a usable label; by default every row does when labels are given.
    """

    points: np.ndarray
    labels: Optional[np.ndarray] = None
    labeled_indices: Optional[np.ndarray] = None
    feature_names: Sequence[str] = field(default_factory=tuple)

    def __post_init__(self):
        pts = as_points(self.points)
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)
        if self.labels is not None:
            y = np.asarray(self.labels, dtype=float).ravel()
            if y.shape[0] != pts.shape[0]:
                raise ValueError(f"got {y.shape[0]} labels for {pts.shape[0]} points")
            y.setflags(write=False)
            object.__setattr__(self, "labels", y)
        if self.labeled_indices is not None:
            idx = check_indices(self.labeled_indices, pts.shape[0])
            object.__setattr__(self, "labeled_indices", idx)

    @property
    def n_points(self) -> int:
        return self.points.shape[0]

    @property
    def feature_dim(self) -> int:
        return self.points.shape[1]

    def __len__(self):
        return self.n_points

    def subset(self, idx) -> "Dataset":
        idx = check_indices(idx, self.n_points)
        y = None if self.labels is None else self.labels[idx]
        return Dataset(self.points[idx], y, feature_names=self.feature_names)


@dataclass(frozen=True)
class KernelSpec:
    kind: str = "rbf"
    bandwidth: float = 1.0
    degree: int = 2

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown kernel kind {self.kind!r}; expected one of {KINDS}")
        if self.kind == "rbf" and not (np.isfinite(self.bandwidth) and self.bandwidth > 0):
            raise ValueError(f"rbf bandwidth must be positive, got {self.bandwidth}")
        if self.kind == "polynomial_normalized" and (int(self.degree) != self.degree or self.degree < 1):
            raise ValueError(f"polynomial degree must be a positive integer, got {self.degree}")

    def pairwise(self, A: np.ndarray, B: np.ndarray) -> np.ndarray:
        if A.shape[1] != B.shape[1]:
            raise ValueError(f"dimension mismatch: {A.shape[1]} vs {B.shape[1]}")
        # cdist is elementwise in (u - v)**2, so pairwise(A, B) == pairwise(B, A).T bit-for-bit
        sq = cdist(A, B, "sqeuclidean")
        if self.kind == "rbf":
            return np.exp(-sq / (2.0 * self.bandwidth**2))
        na = np.einsum("ij,ij->i", A, A)
        nb = np.einsum("ij,ij->i", B, B)
        inner = ((na[:, None] + nb[None, :]) - sq) / 2.0
        if self.kind == "linear_normalized":
            denom = np.sqrt(na[:, None] * nb[None, :])
            out = np.divide(inner, denom, out=np.zeros_like(inner), where=denom > 0)
        else:
            d = int(self.degree)
            out = (inner + 1.0) ** d / np.sqrt((na[:, None] + 1.0) ** d * (nb[None, :] + 1.0) ** d)
        return np.clip(out, -1.0, 1.0)


def _points_of(data) -> np.ndarray:
    return data.points if isinstance(data, Dataset) else as_points(data)


def check_indices(idx, n: int) -> np.ndarray:
    idx = np.asarray(idx)
    if idx.ndim != 1:
        raise ValueError("index list must be 1-d")
    if idx.size and not np.issubdtype(idx.dtype, np.integer):
        raise TypeError(f"indices must be integers, got dtype {idx.dtype}")
    idx = idx.astype(np.intp)
    if idx.size and (idx.min() < 0 or idx.max() >= n):
        raise IndexError(f"index out of range for {n} points")
    return idx


def eval_kernel(spec: Kernel, x, y) -> float:
    x = np.atleast_1d(np.asarray(x, dtype=float))
    y = np.atleast_1d(np.asarray(y, dtype=float))
    if x.shape != y.shape:
        raise ValueError(f"dimension mismatch: {x.shape} vs {y.shape}")
    return float(spec.pairwise(x[None, :], y[None, :])[0, 0])


def kernel_matrix(spec: Kernel, A, B) -> np.ndarray:
    """Rectangular kernel block ``[k(a_i, b_j)]``."""
    return spec.pairwise(_points_of(A), _points_of(B))


def gram_matrix(spec: Kernel, data) -> np.ndarray:
    X = _points_of(data)
    if X.shape[0] == 0:
        raise ValueError("cannot build a Gram matrix for an empty dataset")
    K = spec.pairwise(X, X)
    upper = np.triu(K)
    K = upper + np.triu(K, 1).T
    if isinstance(spec, KernelSpec) and spec.kind == "rbf":
        np.fill_diagonal(K, 1.0)
    return K


def cross_gram(spec: Kernel, data, labeled_indices) -> np.ndarray:
    """N x n block between all points and the labeled subset."""
    X = _points_of(data)
    idx = check_indices(labeled_indices, X.shape[0])
    if idx.size == 0:
        raise ValueError("need at least one labeled index")
    KB = spec.pairwise(X, X[idx])
    if isinstance(spec, KernelSpec) and spec.kind == "rbf":
        KB[idx, np.arange(idx.size)] = 1.0
    return KB


def median_distance(X, max_points: int = 2000, seed: int = 0) -> float:
    """Median pairwise Euclidean distance, on a random subsample for large inputs."""
    X = _points_of(X)
    if X.shape[0] > max_points:
        rng = np.random.default_rng(seed)
        X = X[rng.choice(X.shape[0], max_points, replace=False)]
    d = cdist(X, X)
    iu = np.triu_indices(X.shape[0], 1)
    if iu[0].size == 0:
        return 1.0
    med = float(np.median(d[iu]))
    return med if med > 0 else 1.0
