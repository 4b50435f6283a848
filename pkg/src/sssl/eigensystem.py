"""Top eigenpairs of a Gram matrix and the induced empirical eigenfunctions.

For a Gram matrix ``K`` with eigenpairs ``(sigma_i, v_i)`` over N points, the
empirical integral operator has eigenvalues ``lambda_i = sigma_i / N`` and
RKHS-orthonormal eigenfunctions

    phi_i(x) = sigma_i ** -0.5 * sum_j v_i[j] * k(x_j, x).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np
from scipy import linalg

from .kernels import Dataset, Kernel, kernel_matrix

RANK_RTOL = 1e-10
PSD_ATOL_PER_POINT = 1e-8
# retained pairs below this fraction of sigma_1 get a Rayleigh-Ritz refinement
REFINE_RTOL = 1e-6


class RankDeficientError(ValueError):
    """Raised when an eigenfunction is requested for a numerically null eigenpair."""


@dataclass(frozen=True, eq=False)
class EigenSystem:
    sigmas: np.ndarray
    vectors: np.ndarray
    lambdas: np.ndarray
    n_points: int

    @property
    def s(self) -> int:
        return self.sigmas.shape[0]

    @property
    def rank_threshold(self) -> float:
        return RANK_RTOL * max(float(self.sigmas[0]), 0.0)

    @property
    def valid(self) -> np.ndarray:
        """Mask of eigenpairs above the rank tolerance."""
        return self.sigmas > self.rank_threshold

    @property
    def numerical_rank(self) -> int:
        return int(np.count_nonzero(self.valid))

    def truncate(self, s: int) -> "EigenSystem":
        if not 1 <= s <= self.s:
            raise ValueError(f"cannot truncate {self.s} eigenpairs to {s}")
        return EigenSystem(self.sigmas[:s], self.vectors[:, :s], self.lambdas[:s], self.n_points)

    def scaled_vectors(self, s: int | None = None) -> np.ndarray:
        """``V diag(sigma^-1/2)``, the map from a kernel vector to eigenfunction values."""
        s = self.s if s is None else s
        self._require_valid(range(s))
        return self.vectors[:, :s] / np.sqrt(self.sigmas[:s])

    def _require_valid(self, which):
        bad = [i for i in which if not self.valid[i]]
        if bad:
            raise RankDeficientError(
                f"eigenpairs {bad} have sigma <= {self.rank_threshold:.3g} "
                f"(rank tolerance); their eigenfunctions are undefined"
            )


def _fix_signs(V: np.ndarray) -> np.ndarray:
    rows = np.argmax(np.abs(V), axis=0)
    signs = np.sign(V[rows, np.arange(V.shape[1])])
    signs[signs == 0] = 1.0
    return V * signs


def _refine_small(K, sigmas, V):
    """Rayleigh-Ritz on the near-null retained block, with V^T K V in extended precision.

    A dense solver returns small eigenvalues with absolute error ~ eps * sigma_1,
    which is a large relative error once sigma_i / sigma_1 approaches the rank
    tolerance and breaks the unit RKHS norm of phi_i. Where ``np.longdouble``
    is plain double this is a no-op in effect.
    """
    top = sigmas[0]
    idx = np.flatnonzero((sigmas > RANK_RTOL * top) & (sigmas < REFINE_RTOL * top))
    if idx.size == 0:
        return sigmas, V
    Vs = V[:, idx].astype(np.longdouble)
    B = Vs.T @ (K.astype(np.longdouble) @ Vs)
    B = np.asarray((B + B.T) / 2, dtype=float)
    w, Q = linalg.eigh(B)
    order = np.argsort(w)[::-1]
    sigmas = sigmas.copy()
    V = V.copy()
    sigmas[idx] = w[order]
    V[:, idx] = V[:, idx] @ Q[:, order]
    return sigmas, V


def top_eigenpairs(K, s: int, refine: bool = True) -> EigenSystem:
    """The ``s`` largest eigenpairs of a symmetric PSD matrix, descending.

    Eigenvalues below ``-1e-8 * N`` are treated as a PSD violation; smaller
    negative round-off is clamped to zero. Each eigenvector is signed so its
    largest-magnitude entry is positive.

    ``refine`` re-solves the retained pairs with sigma below ``1e-6 * sigma_1``
    in extended precision so their eigenfunctions stay RKHS-orthonormal. It
    costs O(N^2) per refined pair outside BLAS; SSSL predictions do not depend
    on it (gamma absorbs any per-column scale), so bulk callers may skip it.
    """
    K = np.asarray(K, dtype=float)
    if K.ndim != 2 or K.shape[0] != K.shape[1]:
        raise ValueError(f"K must be square, got shape {K.shape}")
    N = K.shape[0]
    if not 1 <= s <= N:
        raise ValueError(f"s must lie in [1, {N}], got {s}")
    if not np.array_equal(K, K.T):
        if not np.allclose(K, K.T, rtol=0, atol=1e-12 * max(1.0, np.abs(K).max())):
            raise ValueError("K is not symmetric")
        K = (K + K.T) / 2
    w, V = linalg.eigh(K, subset_by_index=[N - s, N - 1])
    w, V = w[::-1], V[:, ::-1]
    if w[-1] < -PSD_ATOL_PER_POINT * N:
        raise ValueError(f"K is not positive semi-definite: eigenvalue {w[-1]:.3g}")
    sigmas = np.maximum(w, 0.0)
    if refine and sigmas[0] > 0:
        sigmas, V = _refine_small(K, sigmas, V)
        sigmas = np.maximum(sigmas, 0.0)
    V = np.ascontiguousarray(_fix_signs(V))
    return EigenSystem(sigmas, V, sigmas / N, N)


def eigenfunction_values(es: EigenSystem, kvec: np.ndarray, s: int | None = None) -> np.ndarray:
    """Eigenfunction values from kernel vectors against the N training points.

    ``kvec`` is (N,) or (N, m); the result is (s,) or (m, s).
    """
    W = es.scaled_vectors(s)
    kvec = np.asarray(kvec, dtype=float)
    if kvec.shape[0] != es.n_points:
        raise ValueError(f"kernel vector has {kvec.shape[0]} rows, expected {es.n_points}")
    return kvec.T @ W


def eval_eigenfunction(es: EigenSystem, spec: Kernel, train, i: int, x) -> float:
    if not 0 <= i < es.s:
        raise IndexError(f"eigenfunction index {i} out of range for s={es.s}")
    es._require_valid([i])
    X = train.points if isinstance(train, Dataset) else np.asarray(train, dtype=float)
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if x.shape[0] != X.shape[1]:
        raise ValueError(f"dimension mismatch: point has {x.shape[0]} features, train has {X.shape[1]}")
    k = kernel_matrix(spec, X, x[None, :])[:, 0]
    return float(np.dot(es.vectors[:, i], k) / np.sqrt(es.sigmas[i]))


def eigenfunction_features(es: EigenSystem, cross, s: int | None = None) -> np.ndarray:
    """Feature matrix ``Phi[i, j] = phi_j(point i)`` for the columns of a cross-Gram."""
    cross = np.asarray(cross, dtype=float)
    if cross.shape[0] != es.n_points:
        raise ValueError(f"cross-Gram has {cross.shape[0]} rows, expected {es.n_points}")
    return eigenfunction_values(es, cross, s)


def write_spectrum_csv(es: EigenSystem, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["index", "sigma", "lambda"])
        for k in range(es.s):
            w.writerow([k + 1, repr(float(es.sigmas[k])), repr(float(es.lambdas[k]))])
