"""SSSL (regression on the top empirical eigenfunctions) and the KRR / LapRLS baselines."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy import linalg, sparse
from scipy.spatial import cKDTree

from .eigensystem import EigenSystem, eigenfunction_features, top_eigenpairs
from .kernels import Dataset, Kernel, check_indices, kernel_matrix

PINV_RCOND = 1e-10


def _query_points(X, dim: int) -> np.ndarray:
    X = X.points if isinstance(X, Dataset) else np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[None, :] if dim > 1 or X.shape[0] == 1 else X[:, None]
    if X.shape[1] != dim:
        raise ValueError(f"dimension mismatch: query has {X.shape[1]} features, model expects {dim}")
    return X


def _train_points(train) -> np.ndarray:
    return train.points if isinstance(train, Dataset) else np.asarray(train, dtype=float)


# --------------------------------------------------------------------------- SSSL


@dataclass(frozen=True, eq=False)
class SsslModel:
    gamma: np.ndarray
    eigensystem: EigenSystem
    train_points: np.ndarray
    kernel: Optional[Kernel]
    s: int

    @property
    def coef(self) -> np.ndarray:
        """Expansion weights over the training points: ``V diag(sigma^-1/2) gamma``."""
        return self.eigensystem.scaled_vectors(self.s) @ self.gamma

    def predict(self, X) -> np.ndarray:
        return predict_sssl(self, X)

    def predict_from_kernel(self, K_query: np.ndarray) -> np.ndarray:
        """Predictions from a precomputed (m x N) kernel block against the training points."""
        return np.asarray(K_query) @ self.coef


def sssl_coefficients(es: EigenSystem, K_B: np.ndarray, y_l: np.ndarray, s: int) -> np.ndarray:
    """gamma = D^1/2 [V^T K_B K_B^T V]^-1 V^T K_B y_l, minimum-norm when singular."""
    # D^1/2 [M^T M]^-1 M^T y with M = K_B^T V equals [Phi^T Phi]^-1 Phi^T y for
    # the feature matrix Phi = M D^-1/2; a QR of Phi avoids both the squared
    # condition number and the sigma-scaled columns of M
    Phi = eigenfunction_features(es, K_B, s)
    if Phi.shape[0] >= s:
        Q, R, perm = linalg.qr(Phi, mode="economic", pivoting=True)
        d = np.abs(np.diag(R))
        if d[-1] > PINV_RCOND * d[0]:
            gamma = np.empty(s)
            gamma[perm] = linalg.solve_triangular(R, Q.T @ y_l)
            return gamma
    # singular normal matrix: minimum-norm least-squares solution
    return np.linalg.pinv(Phi, rcond=PINV_RCOND) @ y_l


def fit_sssl(
    K,
    K_B,
    y_l,
    s: int,
    kernel: Optional[Kernel] = None,
    train=None,
    eigensystem: Optional[EigenSystem] = None,
) -> SsslModel:
    """Fit gamma by least squares of the labels on the first ``s`` eigenfunctions.

    ``eigensystem`` may be supplied (with at least ``s`` pairs) to reuse a
    decomposition of ``K`` across fits.
    """
    K_B = np.asarray(K_B, dtype=float)
    y_l = np.asarray(y_l, dtype=float).ravel()
    if y_l.size == 0:
        raise ValueError("need at least one labeled example")
    if K_B.ndim != 2 or K_B.shape[1] != y_l.size:
        raise ValueError(f"K_B has shape {K_B.shape} but there are {y_l.size} labels")
    es = eigensystem if eigensystem is not None else top_eigenpairs(K, s)
    if s < 1 or s > es.s:
        raise ValueError(f"s must lie in [1, {es.s}], got {s}")
    if K_B.shape[0] != es.n_points:
        raise ValueError(f"K_B has {K_B.shape[0]} rows, expected {es.n_points}")
    es._require_valid(range(s))
    gamma = sssl_coefficients(es, K_B, y_l, s)
    pts = None if train is None else _train_points(train)
    return SsslModel(gamma, es, pts, kernel, s)


def predict_sssl(model: SsslModel, X) -> np.ndarray:
    if model.kernel is None or model.train_points is None:
        raise ValueError("model was fitted without kernel/train points; use predict_from_kernel")
    Xq = _query_points(X, model.train_points.shape[1])
    return kernel_matrix(model.kernel, Xq, model.train_points) @ model.coef


# --------------------------------------------------------------------------- KRR


@dataclass(frozen=True, eq=False)
class KrrModel:
    dual_coeffs: np.ndarray
    labeled_points: Optional[np.ndarray]
    kernel: Optional[Kernel]
    ridge: float

    def predict(self, X) -> np.ndarray:
        if self.kernel is None or self.labeled_points is None:
            raise ValueError("model was fitted without kernel/points; use predict_from_kernel")
        Xq = _query_points(X, self.labeled_points.shape[1])
        return kernel_matrix(self.kernel, Xq, self.labeled_points) @ self.dual_coeffs

    def predict_from_kernel(self, K_query) -> np.ndarray:
        return np.asarray(K_query) @ self.dual_coeffs


def fit_krr(K_ll, y_l, ridge: float, kernel: Optional[Kernel] = None, labeled_points=None) -> KrrModel:
    """Kernel ridge regression: coeffs = (K_ll + ridge I)^-1 y_l."""
    if not (np.isfinite(ridge) and ridge > 0):
        raise ValueError(f"ridge must be positive, got {ridge}")
    K_ll = np.asarray(K_ll, dtype=float)
    y_l = np.asarray(y_l, dtype=float).ravel()
    n = y_l.size
    if K_ll.shape != (n, n):
        raise ValueError(f"K_ll has shape {K_ll.shape}, expected ({n}, {n})")
    coeffs = linalg.solve(K_ll + ridge * np.eye(n), y_l, assume_a="pos")
    pts = None if labeled_points is None else _train_points(labeled_points)
    return KrrModel(coeffs, pts, kernel, float(ridge))


# --------------------------------------------------------------------------- LapRLS


def knn_heat_graph(X, k: int, bandwidth: float, as_sparse: bool = False):
    """Symmetrized k-NN adjacency with heat-kernel weights exp(-d^2 / (2 t^2)).

    Dense by default; ``as_sparse=True`` returns a CSR matrix with the same entries.
    """
    X = _train_points(X)
    N = X.shape[0]
    if k < 1:
        raise ValueError(f"graph_k must be >= 1, got {k}")
    if not bandwidth > 0:
        raise ValueError(f"graph bandwidth must be positive, got {bandwidth}")
    if N == 1:
        return sparse.csr_matrix((1, 1)) if as_sparse else np.zeros((1, 1))
    kk = min(k, N - 1)
    dist, nbr = cKDTree(X).query(X, k=kk + 1)
    rows = np.repeat(np.arange(N), kk + 1)
    vals = np.exp(-dist.ravel() ** 2 / (2.0 * bandwidth**2))
    cols = nbr.ravel()
    # a point may miss itself among the neighbours when duplicates tie; drop any self-loop
    keep = rows != cols
    W = sparse.csr_matrix((vals[keep], (rows[keep], cols[keep])), shape=(N, N))
    W = W.maximum(W.T).tocsr()
    W.sort_indices()
    return W if as_sparse else W.toarray()


def graph_laplacian(W):
    """Unnormalized Laplacian D - W; sparse in, sparse out."""
    if sparse.issparse(W):
        return (sparse.diags(np.asarray(W.sum(axis=1)).ravel()) - W).tocsr()
    return np.diag(W.sum(axis=1)) - W


@dataclass(frozen=True, eq=False)
class LapRlsModel:
    dual_coeffs: np.ndarray
    train_points: Optional[np.ndarray]
    kernel: Optional[Kernel]
    graph_k: int
    graph_weight: float
    ridge: float
    laplacian_weight: float

    def predict(self, X) -> np.ndarray:
        if self.kernel is None or self.train_points is None:
            raise ValueError("model was fitted without kernel/points; use predict_from_kernel")
        Xq = _query_points(X, self.train_points.shape[1])
        return kernel_matrix(self.kernel, Xq, self.train_points) @ self.dual_coeffs

    def predict_from_kernel(self, K_query) -> np.ndarray:
        return np.asarray(K_query) @ self.dual_coeffs


def laprls_system(K, labeled_indices, ridge, laplacian_weight, L):
    """Left-hand side ``J K + ridge n I + w (n / N^2) L K`` of the LapRLS normal equations."""
    N = K.shape[0]
    n = labeled_indices.size
    A = np.zeros((N, N))
    A[labeled_indices] = K[labeled_indices]
    A[np.diag_indices(N)] += ridge * n
    if laplacian_weight:
        LK = L @ K
        A += (laplacian_weight * n / N**2) * np.asarray(LK)
    return A


class LapRlsSolver:
    """LapRLS for any labeled subset of ``support`` from one factorization.

    Dividing the normal equations by n gives ``(M + E K_l / n) c = E y / n``
    where ``M = ridge I + w L K / N^2`` does not depend on the labels. By
    Woodbury ``c = Z (n I + K_l Z)^-1 y`` with ``Z = M^-1 E``, so only the
    columns of ``M^-1`` at ``support`` are kept.
    """

    def __init__(self, K, L, ridge: float, laplacian_weight: float, support):
        if not (np.isfinite(ridge) and ridge > 0):
            raise ValueError(f"ridge must be positive, got {ridge}")
        if not laplacian_weight >= 0:
            raise ValueError(f"laplacian_weight must be non-negative, got {laplacian_weight}")
        self.K = np.asarray(K, dtype=float)
        N = self.K.shape[0]
        self.support = check_indices(support, N)
        self._pos = {int(i): j for j, i in enumerate(self.support)}
        E = np.zeros((N, self.support.size))
        E[self.support, np.arange(self.support.size)] = 1.0
        if laplacian_weight:
            if L is None:
                raise ValueError("a graph Laplacian is required when laplacian_weight > 0")
            M = (laplacian_weight / N**2) * np.asarray(L @ self.K)
            # L K has real non-negative eigenvalues, so M is nonsingular
            M[np.diag_indices(N)] += ridge
            self.Z = linalg.lu_solve(linalg.lu_factor(M, check_finite=False), E, check_finite=False)
        else:
            self.Z = E / ridge

    def dual_coeffs(self, labeled_indices, y_l) -> np.ndarray:
        idx = np.asarray(labeled_indices, dtype=np.intp).ravel()
        y_l = np.asarray(y_l, dtype=float).ravel()
        if idx.size == 0 or idx.size != y_l.size:
            raise ValueError(f"{idx.size} labeled indices but {y_l.size} labels")
        try:
            pos = [self._pos[int(i)] for i in idx]
        except KeyError as exc:
            raise ValueError(f"labeled index {exc.args[0]} is outside the solver support") from None
        Z = self.Z[:, pos]
        S = self.K[idx] @ Z
        S[np.diag_indices(idx.size)] += idx.size
        try:
            lu = linalg.lu_factor(S, check_finite=False)
            if np.min(np.abs(np.diag(lu[0]))) <= np.finfo(float).eps * np.abs(lu[0]).max() * idx.size:
                raise linalg.LinAlgError("near-singular")
        except (linalg.LinAlgError, ValueError) as exc:
            raise linalg.LinAlgError(f"LapRLS system is singular ({exc}); try a larger ridge") from exc
        return Z @ linalg.lu_solve(lu, y_l, check_finite=False)


def fit_laprls(
    K,
    labeled_indices,
    y_l,
    ridge: float,
    laplacian_weight: float,
    graph_k: int = 10,
    graph_bandwidth: float = 1.0,
    train=None,
    kernel: Optional[Kernel] = None,
    laplacian=None,
) -> LapRlsModel:
    """Laplacian regularized least squares over all N points.

    Solves ``(J K + ridge n I + laplacian_weight (n/N^2) L K) c = J y``. The
    graph Laplacian is built from ``train`` unless ``laplacian`` is given.
    With ``laplacian_weight = 0`` this is KRR on the labeled points with ridge
    ``ridge * n``.
    """
    if not laplacian_weight >= 0:
        raise ValueError(f"laplacian_weight must be non-negative, got {laplacian_weight}")
    K = np.asarray(K, dtype=float)
    idx = check_indices(labeled_indices, K.shape[0])
    if laplacian is None and laplacian_weight:
        if train is None:
            raise ValueError("train points are required to build the graph Laplacian")
        laplacian = graph_laplacian(knn_heat_graph(train, graph_k, graph_bandwidth, as_sparse=True))
    coeffs = LapRlsSolver(K, laplacian, ridge, laplacian_weight, idx).dual_coeffs(idx, y_l)
    pts = None if train is None else _train_points(train)
    return LapRlsModel(coeffs, pts, kernel, graph_k, graph_bandwidth, float(ridge), float(laplacian_weight))


# --------------------------------------------------------------------------- metrics


def regression_error(predictions, truth, metric: str = "mse") -> float:
    p = np.asarray(predictions, dtype=float).ravel()
    t = np.asarray(truth, dtype=float).ravel()
    if p.size == 0 or t.size == 0:
        raise ValueError("empty vectors")
    if p.size != t.size:
        raise ValueError(f"length mismatch: {p.size} predictions vs {t.size} targets")
    mse = float(np.mean((p - t) ** 2))
    if metric == "mse":
        return mse
    if metric == "rmse":
        return float(np.sqrt(mse))
    raise ValueError(f"unknown metric {metric!r}")
