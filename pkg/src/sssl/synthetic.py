"""Synthetic regression problems on [0, 1] with an exactly known operator spectrum.

Under the uniform distribution on [0, 1] the functions ``sqrt(2) cos(k pi x)``
are orthonormal, so the truncated series kernel

    k(x, y) = sum_{k <= K_max} lam_k * phi_k(x) * phi_k(y),   lam_k = a2 * k**-p

has population eigenpairs ``(lam_k, phi_k)`` exactly, with sup|phi_k| = sqrt(2).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .kernels import Dataset, as_points

QUAD_NODES = 20000


def cosine_basis(x, K_max: int) -> np.ndarray:
    """(m, K_max) matrix of ``sqrt(2) cos(k pi x)`` for k = 1..K_max."""
    x = np.asarray(x, dtype=float).reshape(-1)
    k = np.arange(1, K_max + 1)
    return np.sqrt(2.0) * np.cos(np.pi * np.outer(x, k))


def spectrum_scale(p: float, K_max: int) -> float:
    """a^2 with 2 a^2 sum_k k^-p = 1, so that k(x, x) <= 1 everywhere."""
    return 1.0 / (2.0 * float(np.sum(np.arange(1, K_max + 1, dtype=float) ** (-p))))


@dataclass(frozen=True, eq=False)
class SeriesKernel:
    """Truncated Mercer expansion over the cosine basis."""

    lambdas: np.ndarray

    @property
    def K_max(self) -> int:
        return self.lambdas.shape[0]

    def pairwise(self, A, B) -> np.ndarray:
        A = as_points(A)
        B = as_points(B)
        if A.shape[1] != 1 or B.shape[1] != 1:
            raise ValueError("the series kernel is defined on one-dimensional inputs")
        PA = cosine_basis(A[:, 0], self.K_max)
        PB = PA if B is A else cosine_basis(B[:, 0], self.K_max)
        return (PA * self.lambdas) @ PB.T


@dataclass(frozen=True, eq=False)
class SyntheticSpec:
    p: float = 3.0
    K_max: int = 64
    R: float = 1.0
    alpha: Optional[Sequence[float]] = None
    residual_amp: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if not self.p > 2:
            raise ValueError(f"spectrum decay p must exceed 2, got {self.p}")
        if int(self.K_max) != self.K_max or self.K_max < 1:
            raise ValueError(f"K_max must be a positive integer, got {self.K_max}")
        if not self.R > 0:
            raise ValueError(f"R must be positive, got {self.R}")
        if not self.residual_amp >= 0:
            raise ValueError(f"residual_amp must be non-negative, got {self.residual_amp}")
        alpha = np.zeros(self.K_max) if self.alpha is None else np.asarray(self.alpha, dtype=float)
        if alpha.shape != (self.K_max,):
            raise ValueError(f"alpha must have length K_max={self.K_max}, got {alpha.shape}")
        object.__setattr__(self, "alpha", alpha)
        norm2 = rkhs_norm_sq(self)
        if norm2 > self.R**2 * (1 + 1e-12):
            raise ValueError(f"||g||_H^2 = {norm2:.6g} exceeds R^2 = {self.R ** 2:.6g}")

    @property
    def a2(self) -> float:
        return spectrum_scale(self.p, self.K_max)


def population_spectrum(spec: SyntheticSpec) -> np.ndarray:
    k = np.arange(1, spec.K_max + 1, dtype=float)
    return spec.a2 * k ** (-spec.p)


def rkhs_norm_sq(spec: SyntheticSpec) -> float:
    """||g||_H^2 = sum_k alpha_k^2 / lam_k."""
    k = np.arange(1, spec.K_max + 1, dtype=float)
    lam = spectrum_scale(spec.p, spec.K_max) * k ** (-spec.p)
    return float(np.sum(np.asarray(spec.alpha) ** 2 / lam))


def residual_shape(x, K_max: int) -> np.ndarray:
    """cos((K_max + 1) pi x): sup-norm 1, orthogonal in L2 to every basis function."""
    return np.cos((K_max + 1) * np.pi * np.asarray(x, dtype=float))


@dataclass(frozen=True, eq=False)
class GroundTruth:
    f: Callable[[np.ndarray], np.ndarray]
    g: Callable[[np.ndarray], np.ndarray]
    eps_sq: float
    eps_max_sq: float
    spec: SyntheticSpec = field(repr=False)

    def a0_ratio(self, n: int, N: int) -> float:
        """eps_max^2 ln N / (n eps^2); reported without a threshold."""
        if self.eps_sq == 0:
            return 0.0 if self.eps_max_sq == 0 else float("inf")
        return self.eps_max_sq * np.log(N) / (n * self.eps_sq)


def ground_truth(spec: SyntheticSpec) -> GroundTruth:
    alpha = np.asarray(spec.alpha)
    K_max = spec.K_max
    amp = spec.residual_amp

    def g(x):
        return cosine_basis(x, K_max) @ alpha

    def f(x):
        x = np.asarray(x, dtype=float).reshape(-1)
        return cosine_basis(x, K_max) @ alpha + amp * residual_shape(x, K_max)

    # midpoint rule, fixed node order
    nodes = (np.arange(QUAD_NODES) + 0.5) / QUAD_NODES
    diff = amp * residual_shape(nodes, K_max)
    eps_sq = float(np.mean(diff**2))
    eps_max_sq = float(amp**2)
    return GroundTruth(f=f, g=g, eps_sq=eps_sq, eps_max_sq=eps_max_sq, spec=spec)


def make_synthetic(spec: SyntheticSpec, N: int, seed: Optional[int] = None):
    """Sample N uniform points and their noiseless labels y = f(x).

    Returns ``(dataset, ground_truth, kernel)``. ``seed`` overrides ``spec.seed``.
    """
    if N < 1:
        raise ValueError(f"N must be positive, got {N}")
    rng = np.random.default_rng(spec.seed if seed is None else seed)
    x = rng.uniform(0.0, 1.0, size=N)
    truth = ground_truth(spec)
    data = Dataset(x[:, None], truth.f(x), feature_names=("x",))
    return data, truth, SeriesKernel(population_spectrum(spec))


def true_generalization_error(predict, truth: GroundTruth, n_mc: int = 10000, seed: int = 0):
    """Monte-Carlo estimate of E_x[(predict(x) - f(x))^2] and its standard error."""
    if n_mc < 100:
        raise ValueError(f"n_mc must be at least 100, got {n_mc}")
    rng = np.random.default_rng(seed)
    x = rng.uniform(0.0, 1.0, size=n_mc)
    sq = (np.asarray(predict(x[:, None]), dtype=float).ravel() - truth.f(x)) ** 2
    return float(sq.mean()), float(sq.std(ddof=1) / np.sqrt(n_mc))


def smooth_alpha(p: float, K_max: int = 64, R: float = 1.0, decay: float = 1.0, fill: float = 0.9) -> np.ndarray:
    """Coefficients alpha_k proportional to lam_k^((1 + decay) / 2), scaled so ||g||_H^2 = fill R^2.

    The RKHS weight of term k is alpha_k^2 / lam_k, which decays like lam_k^decay.
    """
    k = np.arange(1, K_max + 1, dtype=float)
    lam = spectrum_scale(p, K_max) * k ** (-p)
    alpha = lam ** (0.5 + decay / 2.0)
    alpha = alpha * np.sqrt(fill * R**2 / np.sum(alpha**2 / lam))
    # rounding can leave the norm an ulp above R^2 when fill = 1
    while np.sum(alpha**2 / lam) > R**2:
        alpha = alpha * (1.0 - np.finfo(float).eps)
    return alpha
