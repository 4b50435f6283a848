"""Computable checks of the spectral assumptions behind SSSL.

Covers the power-law spectrum envelope, eigenfunction sup-norm estimates,
the labeled-sample budget, the eigengap condition and the unlabeled-sample
budget. Where the underlying definitions use population eigenpairs, the
estimators here substitute the empirical ones (they are labeled as such in
the report).
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from .eigensystem import EigenSystem, RankDeficientError, eigenfunction_values
from .kernels import Dataset, Kernel, kernel_matrix

FIT_RTOL = 1e-12


@dataclass(frozen=True)
class PowerLawFit:
    """Envelope ``lambda_k <= a2 * k**-p`` fitted on ``lambdas[start:stop]`` (0-based)."""

    a2: float
    p: float
    max_violation: float
    fitted_range: tuple

    @property
    def a(self) -> float:
        return math.sqrt(self.a2)

    def envelope(self, k) -> np.ndarray:
        return self.a2 * np.asarray(k, dtype=float) ** (-self.p)


def fit_power_law(lambdas) -> PowerLawFit:
    """Least-squares slope on log-log axes, then the tightest envelope with that slope.

    Only eigenvalues above ``1e-12 * lambda_1`` enter the fit; they must form a
    prefix of the (descending) spectrum.
    """
    lam = np.asarray(lambdas, dtype=float).ravel()
    if lam.size == 0 or lam[0] <= 0:
        raise ValueError("need at least 3 strictly positive eigenvalues")
    keep = lam > FIT_RTOL * lam[0]
    stop = int(np.argmin(keep)) if not keep.all() else lam.size
    if stop < 3:
        raise ValueError(f"need at least 3 strictly positive eigenvalues, got {stop}")
    k = np.arange(1, stop + 1, dtype=float)
    logk, logl = np.log(k), np.log(lam[:stop])
    if np.ptp(logl) == 0:
        p = 0.0
    else:
        slope = np.polyfit(logk, logl, 1)[0]
        p = max(-float(slope), 0.0)
    a2 = float(np.max(lam[:stop] * k**p))
    # round-off can leave the envelope an ulp under some lambda_k; nudge a2 up
    while np.any(a2 * k ** (-p) < lam[:stop]):
        a2 = float(np.nextafter(a2, np.inf))
    violation = float(np.max(lam[:stop] - a2 * k ** (-p)))
    return PowerLawFit(a2=a2, p=p, max_violation=violation, fitted_range=(0, stop))


def _normalized_features(es, spec, train, eval_points, s):
    X = train.points if isinstance(train, Dataset) else np.asarray(train, dtype=float)
    E = eval_points.points if isinstance(eval_points, Dataset) else np.asarray(eval_points, dtype=float)
    if not 1 <= s <= es.s:
        raise ValueError(f"s must lie in [1, {es.s}], got {s}")
    Phi = eigenfunction_values(es, kernel_matrix(spec, X, E), s)
    return Phi / np.sqrt(es.lambdas[:s])


def c_hat_estimate(es: EigenSystem, spec: Kernel, train, eval_points, s: Optional[int] = None) -> float:
    """max over eval points and i <= s of |phi_i(x)| / sqrt(lambda_i) (empirical eigenpairs)."""
    s = es.s if s is None else s
    return float(np.max(np.abs(_normalized_features(es, spec, train, eval_points, s))))


def m_of_s(es: EigenSystem, spec: Kernel, train, eval_points, s: int) -> float:
    """max over eval points of sum_{i<=s} phi_i(x)^2 / lambda_i.

    ``phi_i / sqrt(lambda_i)`` has unit mean square over the sample, matching
    eigenfunctions normalized in L2 of the data distribution.
    """
    return float(np.max(np.sum(_normalized_features(es, spec, train, eval_points, s) ** 2, axis=1)))


def eigengap(lambdas, s: int) -> float:
    lam = np.asarray(lambdas, dtype=float).ravel()
    if s < 1 or s + 1 > lam.size:
        raise ValueError(f"eigengap at s={s} needs {s + 1} eigenvalues, got {lam.size}")
    return float(lam[s - 1] - lam[s])


def tau_n(N: float) -> float:
    if not N >= 2:
        raise ValueError(f"N must be at least 2, got {N}")
    return 12.0 * math.log(N) / math.sqrt(N)


def _check_positive(**kw):
    for name, v in kw.items():
        if not (np.isfinite(v) and v > 0):
            raise ValueError(f"{name} must be positive, got {v}")


def required_labels(C: float, N: float, R: float, a: float, eps: float, p: float) -> float:
    """Labeled budget n0 = 64 C^2 ln^2(2 N^3) (R a / eps)^(4 / (p - 1))."""
    _check_positive(C=C, N=N, R=R, a=a, eps=eps)
    if not p > 1:
        raise ValueError(f"power index must exceed 1, got {p}")
    return 64.0 * C**2 * math.log(2.0 * float(N) ** 3) ** 2 * (R * a / eps) ** (4.0 / (p - 1.0))


def recommended_s(a: float, R: float, eps: float, p: float) -> int:
    _check_positive(a=a, R=R, eps=eps)
    if not p > 1:
        raise ValueError(f"power index must exceed 1, got {p}")
    return max(1, math.ceil((a * R / eps) ** (2.0 / (p - 1.0))))


@dataclass(frozen=True)
class BudgetCheck:
    ok: bool
    required_n: float
    reason: str


def theorem2_budget(N: float, R: float, a: float, eps: float, r_s: float) -> BudgetCheck:
    """Unlabeled budget N >= max(144 R^2 ln^2 N / (r_s^2 eps^2), 144 R^4 a^2 ln^2 N / eps^4)."""
    _check_positive(N=N, R=R, a=a, eps=eps)
    if not r_s > 0:
        return BudgetCheck(False, math.inf, "zero_eigengap")
    ln2 = math.log(N) ** 2
    need = max(144 * R**2 * ln2 / (r_s**2 * eps**2), 144 * R**4 * a**2 * ln2 / eps**4)
    return BudgetCheck(N >= need, need, "ok" if N >= need else "insufficient_unlabeled")


def theorem2_budget_ok(N: float, R: float, a: float, eps: float, r_s: float) -> bool:
    return theorem2_budget(N, R, a, eps, r_s).ok


@dataclass
class DiagnosticsReport:
    power_law: PowerLawFit
    c_hat: float
    m_of_s: Optional[float]
    eigengap: Optional[float]
    tau: float
    n0: Optional[float]
    recommended_s: Optional[int]
    theorem2_budget_ok: bool
    inputs_echo: dict
    a1_ok: bool = False
    b3_ok: Optional[bool] = None
    b4_ok: Optional[bool] = None
    gap_s: Optional[int] = None
    notes: list = field(default_factory=list)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["power_law"]["a"] = self.power_law.a
        d["power_law"]["fitted_range"] = list(self.power_law.fitted_range)
        return d

    def to_json(self) -> str:
        def clean(v):
            if isinstance(v, float) and not math.isfinite(v):
                return None
            if isinstance(v, dict):
                return {k: clean(x) for k, x in v.items()}
            if isinstance(v, (list, tuple)):
                return [clean(x) for x in v]
            return v

        return json.dumps(clean(self.to_dict()), indent=2, sort_keys=True) + "\n"


def assumption_report(
    K,
    es: EigenSystem,
    spec: Kernel,
    train,
    R: float = 1.0,
    eps: float = 0.1,
    n_labeled: Optional[int] = None,
    eval_points=None,
) -> DiagnosticsReport:
    """Aggregate every computable assumption check for one kernel and dataset."""
    if es.s < 2:
        raise ValueError("the report needs an eigensystem with s >= 2")
    _check_positive(R=R, eps=eps)
    N = es.n_points
    ev = train if eval_points is None else eval_points
    usable = es.numerical_rank
    notes = [
        "c_hat and m_of_s use empirical eigenpairs in place of population ones",
        f"R={R} and eps={eps} are user inputs; they cannot be estimated from data",
    ]

    def stage(name, fn, *args):
        try:
            return fn(*args)
        except (ValueError, RankDeficientError) as exc:
            raise type(exc)(f"{name}: {exc}") from exc

    fit = stage("power_law", fit_power_law, es.lambdas[:usable])
    c_hat = stage("c_hat", c_hat_estimate, es, spec, train, ev, usable)
    tau = stage("tau", tau_n, N)
    a1_ok = fit.p > 2
    rec = n0 = m_s = gap = None
    b3 = b4 = None
    gap_s = None
    budget = False
    if fit.p > 1:
        rec = stage("recommended_s", recommended_s, fit.a, R, eps, fit.p)
        n0 = stage("n0", required_labels, c_hat, N, R, fit.a, eps, fit.p)
        gap_s = min(rec, usable - 1, es.s - 1)
        if gap_s < rec:
            notes.append(f"recommended s={rec} exceeds available eigenpairs; gap and M(s) use s={gap_s}")
        if gap_s >= 1:
            m_s = stage("m_of_s", m_of_s, es, spec, train, ev, gap_s)
            gap = stage("eigengap", eigengap, es.lambdas, gap_s)
            b4 = gap >= 3 * tau ** (2.0 / 3.0)
            budget = theorem2_budget(N, R, fit.a, eps, gap).ok
        if n_labeled is not None:
            b3 = n_labeled >= n0
    else:
        notes.append(f"power index p={fit.p:.3g} <= 1: s rule and n0 undefined")
    if not a1_ok:
        notes.append(f"A1 fails: fitted power index p={fit.p:.3g} is not above 2")
    return DiagnosticsReport(
        power_law=fit,
        c_hat=c_hat,
        m_of_s=m_s,
        eigengap=gap,
        tau=tau,
        n0=n0,
        recommended_s=rec,
        theorem2_budget_ok=bool(budget),
        inputs_echo={"R": R, "eps": eps, "N": N, "n": n_labeled, "s": es.s},
        a1_ok=bool(a1_ok),
        b3_ok=b3,
        b4_ok=b4,
        gap_s=gap_s,
        notes=notes,
    )


def write_envelope_csv(lambdas, fit: PowerLawFit, path) -> None:
    lam = np.asarray(lambdas, dtype=float).ravel()
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["index", "lambda", "envelope"])
        env = fit.envelope(np.arange(1, lam.size + 1))
        for k in range(lam.size):
            w.writerow([k + 1, repr(float(lam[k])), repr(float(env[k]))])
