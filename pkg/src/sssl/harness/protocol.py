"""Experiment protocol: splits, label sweeps, cross-validation and result tables.

One trial shuffles the data into a train/test partition, then draws a nested
sequence of labeled sets inside the training split (one per label fraction,
sized relative to the whole dataset). Every method in a trial sees the same
labeled set. Semi-supervised methods see all training features; KRR sees
only the labeled points. Test labels are read only to score predictions.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Optional

import numpy as np
from scipy.spatial import cKDTree

from ..eigensystem import EigenSystem, top_eigenpairs
from ..kernels import Dataset, KernelSpec, gram_matrix, kernel_matrix, median_distance
from ..models import LapRlsSolver, fit_krr, graph_laplacian, knn_heat_graph, regression_error, sssl_coefficients
from ..synthetic import SyntheticSpec, make_synthetic
from .data import load_csv

log = logging.getLogger(__name__)

METHODS = ("sssl", "krr", "laprls")
S_CAP = 256


class ConfigError(ValueError):
    pass


def _default_fractions():
    return [round(0.01 * k, 2) for k in range(2, 10)]


@dataclass
class KernelGrid:
    kind: str = "rbf"
    bandwidth_factors: list = field(default_factory=lambda: [0.1, 0.3, 1.0, 3.0, 10.0])
    bandwidths: Optional[list] = None
    degree: int = 2


@dataclass
class LapRlsGrid:
    ridge: list = field(default_factory=lambda: [1e-4, 1e-2])
    laplacian_weight: list = field(default_factory=lambda: [1.0, 100.0])
    graph_k: list = field(default_factory=lambda: [10])
    graph_bandwidth_factors: list = field(default_factory=lambda: [1.0])
    # kernel bandwidths (x median distance) searched for LapRLS; null means the main kernel grid
    bandwidth_factors: Optional[list] = field(default_factory=lambda: [1.0])


@dataclass
class ExperimentConfig:
    data_source: object = None
    target: str = "last"
    kernel: KernelGrid = field(default_factory=KernelGrid)
    methods: list = field(default_factory=lambda: ["sssl", "krr", "laprls"])
    label_fractions: list = field(default_factory=_default_fractions)
    test_fraction: float = 0.10
    repeats: int = 10
    metric: str = "mse"
    cv_folds: int = 3
    seed: int = 0
    standardize_features: bool = False
    center_labels: bool = False
    s_grid: Optional[list] = None
    ridge_grid: list = field(default_factory=lambda: [10.0**k for k in range(-6, 2)])
    laprls: LapRlsGrid = field(default_factory=LapRlsGrid)

    def __post_init__(self):
        if isinstance(self.kernel, dict):
            self.kernel = _build(KernelGrid, self.kernel, "kernel")
        if isinstance(self.laprls, dict):
            self.laprls = _build(LapRlsGrid, self.laprls, "laprls")
        self.validate()

    def validate(self):
        if not self.methods:
            raise ConfigError("methods must be non-empty")
        bad = [m for m in self.methods if m not in METHODS]
        if bad:
            raise ConfigError(f"unknown methods {bad}; expected a subset of {METHODS}")
        if len(set(self.methods)) != len(self.methods):
            raise ConfigError("methods contain duplicates")
        if not self.label_fractions or any(not 0 < f < 1 for f in self.label_fractions):
            raise ConfigError("label_fractions must be non-empty and lie in (0, 1)")
        if not 0 < self.test_fraction < 1:
            raise ConfigError("test_fraction must lie in (0, 1)")
        if self.repeats < 1:
            raise ConfigError("repeats must be >= 1")
        if self.metric not in ("mse", "rmse"):
            raise ConfigError(f"metric must be 'mse' or 'rmse', got {self.metric!r}")
        if self.cv_folds < 2:
            raise ConfigError("cv_folds must be >= 2")
        if self.kernel.kind not in ("rbf", "linear_normalized", "polynomial_normalized", "series"):
            raise ConfigError(f"unknown kernel kind {self.kernel.kind!r}")
        if self.s_grid is not None and (not self.s_grid or min(self.s_grid) < 1):
            raise ConfigError("s_grid entries must be >= 1")
        if not self.ridge_grid or min(self.ridge_grid) <= 0:
            raise ConfigError("ridge_grid entries must be positive")

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        return _build(cls, d, "config")

    @classmethod
    def from_json(cls, path) -> "ExperimentConfig":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def to_dict(self) -> dict:
        return asdict(self)


def _build(cls, d, where):
    if not isinstance(d, dict):
        raise ConfigError(f"{where} must be a JSON object")
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(d) - known)
    if unknown:
        raise ConfigError(f"unknown keys in {where}: {unknown}")
    try:
        return cls(**d)
    except TypeError as exc:
        raise ConfigError(f"{where}: {exc}") from exc


# --------------------------------------------------------------------------- data


@dataclass
class LoadedData:
    data: Dataset
    kernel: object = None  # fixed kernel for synthetic sources
    truth: object = None


def load_source(config: ExperimentConfig) -> LoadedData:
    src = config.data_source
    if src is None:
        raise ConfigError("data_source is required")
    if isinstance(src, dict):
        if set(src) != {"synthetic"}:
            raise ConfigError("a structured data_source must be {'synthetic': {...}}")
        opts = dict(src["synthetic"])
        N = int(opts.pop("N", 1000))
        spec = _build(SyntheticSpec, opts, "synthetic")
        data, truth, kern = make_synthetic(spec, N)
        return LoadedData(data, kern, truth)
    return LoadedData(load_csv(src, config.target))


# --------------------------------------------------------------------------- splits


def labeled_count(fraction: float, N: int) -> int:
    return max(1, int(round(fraction * N)))


def split_indices(N: int, config: ExperimentConfig, trial: int):
    """Sorted train/test row indices and a permutation of train positions for labeling."""
    rng = np.random.default_rng([config.seed, trial])
    perm = rng.permutation(N)
    n_test = max(1, int(round(config.test_fraction * N)))
    if n_test >= N:
        raise ValueError(f"test split of {n_test} leaves no training points out of {N}")
    test = np.sort(perm[:n_test])
    train = np.sort(perm[n_test:])
    order = np.random.default_rng([config.seed, trial, 1]).permutation(train.size)
    return train, test, order


def split_and_label(data: Dataset, config: ExperimentConfig, trial: int, fraction: Optional[float] = None):
    """``(train, test, labeled)`` with ``labeled`` indexing rows of ``train``.

    Deterministic per ``(config.seed, trial)``. Labeled sets for increasing
    fractions are nested prefixes of one permutation of the training split,
    sized ``round(fraction * N)`` against the whole dataset. Without
    ``fraction`` the largest configured fraction is used.
    """
    N = data.n_points
    train, test, order = split_indices(N, config, trial)
    frac = max(config.label_fractions) if fraction is None else fraction
    m = labeled_count(frac, N)
    if m > train.size:
        raise ValueError(f"{m} labeled examples requested but the training split has {train.size}")
    return data.subset(train), data.subset(test), np.sort(order[:m])


def make_folds(n: int, cv_folds: int, seed: int):
    """(fit, validation) position arrays; leave-one-out when n < cv_folds."""
    if n < 2:
        raise ValueError("cross-validation needs at least 2 labeled examples")
    k = cv_folds if n >= cv_folds else n
    perm = np.random.default_rng(seed).permutation(n)
    chunks = np.array_split(perm, k)
    return [(np.sort(np.concatenate(chunks[:i] + chunks[i + 1:])), np.sort(chunks[i])) for i in range(k)]


# --------------------------------------------------------------------------- grid search


def _tie_key(params: dict):
    # most-regularized first: smaller s, larger ridge, smaller bandwidth
    return (
        params.get("s", 0),
        -params.get("ridge", 0.0),
        params.get("bandwidth", 0.0),
        -params.get("laplacian_weight", 0.0),
        params.get("graph_k", 0),
        params.get("graph_bandwidth", 0.0),
    )


def select_best(candidates):
    """Pick the minimum-score ``(params, score)`` pair with the documented tie-break."""
    candidates = list(candidates)
    if not candidates:
        raise ValueError("empty grid")
    finite = [c for c in candidates if np.isfinite(c[1])]
    if not finite:
        raise ValueError("every grid point failed during cross-validation")
    return min(finite, key=lambda c: (c[1], _tie_key(c[0])))[0]


def _center(y):
    return float(np.mean(y))


class TrialData:
    """Feature/label views for one trial plus per-bandwidth caches."""

    def __init__(self, train: Dataset, test: Dataset, kernel_grid: KernelGrid, fixed_kernel=None, s_cap=S_CAP):
        self.train = train
        self.test = test
        self.grid = kernel_grid
        self.fixed_kernel = fixed_kernel
        self.s_cap = s_cap
        self._median = None
        self._eig: dict = {}
        self._K_key = None
        self._K = None
        self._graphs: dict = {}
        # labeled indices every LapRLS fit draws from; defaults to the fit's own set
        self.laprls_support = None
        self._solvers: dict = {}
        self._solver_bw = None

    @property
    def median(self) -> float:
        if self._median is None:
            self._median = median_distance(self.train.points)
        return self._median

    def bandwidths(self, factors=None):
        if self.fixed_kernel is not None or self.grid.kind != "rbf":
            return [None]
        if self.grid.bandwidths:
            return [float(b) for b in self.grid.bandwidths]
        factors = self.grid.bandwidth_factors if factors is None else factors
        return [float(f) * self.median for f in factors]

    def kernel(self, bandwidth):
        if self.fixed_kernel is not None:
            return self.fixed_kernel
        g = self.grid
        if g.kind == "series":
            raise ConfigError("kernel kind 'series' needs a synthetic data source")
        return KernelSpec(g.kind, bandwidth if bandwidth is not None else 1.0, g.degree)

    def gram(self, bandwidth) -> np.ndarray:
        if self._K_key != (bandwidth,):
            self._K = None
            self._K = gram_matrix(self.kernel(bandwidth), self.train)
            self._K_key = (bandwidth,)
        return self._K

    def test_block(self, bandwidth) -> np.ndarray:
        return kernel_matrix(self.kernel(bandwidth), self.test, self.train)

    def eigensystem(self, bandwidth) -> EigenSystem:
        if bandwidth not in self._eig:
            K = self.gram(bandwidth)
            s = min(self.s_cap, K.shape[0])
            # refinement only rescales near-null columns, which gamma absorbs
            self._eig[bandwidth] = top_eigenpairs(K, s, refine=False)
        return self._eig[bandwidth]

    def laplacian(self, graph_k, graph_bw_factor):
        key = (graph_k, graph_bw_factor)
        if key not in self._graphs:
            X = self.train.points
            kk = min(graph_k, X.shape[0] - 1)
            if kk >= 1:
                d, _ = cKDTree(X).query(X, k=kk + 1)
                scale = float(np.median(d[:, -1]))
            else:
                scale = 1.0
            bw = graph_bw_factor * (scale if scale > 0 else 1.0)
            self._graphs[key] = (graph_laplacian(knn_heat_graph(X, graph_k, bw, as_sparse=True)), bw)
        return self._graphs[key]


    def laprls_solver(self, bandwidth, params, labeled) -> LapRlsSolver:
        support = self.laprls_support if self.laprls_support is not None else labeled
        key = (params["graph_k"], params["graph_bandwidth_factor"], params["ridge"], params["laplacian_weight"])
        key += (support.tobytes(),)
        if self._solver_bw != (bandwidth,):
            self._solvers.clear()
            self._solver_bw = (bandwidth,)
        if key not in self._solvers:
            L, _ = self.laplacian(params["graph_k"], params["graph_bandwidth_factor"])
            self._solvers[key] = LapRlsSolver(
                self.gram(bandwidth), L, params["ridge"], params["laplacian_weight"], support
            )
        return self._solvers[key]


def s_candidates(es: EigenSystem, s_grid=None) -> list:
    cap = min(S_CAP, es.numerical_rank)
    if s_grid is not None:
        return sorted({int(s) for s in s_grid if s <= cap})
    out, s = [], 2
    while s <= cap:
        out.append(s)
        s *= 2
    if cap >= 1 and cap not in out:
        out.append(cap)
    return out


def _sssl_predict(es, K, fit_pos, y_fit, s, query_rows, center):
    mu = _center(y_fit) if center else 0.0
    gamma = sssl_coefficients(es, K[:, fit_pos], y_fit - mu, s)
    coef = es.scaled_vectors(s) @ gamma
    return query_rows @ coef + mu


def _krr_predict(K_fit, y_fit, ridge, K_query, center):
    mu = _center(y_fit) if center else 0.0
    return fit_krr(K_fit, y_fit - mu, ridge).predict_from_kernel(K_query) + mu


def _laprls_predict(solver, fit_pos, y_fit, K_query, center):
    mu = _center(y_fit) if center else 0.0
    return K_query @ solver.dual_coeffs(fit_pos, y_fit - mu) + mu


def score_grid(method, td: TrialData, bandwidth, labeled, y_l, folds, config: ExperimentConfig):
    """CV scores ``[(params, mean validation error)]`` for every grid point at one bandwidth."""
    out = []
    center = config.center_labels
    metric = config.metric
    if method == "sssl":
        es = td.eigensystem(bandwidth)
        K = td.gram(bandwidth)
        for s in s_candidates(es, config.s_grid):
            errs = []
            for fit, val in folds:
                pred = _sssl_predict(es, K, labeled[fit], y_l[fit], s, K[labeled[val]], center)
                errs.append(regression_error(pred, y_l[val], metric))
            out.append(({"bandwidth": bandwidth, "s": s}, float(np.mean(errs))))
    elif method == "krr":
        K = td.gram(bandwidth)
        Kll = K[np.ix_(labeled, labeled)]
        for ridge in config.ridge_grid:
            errs = []
            for fit, val in folds:
                pred = _krr_predict(Kll[np.ix_(fit, fit)], y_l[fit], ridge, Kll[np.ix_(val, fit)], center)
                errs.append(regression_error(pred, y_l[val], metric))
            out.append(({"bandwidth": bandwidth, "ridge": float(ridge)}, float(np.mean(errs))))
    elif method == "laprls":
        K = td.gram(bandwidth)
        g = config.laprls
        for gk in g.graph_k:
            for gbf in g.graph_bandwidth_factors:
                _, gbw = td.laplacian(gk, gbf)
                for ridge in g.ridge:
                    for w in g.laplacian_weight:
                        params = {
                            "bandwidth": bandwidth,
                            "ridge": float(ridge),
                            "laplacian_weight": float(w),
                            "graph_k": int(gk),
                            "graph_bandwidth": float(gbw),
                            "graph_bandwidth_factor": float(gbf),
                        }
                        errs = []
                        try:
                            solver = td.laprls_solver(bandwidth, params, labeled)
                            for fit, val in folds:
                                pred = _laprls_predict(solver, labeled[fit], y_l[fit], K[labeled[val]], center)
                                errs.append(regression_error(pred, y_l[val], metric))
                            score = float(np.mean(errs))
                        except np.linalg.LinAlgError:
                            score = math.inf
                        out.append((params, score))
    else:
        raise ValueError(f"unknown method {method!r}")
    return out


def _method_bandwidths(method, td: TrialData, config: ExperimentConfig):
    if method == "laprls" and config.laprls.bandwidth_factors is not None:
        return td.bandwidths(config.laprls.bandwidth_factors)
    return td.bandwidths()


def cross_validate(
    method: str,
    train: Dataset,
    labeled_indices,
    config: ExperimentConfig,
    seed: int = 0,
    fixed_kernel=None,
    trial_data: Optional[TrialData] = None,
) -> dict:
    """Grid point minimizing the mean validation error over folds of the labeled set."""
    labeled = np.asarray(labeled_indices, dtype=np.intp)
    y_l = train.labels[labeled]
    td = trial_data or TrialData(train, train.subset([0]), config.kernel, fixed_kernel)
    folds = make_folds(labeled.size, config.cv_folds, seed)
    cands = []
    for bw in _method_bandwidths(method, td, config):
        cands.extend(score_grid(method, td, bw, labeled, y_l, folds, config))
    return select_best(cands)


# --------------------------------------------------------------------------- results


@dataclass
class ResultsTable:
    methods: list
    fractions: list
    metric: str
    mean: dict
    std: dict
    trials: list
    config: dict

    def cell(self, method, fraction):
        return self.mean[(method, fraction)], self.std[(method, fraction)]

    def to_json(self) -> str:
        payload = {
            "metric": self.metric,
            "methods": self.methods,
            "fractions": self.fractions,
            "cells": [
                {"method": m, "fraction": f, "mean": self.mean[(m, f)], "std": self.std[(m, f)]}
                for m in self.methods
                for f in self.fractions
            ],
            "trials": self.trials,
            "config": self.config,
        }
        return json.dumps(payload, indent=2, sort_keys=True, default=_json_default) + "\n"


def _json_default(o):
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.floating,)):
        return float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"cannot serialize {type(o)}")


def aggregate(trials, methods, fractions):
    mean, std = {}, {}
    for m in methods:
        for f in fractions:
            errs = [t["error"] for t in trials if t["method"] == m and t["fraction"] == f]
            if not errs:
                raise ValueError(f"no trials for ({m}, {f})")
            mean[(m, f)] = float(np.mean(errs))
            std[(m, f)] = float(np.std(errs, ddof=1)) if len(errs) > 1 else 0.0
    return mean, std


def _fmt(v: float) -> str:
    return f"{v:.4g}"


def format_table(results: ResultsTable) -> str:
    if not results.methods or not results.fractions:
        raise ValueError("cannot format an empty table")
    head = ["% labeled data"] + [f"{round(100 * f, 6):g}%" for f in results.fractions]
    rows = [[m.upper() if m != "laprls" else "LapRLS"] + [
        f"{_fmt(results.mean[(m, f)])} ± {_fmt(results.std[(m, f)])}" for f in results.fractions
    ] for m in results.methods]
    widths = [max(len(r[j]) for r in [head] + rows) for j in range(len(head))]
    lines = [f"Regression error ({results.metric}, mean ± std over repeats)"]
    for r in [head] + rows:
        lines.append("  ".join(c.ljust(w) for c, w in zip(r, widths)).rstrip())
    return "\n".join(lines) + "\n"


def format_table_csv(results: ResultsTable) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["method", "fraction", "metric", "mean", "std"])
    for m in results.methods:
        for f in results.fractions:
            w.writerow([m, f, results.metric, repr(results.mean[(m, f)]), repr(results.std[(m, f)])])
    return buf.getvalue()


# --------------------------------------------------------------------------- engine


def _standardize(train: Dataset, test: Dataset):
    mu = train.points.mean(axis=0)
    sd = train.points.std(axis=0)
    sd[sd == 0] = 1.0
    return (
        Dataset((train.points - mu) / sd, train.labels, feature_names=train.feature_names),
        Dataset((test.points - mu) / sd, test.labels, feature_names=test.feature_names),
    )


def run_trial(loaded: LoadedData, config: ExperimentConfig, trial: int):
    """All (method, fraction) cells of one trial; returns per-cell records and the trial cache."""
    data = loaded.data
    train_idx, test_idx, order = split_indices(data.n_points, config, trial)
    train, test = data.subset(train_idx), data.subset(test_idx)
    if config.standardize_features:
        train, test = _standardize(train, test)
    td = TrialData(train, test, config.kernel, loaded.kernel)
    N = data.n_points
    fracs = sorted(config.label_fractions)
    for f in fracs:
        if labeled_count(f, N) > train.n_points:
            raise ValueError(f"fraction {f} asks for {labeled_count(f, N)} labels but train has {train.n_points}")
    labeled_sets = {f: np.sort(order[: labeled_count(f, N)]) for f in fracs}
    # the sets are nested, so the largest one supports every LapRLS fit
    td.laprls_support = labeled_sets[fracs[-1]]
    fold_seed = int(np.random.default_rng([config.seed, trial, 2]).integers(2**31))
    folds = {f: make_folds(labeled_sets[f].size, config.cv_folds, fold_seed) for f in fracs}
    scores = {(m, f): [] for m in config.methods for f in fracs}
    # bandwidth-major so each Gram matrix is built once per trial
    all_bw = []
    for m in config.methods:
        for bw in _method_bandwidths(m, td, config):
            if bw not in all_bw:
                all_bw.append(bw)
    for bw in all_bw:
        for m in config.methods:
            if bw not in _method_bandwidths(m, td, config):
                continue
            for f in fracs:
                lab = labeled_sets[f]
                scores[(m, f)].extend(score_grid(m, td, bw, lab, train.labels[lab], folds[f], config))
    records = []
    for m in config.methods:
        for f in config.label_fractions:
            params = select_best(scores[(m, f)])
            pred = _final_predict(m, td, labeled_sets[f], train.labels, params, config)
            err = regression_error(pred, test.labels, config.metric)
            records.append(
                {
                    "trial": trial,
                    "method": m,
                    "fraction": f,
                    "n_labeled": int(labeled_sets[f].size),
                    "n_train": int(train.n_points),
                    "n_test": int(test.n_points),
                    "error": err,
                    "params": params,
                }
            )
            log.info("trial %d %s %.2f: %s=%.6g %s", trial, m, f, config.metric, err, params)
    return records, td


def _final_predict(method, td: TrialData, labeled, y_all, params, config):
    bw = params.get("bandwidth")
    y_l = y_all[labeled]
    Kt = td.test_block(bw)
    center = config.center_labels
    if method == "sssl":
        es = td.eigensystem(bw)
        return _sssl_predict(es, td.gram(bw), labeled, y_l, params["s"], Kt, center)
    if method == "krr":
        K = td.gram(bw)
        return _krr_predict(K[np.ix_(labeled, labeled)], y_l, params["ridge"], Kt[:, labeled], center)
    return _laprls_predict(td.laprls_solver(bw, params, labeled), labeled, y_l, Kt, center)


def run_experiment(config: ExperimentConfig, loaded: Optional[LoadedData] = None, keep_trials: bool = False):
    loaded = loaded or load_source(config)
    trials = []
    spectra = []
    for t in range(config.repeats):
        try:
            records, td = run_trial(loaded, config, t)
        except Exception as exc:
            raise RuntimeError(f"trial {t} failed: {exc}") from exc
        trials.extend(records)
        if t == 0:
            spectra.append(_spectrum_for_export(records, td, config))
    mean, std = aggregate(trials, config.methods, config.label_fractions)
    table = ResultsTable(
        list(config.methods), list(config.label_fractions), config.metric, mean, std, trials, config.to_dict()
    )
    return (table, spectra[0]) if keep_trials else table


def _spectrum_for_export(records, td: TrialData, config):
    """Trial-0 eigensystem at the bandwidth SSSL chose for the largest label fraction."""
    frac = max(config.label_fractions)
    bw = None
    for r in records:
        if r["method"] == "sssl" and r["fraction"] == frac:
            bw = r["params"]["bandwidth"]
    if bw is None:
        bws = td.bandwidths()
        bw = bws[len(bws) // 2]
    return td.eigensystem(bw)


def export_spectrum(es: EigenSystem, fit, path) -> None:
    from ..diagnostics import write_envelope_csv

    if es.s == 0:
        raise ValueError("empty eigensystem")
    write_envelope_csv(es.lambdas, fit, path)


def write_outputs(table: ResultsTable, es: Optional[EigenSystem], out_dir) -> dict:
    from ..diagnostics import fit_power_law, write_envelope_csv

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {"table": out / "table.txt", "table_csv": out / "table.csv", "trials": out / "trials.json"}
    paths["table"].write_text(format_table(table))
    paths["table_csv"].write_text(format_table_csv(table))
    paths["trials"].write_text(table.to_json())
    if es is not None:
        lam = es.lambdas[: es.numerical_rank]
        if lam.size >= 3:
            paths["spectrum"] = out / "spectrum.csv"
            write_envelope_csv(lam, fit_power_law(lam), paths["spectrum"])
    return paths
