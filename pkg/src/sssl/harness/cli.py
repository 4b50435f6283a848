"""Command-line entry point: ``sssl {run,diagnose,spectrum,synth,cv}``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from ..diagnostics import assumption_report, fit_power_law
from ..eigensystem import top_eigenpairs
from ..kernels import KernelSpec, gram_matrix, median_distance
from ..synthetic import SyntheticSpec, make_synthetic, smooth_alpha
from .data import DataError, load_csv, write_csv
from .protocol import (
    ConfigError,
    ExperimentConfig,
    LoadedData,
    TrialData,
    cross_validate,
    export_spectrum,
    format_table,
    load_source,
    run_experiment,
    split_indices,
    labeled_count,
    write_outputs,
)


def _load_config(args) -> ExperimentConfig:
    raw = {}
    if getattr(args, "config", None):
        with open(args.config) as fh:
            raw = json.load(fh)
    if getattr(args, "data", None):
        raw["data_source"] = args.data
    for key in ("seed", "metric", "target"):
        v = getattr(args, key, None)
        if v is not None:
            raw[key] = v
    return ExperimentConfig.from_dict(raw)


def _dataset_and_kernel(args):
    """Dataset plus the kernel named on the command line (or the synthetic one)."""
    if args.config:
        cfg = _load_config(args)
        loaded = load_source(cfg)
    else:
        if not args.data:
            raise ConfigError("pass --data or --config")
        loaded = LoadedData(load_csv(args.data, args.target or "last"))
    data = loaded.data
    if loaded.kernel is not None and args.kind in (None, "series"):
        return data, loaded.kernel
    kind = args.kind or "rbf"
    if kind == "series":
        raise ConfigError("kernel kind 'series' needs a synthetic data source")
    if kind == "rbf":
        bw = args.bandwidth if args.bandwidth is not None else args.bandwidth_factor * median_distance(data.points)
    else:
        bw = 1.0
    return data, KernelSpec(kind, bw, args.degree)


def _spectrum(args):
    data, kern = _dataset_and_kernel(args)
    K = gram_matrix(kern, data)
    es = top_eigenpairs(K, min(args.s, data.n_points))
    return data, kern, K, es


def cmd_run(args) -> int:
    cfg = _load_config(args)
    table, es = run_experiment(cfg, keep_trials=True)
    paths = write_outputs(table, es, args.out_dir)
    sys.stdout.write(format_table(table))
    for name, p in sorted(paths.items()):
        print(f"wrote {name}: {p}")
    return 0


def cmd_diagnose(args) -> int:
    data, kern, K, es = _spectrum(args)
    rep = assumption_report(K, es, kern, data, R=args.R, eps=args.eps, n_labeled=args.n_labeled)
    text = rep.to_json()
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "diagnostics.json").write_text(text)
    sys.stdout.write(text)
    return 0


def cmd_spectrum(args) -> int:
    _, _, _, es = _spectrum(args)
    lam = es.lambdas[: es.numerical_rank]
    es = es.truncate(lam.size)
    fit = fit_power_law(lam)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    export_spectrum(es, fit, out / "spectrum.csv")
    print(f"p={fit.p:.6g} a2={fit.a2:.6g} rows={lam.size} -> {out / 'spectrum.csv'}")
    return 0


def cmd_synth(args) -> int:
    alpha = smooth_alpha(args.p, args.K_max, args.R)
    spec = SyntheticSpec(
        p=args.p, K_max=args.K_max, R=args.R, alpha=alpha, residual_amp=args.residual_amp, seed=args.seed or 0
    )
    data, truth, _ = make_synthetic(spec, args.N)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_csv(data, out / "synthetic.csv")
    meta = {
        "p": spec.p,
        "K_max": spec.K_max,
        "R": spec.R,
        "a2": spec.a2,
        "residual_amp": spec.residual_amp,
        "seed": spec.seed,
        "N": args.N,
        "eps_sq": truth.eps_sq,
        "eps_max_sq": truth.eps_max_sq,
        "alpha": [float(a) for a in spec.alpha],
    }
    (out / "synthetic.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    print(f"wrote {out / 'synthetic.csv'} ({args.N} rows), eps^2={truth.eps_sq:.6g}")
    return 0


def cmd_cv(args) -> int:
    cfg = _load_config(args)
    loaded = load_source(cfg)
    data = loaded.data
    train_idx, _, order = split_indices(data.n_points, cfg, args.trial)
    train = data.subset(train_idx)
    td = TrialData(train, train.subset([0]), cfg.kernel, loaded.kernel)
    fold_seed = int(np.random.default_rng([cfg.seed, args.trial, 2]).integers(2**31))
    td.laprls_support = np.sort(order[: labeled_count(max(cfg.label_fractions), data.n_points)])
    rows = []
    for m in cfg.methods:
        for f in cfg.label_fractions:
            lab = np.sort(order[: labeled_count(f, data.n_points)])
            params = cross_validate(m, train, lab, cfg, seed=fold_seed, trial_data=td)
            rows.append({"method": m, "fraction": f, "n_labeled": int(lab.size), "params": params})
    text = json.dumps({"trial": args.trial, "choices": rows}, indent=2, sort_keys=True) + "\n"
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "cv.json").write_text(text)
    sys.stdout.write(text)
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="sssl", description="Spectral semi-supervised regression experiments.")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, config_required=False):
        p.add_argument("--config", required=config_required, help="JSON experiment config")
        p.add_argument("--out-dir", default="out")
        p.add_argument("--seed", type=int)
        p.add_argument("--metric", choices=("mse", "rmse"))
        p.add_argument("--target", help="target column name or 'last'")
        p.add_argument("--data", help="CSV path (overrides data_source)")

    def kernel_opts(p):
        p.add_argument("--kind", choices=("rbf", "linear_normalized", "polynomial_normalized", "series"))
        p.add_argument("--bandwidth", type=float)
        p.add_argument("--bandwidth-factor", type=float, default=1.0, help="multiple of the median distance")
        p.add_argument("--degree", type=int, default=2)
        p.add_argument("--s", type=int, default=256, help="eigenpairs to compute")

    p = sub.add_parser("run", help="run an experiment from a config file")
    common(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("diagnose", help="assumption report for one kernel")
    common(p)
    kernel_opts(p)
    p.add_argument("--R", type=float, default=1.0)
    p.add_argument("--eps", type=float, default=0.1)
    p.add_argument("--n-labeled", type=int)
    p.set_defaults(func=cmd_diagnose)

    p = sub.add_parser("spectrum", help="export eigenvalues with the fitted power-law envelope")
    common(p)
    kernel_opts(p)
    p.set_defaults(func=cmd_spectrum)

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    p.add_argument("--out-dir", default="out")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--p", type=float, default=3.0)
    p.add_argument("--K-max", type=int, default=64)
    p.add_argument("--R", type=float, default=1.0)
    p.add_argument("--residual-amp", type=float, default=0.0)
    p.add_argument("--N", type=int, default=1000)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("cv", help="grid search only, for one trial")
    common(p)
    p.add_argument("--trial", type=int, default=0)
    p.set_defaults(func=cmd_cv)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (ConfigError, DataError, FileNotFoundError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
