"""Command-line entry point: ``breathtda <subcommand> ...``."""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path
from typing import Sequence

import numpy as np

from . import __version__, dataio
from .config import ConfigError, load_config
from .eval import aggregate_importance, write_importance
from .features import FEATURE_SETS, FeatureMatrix, build_windows, feature_names, rips_cloud
from .learner import filter_low_quality, fit, load_model, save_model
from .persistence import rips_pd, sublevel_pd0
from .pipeline import PipelineError, cache_features, run_losocv_experiment
from .respiration import RESP_BAND_HZ
from .signal import butter_bandpass

log = logging.getLogger("breathtda")

PD_KINDS = ("sub-air", "sub-irr", "rips-air", "rips-irr")
SET_CHOICES = FEATURE_SETS + ("ntda",)


def _cmd_synth(args: argparse.Namespace) -> int:
    kw = {}
    if args.artifacts:
        kw["artifact_prob"] = dict(dataio.WAKE_ARTIFACTS)
    cfg = dataio.SynthConfig(
        n_subjects=args.subjects, epochs_per_subject=args.epochs, seed=args.seed,
        rate_hz=args.rate, **kw,
    )
    dirs = dataio.write_cohort(dataio.generate_synthetic(cfg), args.out)
    print(f"wrote {len(dirs)} records to {args.out}")
    return 0


def _cmd_featurize(args: argparse.Namespace) -> int:
    cfg = load_config(args.config)
    rec = dataio.load_record_dir(args.record)
    fm, hit = cache_features(rec, args.set, cfg.features, args.cache)
    dataio.export_features(fm, args.out)
    print(f"{rec.subject_id}: {len(fm)} rows, {int(fm.valid.sum())} valid{' (cached)' if hit else ''}")
    return 0


def _cmd_pd(args: argparse.Namespace) -> int:
    cfg = load_config(args.config).features
    rec = dataio.load_record_dir(args.record)
    windows = {w.epoch_index: w for w in build_windows(rec.airflow, rec.stages, cfg)}
    if args.epoch not in windows:
        raise SystemExit(f"error: epoch {args.epoch} has no window (valid range {min(windows)}..{max(windows)})")
    w = windows[args.epoch]
    if args.kind == "sub-air":
        dgms = [sublevel_pd0(butter_bandpass(w.airflow_window, *RESP_BAND_HZ, 3))]
    elif args.kind == "sub-irr":
        dgms = [sublevel_pd0(w.irr_window)]
    elif args.kind == "rips-air":
        dgms = rips_pd(rips_cloud(butter_bandpass(w.airflow_window, *RESP_BAND_HZ, 3), cfg))
    else:
        dgms = rips_pd(rips_cloud(w.irr_window, cfg))
    dataio.export_pd(dgms, args.out)
    print(f"wrote {sum(len(d) for d in dgms)} points to {args.out}")
    return 0


def _cmd_train(args: argparse.Namespace) -> int:
    cfg = load_config(args.config)
    fm = FeatureMatrix.concat([dataio.load_features(p) for p in args.features])
    if args.set:
        fm = fm.select(feature_names(args.set, cfg.features))
    fm = fm.take(np.flatnonzero(fm.valid))
    if cfg.sqi_threshold is not None:
        fm = filter_low_quality(fm, cfg.sqi_threshold)
    model = fit(fm, cfg=cfg.boost)
    save_model(model, args.out)
    print(f"trained on {len(fm)} rows, {len(fm.names)} features -> {args.out}")
    return 0


def _cmd_losocv(args: argparse.Namespace) -> int:
    cfg = load_config(args.config)
    if args.no_sqi_filter:
        cfg = replace(cfg, sqi_threshold=None)
    sets = args.set or ["all"]
    report = run_losocv_experiment(
        args.data, sets, cfg, args.out, cache_dir=args.cache, n_jobs=args.jobs,
        save_models=args.save_models,
    )
    for name, res in report.results.items():
        m = res.summary()["mean"]
        print(
            f"{name}: folds={len(res.folds)} accuracy={m['accuracy']:.4f} "
            f"balanced={m['balanced_accuracy']:.4f} kappa={m['kappa']:.4f}"
        )
    for name, w in report.comparisons.items():
        print(f"wilcoxon kappa {name}: p={w.p_value:.4g} ({w.method}, n={w.n})")
    return 0


def _cmd_importance(args: argparse.Namespace) -> int:
    paths = sorted(Path(args.models).glob("*.model"))
    if not paths:
        raise SystemExit(f"error: no *.model files in {args.models}")
    ranked = aggregate_importance([load_model(p) for p in paths])
    write_importance(ranked, args.out)
    for name, g in ranked[: args.top]:
        print(f"{g:.4f}  {name}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="breathtda", description=__doc__)
    ap.add_argument("--version", action="version", version=__version__)
    ap.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="write a synthetic cohort")
    p.add_argument("--subjects", type=int, default=8)
    p.add_argument("--epochs", type=int, default=240)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--rate", type=float, default=100.0, help="sampling rate in Hz")
    p.add_argument("--artifacts", action="store_true", help="inject wake sensor-displacement episodes")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("featurize", help="feature matrix of one record")
    p.add_argument("--record", required=True)
    p.add_argument("--set", choices=SET_CHOICES, default="all")
    p.add_argument("--config")
    p.add_argument("--cache", help="feature cache directory")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_featurize)

    p = sub.add_parser("pd", help="persistence diagram of one window")
    p.add_argument("--record", required=True)
    p.add_argument("--epoch", type=int, required=True, help="window index i (the window ends at epoch i)")
    p.add_argument("--kind", choices=PD_KINDS, required=True)
    p.add_argument("--config")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_pd)

    p = sub.add_parser("train", help="fit one model on feature files")
    p.add_argument("--features", nargs="+", required=True)
    p.add_argument("--set", choices=SET_CHOICES, help="restrict to a feature set")
    p.add_argument("--config")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("losocv", help="leave-one-subject-out experiment")
    p.add_argument("--data", required=True)
    p.add_argument("--set", choices=SET_CHOICES, action="append", help="repeatable")
    p.add_argument("--config")
    p.add_argument("--cache", help="feature cache directory")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--save-models", action="store_true")
    p.add_argument("--no-sqi-filter", action="store_true")
    p.add_argument("--out", required=True, help="report directory")
    p.set_defaults(func=_cmd_losocv)

    p = sub.add_parser("importance", help="aggregate gain importance over saved models")
    p.add_argument("--models", required=True)
    p.add_argument("--top", type=int, default=10)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_importance)
    return ap


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (ConfigError, PipelineError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
