"""End-to-end experiment runner with a content-addressed feature cache."""

from __future__ import annotations

import hashlib
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import __version__
from .config import RunConfig, format_config
from .dataio import ParseError, SubjectRecord, export_features, list_record_dirs, load_features, load_record_dir
from .eval import (
    LosocvResult,
    WilcoxonResult,
    aggregate_importance,
    losocv,
    wilcoxon_signed_rank,
    write_confusion_report,
    write_importance,
    write_metrics_report,
)
from .features import FeatureConfig, FeatureMatrix, feature_names, featurize_record, normalize_set
from .learner import save_model

log = logging.getLogger(__name__)


class PipelineError(RuntimeError):
    pass


def sha256_file(path: str | Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def record_digest(rec: SubjectRecord) -> str:
    h = hashlib.sha256()
    h.update(rec.subject_id.encode())
    h.update(np.float64(rec.airflow.rate_hz).tobytes())
    h.update(np.ascontiguousarray(rec.airflow.samples, dtype="<f8").tobytes())
    h.update("\n".join(rec.stages).encode())
    return h.hexdigest()


def feature_config_digest(cfg: FeatureConfig) -> str:
    text = ";".join(f"{k}={v!r}" for k, v in sorted(asdict(cfg).items()))
    return hashlib.sha256(f"{__version__};{text}".encode()).hexdigest()


def cache_key(rec: SubjectRecord, feature_set: str, cfg: FeatureConfig) -> str:
    parts = (record_digest(rec), normalize_set(feature_set), feature_config_digest(cfg))
    return hashlib.sha256("|".join(parts).encode()).hexdigest()


def cache_features(
    rec: SubjectRecord,
    feature_set: str = "all",
    cfg: FeatureConfig | None = None,
    cache_dir: str | Path | None = None,
) -> tuple[FeatureMatrix, bool]:
    """Featurize ``rec``, reusing a cached matrix when its key and checksum match.

    Returns the matrix and whether it came from the cache.  A damaged entry
    is recomputed (with a warning) and rewritten.
    """
    cfg = cfg or FeatureConfig()
    if cache_dir is None:
        return featurize_record(rec.subject_id, rec.airflow, rec.stages, feature_set, cfg), False
    cache_dir = Path(cache_dir)
    key = cache_key(rec, feature_set, cfg)
    path = cache_dir / f"{rec.subject_id}-{key[:24]}.csv"
    check = path.with_suffix(".sha256")
    if path.exists():
        try:
            if not check.exists() or check.read_text().strip() != sha256_file(path):
                raise ParseError(f"{path}: checksum mismatch")
            fm = load_features(path)
            if fm.names != feature_names(feature_set, cfg):
                raise ParseError(f"{path}: feature schema mismatch")
            return fm, True
        except (ParseError, ValueError) as exc:
            log.warning("corrupt cache entry, recomputing: %s", exc)
    fm = featurize_record(rec.subject_id, rec.airflow, rec.stages, feature_set, cfg)
    cache_dir.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(".tmp")
    export_features(fm, tmp)
    digest = sha256_file(tmp)
    tmp.replace(path)
    check.write_text(digest + "\n")
    return fm, False


def _featurize_job(rec_dir: Path, cfg: FeatureConfig, cache_dir: Path | None):
    rec = load_record_dir(rec_dir)
    fm, hit = cache_features(rec, "all", cfg, cache_dir)
    return rec.subject_id, fm, hit


@dataclass
class ExperimentReport:
    results: dict[str, LosocvResult]
    comparisons: dict[str, WilcoxonResult]
    manifest: dict[str, str]
    excluded: list[str] = field(default_factory=list)
    features: FeatureMatrix | None = None


def featurize_cohort(
    data_dir: str | Path,
    cfg: FeatureConfig,
    cache_dir: str | Path | None = None,
    n_jobs: int = 1,
) -> tuple[FeatureMatrix, dict[str, str], list[str], int]:
    """Full feature matrix of every record under ``data_dir``.

    Returns the matrix, input file digests, subjects excluded by errors and
    the number of cache hits.
    """
    dirs = list_record_dirs(data_dir)
    if len(dirs) < 2:
        raise PipelineError(f"{data_dir}: need at least two subject records, found {len(dirs)}")
    digests = {}
    for d in dirs:
        for f in sorted(d.iterdir()):
            if f.is_file():
                digests[f"input.{d.name}/{f.name}"] = sha256_file(f)
    cache = Path(cache_dir) if cache_dir is not None else None
    parts, excluded, hits = [], [], 0
    if n_jobs > 1:
        with ProcessPoolExecutor(max_workers=n_jobs) as pool:
            futures = [pool.submit(_featurize_job, d, cfg, cache) for d in dirs]
            outcomes = []
            for d, fut in zip(dirs, futures):
                try:
                    outcomes.append(fut.result())
                except Exception as exc:  # noqa: BLE001 - isolate per-subject failures
                    log.error("featurization of %s failed: %s", d.name, exc)
                    excluded.append(d.name)
    else:
        outcomes = []
        for d in dirs:
            try:
                outcomes.append(_featurize_job(d, cfg, cache))
            except Exception as exc:  # noqa: BLE001
                log.error("featurization of %s failed: %s", d.name, exc)
                excluded.append(d.name)
    for _, fm, hit in outcomes:
        parts.append(fm)
        hits += int(hit)
    if len(parts) < 2:
        raise PipelineError("fewer than two subjects featurized successfully")
    return FeatureMatrix.concat(parts), digests, excluded, hits


def run_losocv_experiment(
    data_dir: str | Path,
    feature_sets: Sequence[str],
    cfg: RunConfig | None = None,
    out_dir: str | Path | None = None,
    *,
    cache_dir: str | Path | None = None,
    n_jobs: int = 1,
    save_models: bool = False,
) -> ExperimentReport:
    """Featurize, cross-validate each feature set and write reports.

    Every set is a column subset of the full matrix, so featurization runs
    once.  With ``all`` and ``cla`` (or ``tda``) both requested, a one-sided
    Wilcoxon test on per-subject kappa compares ``all`` against each.
    """
    cfg = cfg or RunConfig()
    sets = [normalize_set(s) for s in feature_sets]
    if not sets:
        raise PipelineError("no feature set requested")
    manifest: dict[str, str] = {
        "version": __version__,
        "config_sha256": cfg.digest(),
        "feature_sets": ",".join(sets),
    }
    t0 = time.perf_counter()
    full, digests, excluded, hits = featurize_cohort(data_dir, cfg.features, cache_dir, n_jobs)
    manifest["time.featurize_s"] = f"{time.perf_counter() - t0:.3f}"
    manifest["cache_hits"] = str(hits)
    manifest["excluded_subjects"] = ",".join(excluded)
    manifest["rows_total"] = str(len(full))
    manifest["rows_valid"] = str(int(full.valid.sum()))
    manifest.update(digests)

    results: dict[str, LosocvResult] = {}
    for s in sets:
        t1 = time.perf_counter()
        data = full.select(feature_names(s, cfg.features))
        try:
            results[s] = losocv(data, cfg.boost, sqi_threshold=cfg.sqi_threshold, n_jobs=n_jobs)
        except ValueError as exc:
            raise PipelineError(f"losocv for set {s!r}: {exc}") from exc
        manifest[f"time.losocv_{s}_s"] = f"{time.perf_counter() - t1:.3f}"
        manifest[f"skipped_folds.{s}"] = ",".join(results[s].skipped)

    comparisons: dict[str, WilcoxonResult] = {}
    if "all" in results:
        for other in ("cla", "tda"):
            if other not in results:
                continue
            try:
                comparisons[f"all>{other}"] = _compare(results["all"], results[other])
            except ValueError as exc:
                log.warning("Wilcoxon all>%s skipped: %s", other, exc)

    report = ExperimentReport(results, comparisons, manifest, excluded, full)
    if out_dir is not None:
        write_experiment(report, cfg, out_dir, save_models)
    return report


def _compare(a: LosocvResult, b: LosocvResult) -> WilcoxonResult:
    ka = {f.subject_id: f.kappa for f in a.folds}
    kb = {f.subject_id: f.kappa for f in b.folds}
    common = sorted(set(ka) & set(kb))
    return wilcoxon_signed_rank([ka[s] for s in common], [kb[s] for s in common])


def write_experiment(report: ExperimentReport, cfg: RunConfig, out_dir: str | Path, save_models: bool = False) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written: list[Path] = []
    (out / "config.txt").write_text(format_config(cfg))
    written.append(out / "config.txt")
    for s, res in report.results.items():
        paths = (out / f"metrics_{s}.csv", out / f"confusion_{s}.csv", out / f"importance_{s}.csv")
        write_metrics_report(res.folds, paths[0])
        write_confusion_report(res.folds, paths[1])
        write_importance(aggregate_importance(res.models), paths[2])
        written += paths
        if save_models:
            mdir = out / f"models_{s}"
            mdir.mkdir(exist_ok=True)
            for fold, model in zip(res.folds, res.models):
                save_model(model, mdir / f"{fold.subject_id}.model")
    if report.comparisons:
        lines = ["comparison,metric,statistic,n,method,p_value"]
        for name, w in report.comparisons.items():
            lines.append(f"{name},kappa,{w.statistic!r},{w.n},{w.method},{w.p_value!r}")
        (out / "comparisons.csv").write_text("\n".join(lines) + "\n")
        written.append(out / "comparisons.csv")
    for p in written:
        report.manifest[f"output.{p.name}"] = sha256_file(p)
    lines = [f"{k}={v}" for k, v in report.manifest.items()]
    (out / "manifest.txt").write_text("\n".join(lines) + "\n")
