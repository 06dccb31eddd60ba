"""Leave-one-subject-out evaluation, agreement metrics and the Wilcoxon test."""

from __future__ import annotations

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy.special import ndtr

from .features import STAGES, FeatureMatrix
from .learner import (
    BoostConfig,
    BoostedModel,
    EmptyTrainingSetError,
    encode_labels,
    feature_importance,
    filter_low_quality,
    fit,
    predict,
)

log = logging.getLogger(__name__)

METRIC_COLUMNS = (
    "accuracy",
    "balanced_accuracy",
    "kappa",
    *(f"sens_{s}" for s in STAGES),
)
EXACT_MAX_N = 12


class EvalError(ValueError):
    pass


@dataclass(frozen=True)
class Metrics:
    sensitivity: NDArray[np.float64]  # NaN for a class absent from the truth
    accuracy: float
    balanced_accuracy: float
    kappa: float

    def row(self) -> list[float]:
        return [self.accuracy, self.balanced_accuracy, self.kappa, *self.sensitivity.tolist()]


@dataclass(frozen=True)
class FoldResult:
    subject_id: str
    n_test: int
    n_train: int
    confusion: NDArray[np.float64]
    metrics: Metrics

    @property
    def kappa(self) -> float:
        return self.metrics.kappa

    @property
    def balanced_accuracy(self) -> float:
        return self.metrics.balanced_accuracy

    @property
    def accuracy(self) -> float:
        return self.metrics.accuracy


# ---------------------------------------------------------------------- metrics


def confusion_matrix(y_true: ArrayLike, y_pred: ArrayLike) -> NDArray[np.float64]:
    """3x3 counts, rows true and columns predicted, in Wake/REM/NREM order."""
    t = encode_labels(y_true)
    p = encode_labels(y_pred)
    if t.size != p.size:
        raise EvalError("truth and prediction lengths differ")
    cm = np.zeros((len(STAGES), len(STAGES)))
    np.add.at(cm, (t, p), 1.0)
    return cm


def metrics(cm: ArrayLike) -> Metrics:
    """Sensitivities, accuracy, balanced accuracy and Cohen's kappa.

    Balanced accuracy averages the sensitivities of classes that occur in
    the truth; absent classes still enter the kappa marginals.
    """
    cm = np.asarray(cm, dtype=np.float64)
    if cm.shape != (len(STAGES), len(STAGES)) or np.any(cm < 0):
        raise EvalError("confusion matrix must be 3x3 and non-negative")
    total = cm.sum()
    if total <= 0:
        raise EvalError("confusion matrix is empty")
    rows = cm.sum(axis=1)
    cols = cm.sum(axis=0)
    present = rows > 0
    sens = np.full(len(STAGES), np.nan)
    sens[present] = np.diag(cm)[present] / rows[present]
    p_o = np.trace(cm) / total
    p_e = float(rows @ cols) / (total * total)
    kappa = 0.0 if math.isclose(p_e, 1.0, rel_tol=0.0, abs_tol=1e-15) else (p_o - p_e) / (1.0 - p_e)
    return Metrics(sens, float(p_o), float(np.mean(sens[present])), float(kappa))


# ---------------------------------------------------------------------- Wilcoxon


@dataclass(frozen=True)
class WilcoxonResult:
    statistic: float  # sum of ranks of positive differences
    p_value: float
    n: int  # non-zero differences
    method: str  # "exact", "normal" or "degenerate"

    @property
    def degenerate(self) -> bool:
        return self.method == "degenerate"


def _midranks(v: NDArray[np.float64]) -> NDArray[np.float64]:
    order = np.argsort(v, kind="stable")
    sv = v[order]
    ranks = np.empty(v.size)
    start = 0
    while start < v.size:
        stop = start
        while stop + 1 < v.size and sv[stop + 1] == sv[start]:
            stop += 1
        ranks[order[start : stop + 1]] = 0.5 * (start + stop) + 1.0
        start = stop + 1
    return ranks


def _exact_upper_tail(doubled: NDArray[np.int64], observed: int) -> float:
    """P(sum of randomly signed doubled ranks counted as positive >= observed)."""
    total = int(doubled.sum())
    counts = np.zeros(total + 1)
    counts[0] = 1.0
    for r in doubled:
        shifted = np.zeros_like(counts)
        shifted[r:] = counts[: total + 1 - r]
        counts = counts + shifted
    return float(counts[observed:].sum() / 2.0 ** doubled.size)


def wilcoxon_signed_rank(a: ArrayLike, b: ArrayLike) -> WilcoxonResult:
    """One-sided signed-rank test of the alternative "a > b".

    Zero differences are dropped; tied magnitudes share midranks.  The null
    distribution is enumerated exactly for up to 12 differences, otherwise a
    tie-corrected normal approximation is used.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise EvalError("paired samples must be 1-D with equal length")
    if a.size < 5:
        raise EvalError("the signed-rank test needs at least 5 pairs")
    d = a - b
    d = d[d != 0.0]
    n = d.size
    if n == 0:
        return WilcoxonResult(0.0, 1.0, 0, "degenerate")
    ranks = _midranks(np.abs(d))
    w_plus = float(ranks[d > 0].sum())
    if n <= EXACT_MAX_N:
        doubled = np.rint(2.0 * ranks).astype(np.int64)
        p = _exact_upper_tail(doubled, int(round(2.0 * w_plus)))
        return WilcoxonResult(w_plus, min(1.0, p), n, "exact")
    mean = n * (n + 1) / 4.0
    _, tie_counts = np.unique(np.abs(d), return_counts=True)
    var = n * (n + 1) * (2 * n + 1) / 24.0 - float(np.sum(tie_counts**3 - tie_counts)) / 48.0
    z = (w_plus - mean) / math.sqrt(var)
    return WilcoxonResult(w_plus, float(ndtr(-z)), n, "normal")


# ---------------------------------------------------------------------- LOSOCV


@dataclass
class LosocvResult:
    folds: list[FoldResult]
    models: list[BoostedModel] = field(default_factory=list)
    skipped: list[str] = field(default_factory=list)

    def summary(self) -> dict[str, dict[str, float]]:
        return summarize(self.folds)

    def mean_confusion(self) -> NDArray[np.float64]:
        return np.mean([f.confusion for f in self.folds], axis=0)


def _run_fold(
    data: FeatureMatrix, subject: str, cfg: BoostConfig, sqi_threshold: float | None
) -> tuple[FoldResult | None, BoostedModel | None]:
    held = data.subject_ids == subject
    test = data.take(np.flatnonzero(held))
    train = data.take(np.flatnonzero(~held))
    if len(test) == 0:
        return None, None
    if set(train.subject_ids) & set(test.subject_ids):
        raise EvalError("held-out subject leaked into training rows")
    if sqi_threshold is not None:
        train = filter_low_quality(train, sqi_threshold)
    model = fit(train, cfg=cfg)
    labels, _ = predict(model, test)
    cm = confusion_matrix(test.stages, labels)
    fold = FoldResult(subject, len(test), len(train), cm, metrics(cm))
    return fold, model


def losocv(
    data: FeatureMatrix,
    cfg: BoostConfig | None = None,
    *,
    sqi_threshold: float | None = 0.25,
    n_jobs: int = 1,
) -> LosocvResult:
    """Leave-one-subject-out cross-validation.

    Invalid rows are dropped everywhere; the SQI filter (``None`` disables
    it) touches training rows only.  Folds run in sorted subject order and
    every fold uses the same model seed, so parallel runs match serial ones.
    """
    cfg = cfg or BoostConfig()
    subjects = sorted(set(data.subject_ids.tolist()))
    if len(subjects) < 2:
        raise EvalError("LOSOCV needs at least two subjects")
    valid = data.take(np.flatnonzero(data.valid))
    jobs = [(valid, s, cfg, sqi_threshold) for s in subjects]
    if n_jobs > 1:
        with ProcessPoolExecutor(max_workers=n_jobs) as pool:
            outcomes = list(pool.map(_run_fold, *zip(*jobs)))
    else:
        outcomes = [_run_fold(*job) for job in jobs]
    result = LosocvResult([])
    for subject, (fold, model) in zip(subjects, outcomes):
        if fold is None:
            log.warning("subject %s has no valid test rows; fold skipped", subject)
            result.skipped.append(subject)
            continue
        result.folds.append(fold)
        result.models.append(model)
    if not result.folds:
        raise EmptyTrainingSetError("every fold was skipped")
    return result


def summarize(folds: Sequence[FoldResult]) -> dict[str, dict[str, float]]:
    """Mean, population std and sample std of every metric over folds.

    NaN sensitivities (class absent in a fold) are ignored per column.
    """
    table = np.array([f.metrics.row() for f in folds], dtype=np.float64)
    out: dict[str, dict[str, float]] = {"mean": {}, "std_pop": {}, "std_sample": {}}
    for k, name in enumerate(METRIC_COLUMNS):
        col = table[:, k]
        col = col[np.isfinite(col)]
        out["mean"][name] = float(np.mean(col)) if col.size else math.nan
        out["std_pop"][name] = float(np.std(col)) if col.size else math.nan
        out["std_sample"][name] = float(np.std(col, ddof=1)) if col.size > 1 else math.nan
    return out


def aggregate_importance(models: Sequence[BoostedModel]) -> list[tuple[str, float]]:
    """Mean of per-model normalised gains, renormalised and sorted descending."""
    if not models:
        raise EvalError("no models to aggregate")
    names: dict[str, None] = {}
    for m in models:
        names.update(dict.fromkeys(m.feature_names))
    acc = dict.fromkeys(names, 0.0)
    for m in models:
        for name, g in feature_importance(m).items():
            acc[name] += g / len(models)
    total = sum(acc.values())
    if total > 0:
        acc = {k: v / total for k, v in acc.items()}
    return sorted(acc.items(), key=lambda kv: (-kv[1], kv[0]))


# ---------------------------------------------------------------------- reports


def _num(v: float) -> str:
    return "nan" if math.isnan(v) else repr(float(v))


def write_metrics_report(folds: Sequence[FoldResult], path: str | Path) -> None:
    """Per-fold rows, one ``mean`` row, then the two std rows as comments."""
    summary = summarize(folds)
    lines = ["subject_id,n_test," + ",".join(METRIC_COLUMNS)]
    for f in folds:
        lines.append(f"{f.subject_id},{f.n_test}," + ",".join(_num(v) for v in f.metrics.row()))
    n_total = sum(f.n_test for f in folds)
    for key in ("mean", "std_pop", "std_sample"):
        prefix = "" if key == "mean" else "# "
        vals = ",".join(_num(summary[key][c]) for c in METRIC_COLUMNS)
        lines.append(f"{prefix}{key},{n_total},{vals}")
    Path(path).write_text("\n".join(lines) + "\n")


def read_metrics_report(path: str | Path) -> list[dict[str, str]]:
    lines = [ln for ln in Path(path).read_text().splitlines() if ln and not ln.startswith("#")]
    header = lines[0].split(",")
    return [dict(zip(header, ln.split(","))) for ln in lines[1:]]


def write_confusion_report(folds: Sequence[FoldResult], path: str | Path) -> None:
    """Per-fold confusion matrices followed by their element-wise mean."""
    lines = ["subject_id,true," + ",".join(STAGES)]
    blocks = [(f.subject_id, f.confusion) for f in folds]
    blocks.append(("mean", np.mean([f.confusion for f in folds], axis=0)))
    for sid, cm in blocks:
        for s, row in zip(STAGES, cm):
            lines.append(f"{sid},{s}," + ",".join(_num(v) for v in row))
    Path(path).write_text("\n".join(lines) + "\n")


def write_importance(ranked: Sequence[tuple[str, float]], path: str | Path) -> None:
    lines = ["feature,gain"] + [f"{n},{_num(g)}" for n, g in ranked]
    Path(path).write_text("\n".join(lines) + "\n")
