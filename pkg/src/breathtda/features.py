"""Per-epoch feature vectors from 180-s analysis windows.

Every epoch ``i >= 6`` (1-based) is described by the airflow and IRR over
epochs ``i-5..i``.  Two blocks are produced:

``tda``
    78 topological summaries: PS / HEPC of sublevel and Rips diagrams of
    the band-passed airflow and of the IRR.
``cla``
    15 classical breathing-variability features plus the window SQI.

``all`` is ``cla`` followed by ``tda``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Literal, Sequence

import numpy as np
from numba import njit
from numpy.typing import NDArray

from .persistence import maxmin_subsample, rips_pd, sublevel_pd0, takens_embed
from .respiration import (
    IRR_RATE_HZ,
    RESP_BAND_HZ,
    BreathCycles,
    InsufficientBreathsError,
    build_irr,
    detect_breath_cycles,
)
from .respiration import sqi as signal_quality
from .signal import SignalError, TimeSeries, butter_bandpass, power_spectrum
from .vectorize import HEPC_NAMES, PS_NAMES, finitize, hepc, persistence_stats

log = logging.getLogger(__name__)

EPOCH_S = 30.0
WINDOW_EPOCHS = 6
STAGES = ("Wake", "REM", "NREM")
STAGE_MAP = {
    "W": "Wake", "R": "REM", "N1": "NREM", "N2": "NREM", "N3": "NREM",
    "Wake": "Wake", "REM": "REM", "NREM": "NREM",
}
FeatureSet = Literal["tda", "cla", "all"]
FEATURE_SETS = ("tda", "cla", "all")

CLASSIC_NAMES = (
    "bi_mean", "bi_std", "bi_skew", "bi_kurt",
    "irr_mean", "irr_std", "irr_min", "irr_max", "irr_range",
    "spec_peak_hz", "spec_peak_frac",
    "band_0.1_0.2", "band_0.2_0.4", "band_0.4_0.75",
    "irr_sampen",
    "sqi",
)


class FeatureError(ValueError):
    pass


@dataclass(frozen=True)
class FeatureConfig:
    """Featurization parameters; every field enters the feature cache key."""

    takens_dim: int = 3
    delay_s: float = 1.0
    n_perm: int = 125
    rips_h1_source: Literal["irr", "airflow"] = "irr"
    epy_m_literal: bool = False
    sigma: float = 1.0
    min_cycle_s: float = 1.0
    amp_frac: float = 0.1

    def __post_init__(self) -> None:
        if self.rips_h1_source not in ("irr", "airflow"):
            raise FeatureError(f"rips_h1_source must be irr or airflow, got {self.rips_h1_source!r}")


def map_stage(label: str) -> str:
    try:
        return STAGE_MAP[label]
    except KeyError:
        raise FeatureError(f"unknown stage label {label!r}") from None


def normalize_set(name: str) -> FeatureSet:
    name = {"ntda": "cla"}.get(name, name)
    if name not in FEATURE_SETS:
        raise FeatureError(f"unknown feature set {name!r}")
    return name  # type: ignore[return-value]


@dataclass(frozen=True)
class EpochWindow:
    """The 180-s context of epoch ``epoch_index`` (1-based, >= 6)."""

    epoch_index: int
    airflow_window: TimeSeries
    irr_window: TimeSeries
    sqi: float
    stage: str = "Unknown"
    onsets_s: NDArray[np.float64] = field(default_factory=lambda: np.empty(0))

    @property
    def n_breaths(self) -> int:
        return int(np.asarray(self.onsets_s).size)

    @property
    def valid(self) -> bool:
        return self.n_breaths >= 3


@dataclass(frozen=True)
class FeatureVector:
    values: NDArray[np.float64]
    names: tuple[str, ...]
    valid: bool = True

    def __post_init__(self) -> None:
        if len(set(self.names)) != len(self.names):
            raise FeatureError("duplicate feature names")
        if len(self.names) != np.asarray(self.values).size:
            raise FeatureError("feature names and values differ in length")


def _tda_names(cfg: FeatureConfig) -> tuple[str, ...]:
    h1 = "irr" if cfg.rips_h1_source == "irr" else "air"
    blocks = (
        ("ps_sub_irr", PS_NAMES),
        ("hepc_sub_irr", HEPC_NAMES),
        ("hepc_rips0_air", HEPC_NAMES),
        (f"ps_rips1_{h1}", PS_NAMES),
        ("ps_sub_air", PS_NAMES),
        ("hepc_sub_air", HEPC_NAMES),
    )
    return tuple(f"{prefix}.{name}" for prefix, names in blocks for name in names)


def feature_names(feature_set: str, cfg: FeatureConfig | None = None) -> tuple[str, ...]:
    cfg = cfg or FeatureConfig()
    feature_set = normalize_set(feature_set)
    if feature_set == "tda":
        return _tda_names(cfg)
    if feature_set == "cla":
        return CLASSIC_NAMES
    return CLASSIC_NAMES + _tda_names(cfg)


def build_windows(
    airflow: TimeSeries, stages: Sequence[str], cfg: FeatureConfig | None = None
) -> list[EpochWindow]:
    """One window per epoch ``6..len(stages)``.

    Breath detection and the IRR run once over the whole record and are then
    sliced.  A record without detectable breathing still yields windows; they
    carry no onsets and are therefore invalid.
    """
    cfg = cfg or FeatureConfig()
    n_epochs = len(stages)
    expected = int(airflow.duration_s // EPOCH_S)
    if n_epochs != expected:
        raise FeatureError(f"{n_epochs} stage labels for {expected} complete epochs")
    if n_epochs < WINDOW_EPOCHS:
        raise FeatureError(f"record has {n_epochs} epochs; at least {WINDOW_EPOCHS} needed")
    labels = [map_stage(s) if s != "Unknown" else s for s in stages]

    rec = airflow.slice_seconds(0.0, n_epochs * EPOCH_S)
    try:
        cycles = detect_breath_cycles(rec, min_cycle_s=cfg.min_cycle_s, amp_frac=cfg.amp_frac)
        onsets = cycles.onsets_s - rec.start_time_s
        irr = build_irr(BreathCycles(onsets), n_epochs * EPOCH_S)
    except InsufficientBreathsError:
        log.warning("no usable breathing detected in record")
        onsets = np.empty(0)
        irr = TimeSeries(np.zeros(int(n_epochs * EPOCH_S * IRR_RATE_HZ)), IRR_RATE_HZ)

    windows = []
    for i in range(WINDOW_EPOCHS, n_epochs + 1):
        start = (i - WINDOW_EPOCHS) * EPOCH_S
        stop = i * EPOCH_S
        air = rec.slice_seconds(start, stop)
        irr_w = irr.slice_seconds(start, stop)
        inside = onsets[(onsets >= start) & (onsets < stop)]
        windows.append(
            EpochWindow(
                epoch_index=i,
                airflow_window=air,
                irr_window=irr_w,
                sqi=signal_quality(air),
                stage=labels[i - 1],
                onsets_s=inside,
            )
        )
    return windows


def _invalid(names: tuple[str, ...]) -> FeatureVector:
    return FeatureVector(np.full(len(names), np.nan), names, valid=False)


def rips_cloud(x: TimeSeries, cfg: FeatureConfig):
    tau = max(1, int(round(cfg.delay_s * x.rate_hz)))
    cloud = takens_embed(x, cfg.takens_dim, tau)
    return maxmin_subsample(cloud, cfg.n_perm, 0)


def tda_features(w: EpochWindow, cfg: FeatureConfig | None = None) -> FeatureVector:
    """78 topological features of one window (see module docstring)."""
    cfg = cfg or FeatureConfig()
    names = _tda_names(cfg)
    if not w.valid:
        return _invalid(names)
    air = butter_bandpass(w.airflow_window, *RESP_BAND_HZ, 3)
    irr = w.irr_window

    sub_irr = finitize(sublevel_pd0(irr), float(irr.samples.max()))
    sub_air = finitize(sublevel_pd0(air), float(air.samples.max()))

    air_dgms = rips_pd(rips_cloud(air, cfg), max_dim=1 if cfg.rips_h1_source == "airflow" else 0)
    rips0_air = finitize(air_dgms[0], air_dgms[0].meta["enclosing_radius"])
    if cfg.rips_h1_source == "airflow":
        rips1 = air_dgms[1]
    else:
        rips1 = rips_pd(rips_cloud(irr, cfg), max_dim=1)[1]

    ps = lambda d: persistence_stats(d, sigma=cfg.sigma, epy_m_literal=cfg.epy_m_literal).values
    values = np.concatenate(
        [
            ps(sub_irr),
            hepc(sub_irr).values,
            hepc(rips0_air).values,
            ps(rips1),
            ps(sub_air),
            hepc(sub_air).values,
        ]
    )
    return FeatureVector(values, names)


def _pop_moments(v: NDArray[np.float64]) -> list[float]:
    mean = float(v.mean())
    c = v - mean
    m2 = float(np.mean(c * c))
    if m2 <= 0.0:
        return [mean, 0.0, 0.0, 0.0]
    return [mean, m2**0.5, float(np.mean(c**3)) / m2**1.5, float(np.mean(c**4)) / m2**2]


@njit(cache=True)
def _template_matches(x, m, r, count):
    # pairs (i < j) of length-m templates within Chebyshev distance r
    total = 0
    for i in range(count):
        for j in range(i + 1, count):
            ok = True
            for q in range(m):
                if abs(x[i + q] - x[j + q]) > r:
                    ok = False
                    break
            if ok:
                total += 1
    return total


def sample_entropy(x: NDArray[np.float64], m: int = 2, r_frac: float = 0.2) -> float:
    """Sample entropy with tolerance ``r_frac * std(x)`` (Chebyshev distance)."""
    x = np.ascontiguousarray(x, dtype=np.float64)
    n = x.size
    if n <= m + 1:
        return 0.0
    r = r_frac * float(x.std())
    count = n - m
    b = _template_matches(x, m, r, count)
    a = _template_matches(x, m + 1, r, count)
    if a == 0 or b == 0:
        # no matches: report the largest finite value attainable for this length
        return float(np.log((count - 1) * count / 2.0))
    return float(-np.log(a / b))


def classic_features(w: EpochWindow, cfg: FeatureConfig | None = None) -> FeatureVector:
    """Documented classical subset: breath intervals, IRR level and spread,
    band-limited spectral shape, IRR sample entropy and the window SQI."""
    names = CLASSIC_NAMES
    if not w.valid:
        return _invalid(names)
    intervals = np.diff(np.asarray(w.onsets_s))
    irr = w.irr_window.samples

    air = butter_bandpass(w.airflow_window, *RESP_BAND_HZ, 3)
    spec = power_spectrum(air)
    freqs, power = spec.freqs, spec.power
    lo, hi = RESP_BAND_HZ
    band = (freqs >= lo) & (freqs <= hi)
    band_power = float(power[band].sum())
    if band_power > 0.0:
        peak = int(np.flatnonzero(band)[np.argmax(power[band])])
        peak_hz = float(freqs[peak])
        peak_frac = float(power[peak]) / band_power
        edges = ((0.1, 0.2), (0.2, 0.4), (0.4, hi))
        ratios = []
        for k, (a, b) in enumerate(edges):
            sel = (freqs >= a) & ((freqs <= b) if k == len(edges) - 1 else (freqs < b))
            ratios.append(float(power[sel].sum()) / band_power)
    else:
        peak_hz, peak_frac, ratios = 0.0, 0.0, [0.0, 0.0, 0.0]

    values = [
        *_pop_moments(intervals),
        float(irr.mean()), float(irr.std()), float(irr.min()), float(irr.max()),
        float(irr.max() - irr.min()),
        peak_hz, peak_frac, *ratios,
        sample_entropy(irr),
        float(w.sqi),
    ]
    return FeatureVector(np.asarray(values), names)


def window_features(w: EpochWindow, feature_set: str, cfg: FeatureConfig | None = None) -> FeatureVector:
    cfg = cfg or FeatureConfig()
    feature_set = normalize_set(feature_set)
    if feature_set == "tda":
        return tda_features(w, cfg)
    if feature_set == "cla":
        return classic_features(w, cfg)
    cla = classic_features(w, cfg)
    tda = tda_features(w, cfg)
    return FeatureVector(
        np.concatenate([cla.values, tda.values]), cla.names + tda.names, cla.valid and tda.valid
    )


@dataclass
class FeatureMatrix:
    """Feature rows of one or more subjects.

    Rows with ``valid == False`` carry NaN values and are never used for
    training or scoring.
    """

    names: tuple[str, ...]
    values: NDArray[np.float64]
    subject_ids: NDArray[np.str_]
    epoch_index: NDArray[np.int64]
    stages: NDArray[np.str_]
    sqi: NDArray[np.float64]

    def __post_init__(self) -> None:
        self.values = np.asarray(self.values, dtype=np.float64).reshape(-1, len(self.names))
        n = self.values.shape[0]
        self.subject_ids = np.asarray(self.subject_ids, dtype=str).reshape(n)
        self.epoch_index = np.asarray(self.epoch_index, dtype=np.int64).reshape(n)
        self.stages = np.asarray(self.stages, dtype=str).reshape(n)
        self.sqi = np.asarray(self.sqi, dtype=np.float64).reshape(n)

    def __len__(self) -> int:
        return self.values.shape[0]

    @property
    def valid(self) -> NDArray[np.bool_]:
        return np.all(np.isfinite(self.values), axis=1)

    def take(self, rows: NDArray) -> "FeatureMatrix":
        return FeatureMatrix(
            self.names, self.values[rows], self.subject_ids[rows],
            self.epoch_index[rows], self.stages[rows], self.sqi[rows],
        )

    def select(self, names: Sequence[str]) -> "FeatureMatrix":
        """Column subset, in the given order."""
        pos = {n: k for k, n in enumerate(self.names)}
        try:
            cols = [pos[n] for n in names]
        except KeyError as exc:
            raise FeatureError(f"feature {exc.args[0]!r} not in matrix") from None
        return FeatureMatrix(
            tuple(names), self.values[:, cols], self.subject_ids,
            self.epoch_index, self.stages, self.sqi,
        )

    @classmethod
    def concat(cls, parts: Sequence["FeatureMatrix"]) -> "FeatureMatrix":
        if not parts:
            raise FeatureError("nothing to concatenate")
        names = parts[0].names
        if any(p.names != names for p in parts):
            raise FeatureError("feature schemas differ")
        return cls(
            names,
            np.vstack([p.values for p in parts]),
            np.concatenate([p.subject_ids for p in parts]),
            np.concatenate([p.epoch_index for p in parts]),
            np.concatenate([p.stages for p in parts]),
            np.concatenate([p.sqi for p in parts]),
        )


def featurize_record(
    subject_id: str,
    airflow: TimeSeries,
    stages: Sequence[str],
    feature_set: str = "all",
    cfg: FeatureConfig | None = None,
) -> FeatureMatrix:
    cfg = cfg or FeatureConfig()
    names = feature_names(feature_set, cfg)
    windows = build_windows(airflow, stages, cfg)
    rows = []
    for w in windows:
        try:
            rows.append(window_features(w, feature_set, cfg).values)
        except (SignalError, ValueError) as exc:
            log.warning("subject %s epoch %d: %s", subject_id, w.epoch_index, exc)
            rows.append(np.full(len(names), np.nan))
    return FeatureMatrix(
        names,
        np.vstack(rows) if rows else np.empty((0, len(names))),
        [subject_id] * len(windows),
        [w.epoch_index for w in windows],
        [w.stage for w in windows],
        [w.sqi for w in windows],
    )
