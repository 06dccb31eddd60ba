"""Record files, export formats and the synthetic cohort generator.

Record layout (one directory per subject)::

    <subject>/airflow.txt   rate_hz=<real>, then one sample per line
    <subject>/stages.txt    one label per line from W, R, N1, N2, N3
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from numpy.typing import NDArray

from .features import EPOCH_S, FeatureMatrix, STAGES
from .persistence import PersistenceDiagram
from .signal import TimeSeries

RAW_LABELS = ("W", "R", "N1", "N2", "N3")
AIRFLOW_FILE = "airflow.txt"
STAGES_FILE = "stages.txt"
META_COLUMNS = ("subject_id", "epoch_index", "stage", "sqi")
# per-stage episode rates for the artifact-injected cohort (`synth --artifacts`)
WAKE_ARTIFACTS = {"Wake": 0.2, "REM": 0.0, "NREM": 0.0}


class ParseError(ValueError):
    """Malformed input file; message names the file and line."""


class SchemaError(ValueError):
    """Well-formed files whose contents disagree (e.g. label count)."""


@dataclass(frozen=True)
class SubjectRecord:
    subject_id: str
    airflow: TimeSeries
    stages: tuple[str, ...]

    def __post_init__(self) -> None:
        n = int(self.airflow.duration_s // EPOCH_S)
        if len(self.stages) != n:
            raise SchemaError(
                f"{self.subject_id}: {len(self.stages)} stage labels but airflow holds {n} epochs"
            )
        if self.airflow.rate_hz < 8.0:
            raise SchemaError(f"{self.subject_id}: airflow rate {self.airflow.rate_hz} Hz below 8 Hz")


# --------------------------------------------------------------------- loading


def _parse_floats(lines: list[str], path: Path, first_line: int) -> NDArray[np.float64]:
    try:
        values = np.array(lines, dtype=np.float64)
    except ValueError:
        values = None
    if values is None or not np.all(np.isfinite(values)):
        for k, text in enumerate(lines):
            try:
                v = float(text)
            except ValueError:
                raise ParseError(f"{path}:{first_line + k}: not a number: {text!r}") from None
            if not math.isfinite(v):
                raise ParseError(f"{path}:{first_line + k}: non-finite sample {text!r}")
    return values


def load_airflow(path: str | Path) -> TimeSeries:
    path = Path(path)
    lines = path.read_text().splitlines()
    if not lines:
        raise ParseError(f"{path}:1: empty file")
    head = lines[0].strip()
    key, sep, val = head.partition("=")
    if key.strip() != "rate_hz" or not sep:
        raise ParseError(f"{path}:1: expected header 'rate_hz=<real>', got {head!r}")
    try:
        rate = float(val)
    except ValueError:
        raise ParseError(f"{path}:1: bad sampling rate {val!r}") from None
    if not rate > 0:
        raise ParseError(f"{path}:1: sampling rate must be positive")
    body = [ln.strip() for ln in lines[1:]]
    for k, text in enumerate(body):
        if not text:
            raise ParseError(f"{path}:{k + 2}: blank line")
    if not body:
        raise ParseError(f"{path}:2: no samples")
    return TimeSeries(_parse_floats(body, path, 2), rate)


def load_stages(path: str | Path) -> tuple[str, ...]:
    path = Path(path)
    labels = []
    for k, line in enumerate(path.read_text().splitlines(), start=1):
        text = line.strip()
        if text not in RAW_LABELS:
            raise ParseError(f"{path}:{k}: unknown stage label {text!r}")
        labels.append(text)
    return tuple(labels)


def load_record(airflow_path: str | Path, stages_path: str | Path, subject_id: str | None = None) -> SubjectRecord:
    airflow_path = Path(airflow_path)
    sid = subject_id or airflow_path.parent.name
    return SubjectRecord(sid, load_airflow(airflow_path), load_stages(stages_path))


def load_record_dir(path: str | Path) -> SubjectRecord:
    path = Path(path)
    return load_record(path / AIRFLOW_FILE, path / STAGES_FILE, path.name)


def list_record_dirs(data_dir: str | Path) -> list[Path]:
    data_dir = Path(data_dir)
    dirs = sorted(p for p in data_dir.iterdir() if (p / AIRFLOW_FILE).is_file())
    if not dirs:
        raise SchemaError(f"no subject records under {data_dir}")
    return dirs


def save_record(rec: SubjectRecord, out_dir: str | Path) -> Path:
    d = Path(out_dir) / rec.subject_id
    d.mkdir(parents=True, exist_ok=True)
    buf = io.StringIO()
    buf.write(f"rate_hz={rec.airflow.rate_hz!r}\n")
    np.savetxt(buf, rec.airflow.samples, fmt="%.9g")
    (d / AIRFLOW_FILE).write_text(buf.getvalue())
    (d / STAGES_FILE).write_text("".join(f"{s}\n" for s in rec.stages))
    return d


# --------------------------------------------------------------------- exports


def _fmt(v: float) -> str:
    if math.isinf(v):
        return "inf" if v > 0 else "-inf"
    if math.isnan(v):
        return "nan"
    return "%.17g" % v


def export_pd(diagrams: PersistenceDiagram | Iterable[PersistenceDiagram], path: str | Path) -> None:
    """Write ``dim,birth,death`` rows; infinite deaths as ``inf``."""
    if isinstance(diagrams, PersistenceDiagram):
        diagrams = [diagrams]
    rows = ["dim,birth,death"]
    for dg in diagrams:
        for b, d in dg.sorted_points():
            rows.append(f"{dg.dim},{_fmt(b)},{_fmt(d)}")
    Path(path).write_text("\n".join(rows) + "\n")


def load_pd(path: str | Path) -> list[PersistenceDiagram]:
    path = Path(path)
    lines = path.read_text().splitlines()
    if not lines or lines[0] != "dim,birth,death":
        raise ParseError(f"{path}:1: expected header 'dim,birth,death'")
    pts: dict[int, list[tuple[float, float]]] = {}
    for k, line in enumerate(lines[1:], start=2):
        parts = line.split(",")
        try:
            dim, b, d = int(parts[0]), float(parts[1]), float(parts[2])
        except (ValueError, IndexError):
            raise ParseError(f"{path}:{k}: malformed diagram row {line!r}") from None
        if len(parts) != 3:
            raise ParseError(f"{path}:{k}: expected 3 fields")
        pts.setdefault(dim, []).append((b, d))
    return [PersistenceDiagram(np.array(v), dim=k) for k, v in sorted(pts.items())]


def export_features(fm: FeatureMatrix, path: str | Path) -> None:
    """Header of names, then ``subject_id,epoch_index,stage,sqi,<features>`` rows."""
    out = [",".join(META_COLUMNS + fm.names)]
    for k in range(len(fm)):
        meta = [str(fm.subject_ids[k]), str(int(fm.epoch_index[k])), str(fm.stages[k]), _fmt(fm.sqi[k])]
        out.append(",".join(meta + [_fmt(v) for v in fm.values[k]]))
    Path(path).write_text("\n".join(out) + "\n")


def export_metrics(folds, path: str | Path) -> None:
    """Per-fold metric rows plus a summary row (see :func:`eval.write_metrics_report`)."""
    from .eval import write_metrics_report

    write_metrics_report(folds, path)


def load_features(path: str | Path) -> FeatureMatrix:
    path = Path(path)
    lines = path.read_text().splitlines()
    if not lines:
        raise ParseError(f"{path}:1: empty feature file")
    header = lines[0].split(",")
    if tuple(header[:4]) != META_COLUMNS:
        raise ParseError(f"{path}:1: header must start with {','.join(META_COLUMNS)}")
    names = tuple(header[4:])
    width = len(header)
    sids, epochs, stages, sqis, rows = [], [], [], [], []
    for k, line in enumerate(lines[1:], start=2):
        parts = line.split(",")
        if len(parts) != width:
            raise ParseError(f"{path}:{k}: expected {width} fields, found {len(parts)}")
        try:
            epochs.append(int(parts[1]))
            sqis.append(float(parts[3]))
            rows.append([float(v) for v in parts[4:]])
        except ValueError:
            raise ParseError(f"{path}:{k}: non-numeric field") from None
        if parts[2] not in STAGES + ("Unknown",):
            raise ParseError(f"{path}:{k}: unknown stage {parts[2]!r}")
        sids.append(parts[0])
        stages.append(parts[2])
    values = np.array(rows, dtype=np.float64).reshape(-1, len(names))
    return FeatureMatrix(names, values, sids, epochs, stages, sqis)


# --------------------------------------------------------------------- synthetic cohort


def _default_transitions() -> NDArray[np.float64]:
    # rows/cols: Wake, REM, NREM
    return np.array(
        [
            [0.92, 0.01, 0.07],
            [0.02, 0.94, 0.04],
            [0.015, 0.015, 0.97],
        ]
    )


@dataclass(frozen=True)
class StageBreathing:
    """Breathing model of one stage.

    ``rate_cpm`` is the mean rate, ``rate_jitter`` the per-breath standard
    deviation of the rate (cycles/min), ``amplitude`` and ``amp_jitter`` the
    mean and relative spread of breath amplitude, ``burst_prob`` the chance
    that an epoch carries a movement-artifact burst.
    """

    rate_cpm: float
    rate_jitter: float
    amplitude: float
    amp_jitter: float
    burst_prob: float = 0.0


def _default_breathing() -> dict[str, StageBreathing]:
    return {
        "Wake": StageBreathing(17.0, 1.2, 1.0, 0.35, burst_prob=0.3),
        "REM": StageBreathing(18.0, 2.0, 0.6, 0.25),
        "NREM": StageBreathing(14.0, 0.4, 1.0, 0.06),
    }


@dataclass(frozen=True)
class SynthConfig:
    """Parameters of the synthetic cohort.

    ``artifact_prob`` gives, per stage, the chance that an epoch is replaced
    starts an erroneous stretch of recording (sensor displacement: breathing
    attenuated towards ``artifact_attenuation`` and band-limited noise up to
    ``artifact_noise_sd`` added), used to exercise the SQI filter.
    """

    n_subjects: int = 8
    epochs_per_subject: int = 240
    seed: int = 0
    rate_hz: float = 100.0
    transitions: NDArray[np.float64] = field(default_factory=_default_transitions)
    breathing: dict[str, StageBreathing] = field(default_factory=_default_breathing)
    subject_rate_sd: float = 1.0
    subject_amp_sd: float = 0.2
    noise_sd: float = 0.05
    artifact_prob: dict[str, float] = field(
        default_factory=lambda: {"Wake": 0.0, "REM": 0.0, "NREM": 0.0}
    )
    artifact_attenuation: float = 0.3
    artifact_noise_sd: float = 2.0
    artifact_persist: float = 0.75

    def __post_init__(self) -> None:
        t = np.asarray(self.transitions, dtype=np.float64)
        if t.shape != (3, 3) or np.any(t < 0) or not np.allclose(t.sum(axis=1), 1.0):
            raise ValueError("transition matrix must be 3x3 row-stochastic")
        for name, b in self.breathing.items():
            if min(b.rate_jitter, b.amp_jitter) < 0:
                raise ValueError(f"negative jitter for stage {name}")
        if min(self.subject_rate_sd, self.subject_amp_sd, self.noise_sd, self.artifact_noise_sd) < 0:
            raise ValueError("standard deviations must be non-negative")
        if not 0.0 <= self.artifact_persist < 1.0:
            raise ValueError("artifact_persist must lie in [0, 1)")
        object.__setattr__(self, "transitions", t)


def stationary_distribution(transitions: NDArray[np.float64]) -> NDArray[np.float64]:
    vals, vecs = np.linalg.eig(np.asarray(transitions).T)
    v = np.real(vecs[:, np.argmin(np.abs(vals - 1.0))])
    return v / v.sum()


def _stage_chain(n: int, transitions: NDArray[np.float64], rng: np.random.Generator) -> NDArray[np.int64]:
    states = np.empty(n, dtype=np.int64)
    states[0] = rng.choice(3, p=stationary_distribution(transitions))
    cum = np.cumsum(transitions, axis=1)
    u = rng.random(n)
    for k in range(1, n):
        states[k] = min(int(np.searchsorted(cum[states[k - 1]], u[k], side="right")), 2)
    return states


def _raw_label(stage: int, rng: np.random.Generator) -> str:
    if stage == 0:
        return "W"
    if stage == 1:
        return "R"
    return ("N1", "N2", "N2", "N2", "N3")[rng.integers(5)]


def _smooth_noise(n: int, rate_hz: float, cutoff_hz: float, rng: np.random.Generator) -> NDArray[np.float64]:
    width = max(1, int(rate_hz / cutoff_hz))
    kernel = np.hanning(2 * width + 1)
    kernel /= np.sqrt(np.sum(kernel**2))
    return np.convolve(rng.standard_normal(n + 2 * width), kernel, mode="valid")[:n]


def _inject_artifacts(
    x: NDArray[np.float64],
    states: NDArray[np.int64],
    cfg: SynthConfig,
    amp_scale: float,
    rng: np.random.Generator,
) -> None:
    """Sensor-displacement episodes, in place.

    An episode starts in an epoch with the stage's ``artifact_prob`` and
    continues into following epochs of the same stage with probability
    ``artifact_persist``.  Breathing is attenuated and band-limited noise
    of random bandwidth is added; severity is drawn per episode.
    """
    per_epoch = int(round(EPOCH_S * cfg.rate_hz))
    e = 0
    while e < states.size:
        p = cfg.artifact_prob.get(STAGES[states[e]], 0.0)
        if not (p and rng.random() < p):
            e += 1
            continue
        sev = rng.uniform(0.3, 1.0)
        keep = 1.0 - sev * (1.0 - cfg.artifact_attenuation)
        cutoff = float(np.exp(rng.uniform(np.log(0.3), np.log(5.0))))
        stage = states[e]
        while True:
            seg = slice(e * per_epoch, (e + 1) * per_epoch)
            noise = _smooth_noise(per_epoch, cfg.rate_hz, cutoff, rng)
            x[seg] = keep * x[seg] + sev * cfg.artifact_noise_sd * amp_scale * noise
            e += 1
            if e >= states.size or states[e] != stage or rng.random() >= cfg.artifact_persist:
                break


def synthesize_subject(subject_id: str, cfg: SynthConfig, rng: np.random.Generator) -> SubjectRecord:
    n_epochs = cfg.epochs_per_subject
    fs = cfg.rate_hz
    total_s = n_epochs * EPOCH_S
    states = _stage_chain(n_epochs, cfg.transitions, rng)
    labels = tuple(_raw_label(s, rng) for s in states)
    rate_shift = rng.normal(0.0, cfg.subject_rate_sd)
    amp_scale = float(np.exp(rng.normal(0.0, cfg.subject_amp_sd)))

    # breath-by-breath rates with AR(1) fluctuations of stage-specific spread
    onsets, periods, amps = [], [], []
    t, z = 0.0, 0.0
    while t < total_s:
        b = cfg.breathing[STAGES[states[min(int(t // EPOCH_S), n_epochs - 1)]]]
        z = 0.5 * z + math.sqrt(1 - 0.25) * rng.standard_normal()
        rate = min(max(b.rate_cpm + rate_shift + b.rate_jitter * z, 5.0), 40.0)
        amp = max(b.amplitude * (1.0 + b.amp_jitter * rng.standard_normal()), 0.1) * amp_scale
        onsets.append(t)
        periods.append(60.0 / rate)
        amps.append(amp)
        t += 60.0 / rate
    onsets_a, periods_a, amps_a = map(np.asarray, (onsets, periods, amps))
    times = np.arange(int(round(total_s * fs))) / fs
    k = np.searchsorted(onsets_a, times, side="right") - 1
    phase = (times - onsets_a[k]) / periods_a[k]
    x = amps_a[k] * np.sin(2.0 * np.pi * phase)
    x += cfg.noise_sd * amp_scale * rng.standard_normal(times.size)

    per_epoch = int(round(EPOCH_S * fs))
    for e, s in enumerate(states):
        b = cfg.breathing[STAGES[s]]
        if b.burst_prob and rng.random() < b.burst_prob:
            length = int(rng.uniform(3.0, 10.0) * fs)
            start = e * per_epoch + int(rng.integers(0, per_epoch - length))
            gain = rng.uniform(1.5, 3.0) * amp_scale
            burst = gain * _smooth_noise(length, fs, 1.0, rng) * np.hanning(length)
            x[start : start + length] += burst
    _inject_artifacts(x, states, cfg, amp_scale, rng)
    return SubjectRecord(subject_id, TimeSeries(x, fs), labels)


def subject_ids(n: int) -> list[str]:
    width = max(2, len(str(n)))
    return [f"S{k + 1:0{width}d}" for k in range(n)]


def generate_synthetic(cfg: SynthConfig) -> list[SubjectRecord]:
    """Deterministic cohort: each subject draws from its own child seed."""
    seeds = np.random.SeedSequence(cfg.seed).spawn(cfg.n_subjects)
    return [
        synthesize_subject(sid, cfg, np.random.default_rng(s))
        for sid, s in zip(subject_ids(cfg.n_subjects), seeds)
    ]


def write_cohort(records: Sequence[SubjectRecord], out_dir: str | Path) -> list[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return [save_record(r, out) for r in records]
