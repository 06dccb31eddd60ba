"""Breath-cycle detection, instantaneous respiratory rate (IRR) and the
spectral signal quality index (SQI)."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.typing import NDArray
from scipy.interpolate import CubicHermiteSpline

from .signal import (
    SignalError,
    TimeSeries,
    butter_bandpass,
    butter_lowpass,
    linear_detrend,
    power_spectrum,
)

IRR_RATE_HZ = 4.0
RESP_BAND_HZ = (0.1, 0.75)


class InsufficientBreathsError(ValueError):
    """Fewer than three breath cycles could be detected."""


@dataclass(frozen=True)
class BreathCycles:
    """Cycle boundary times (seconds), strictly increasing."""

    onsets_s: NDArray[np.float64]

    def __post_init__(self) -> None:
        t = np.asarray(self.onsets_s, dtype=np.float64).reshape(-1)
        if t.size > 1 and np.any(np.diff(t) <= 0):
            raise SignalError("breath onsets must be strictly increasing")
        object.__setattr__(self, "onsets_s", t)

    def __len__(self) -> int:
        return self.onsets_s.size

    @property
    def intervals_s(self) -> NDArray[np.float64]:
        return np.diff(self.onsets_s)


def detect_breath_cycles(
    airflow: TimeSeries,
    *,
    min_cycle_s: float = 1.0,
    amp_frac: float = 0.1,
    cutoff_hz: float = 2.0,
    order: int = 5,
) -> BreathCycles:
    """Exhalation onsets as gated downward zero-crossings.

    The airflow is linearly detrended and low-passed (zero-phase
    Butterworth, ``cutoff_hz``/``order``).  A positive-to-negative crossing
    is accepted when at least ``min_cycle_s`` has elapsed since the last
    accepted crossing and the positive excursion since then exceeds
    ``amp_frac`` times the RMS of the filtered signal.  Crossing times are
    linearly interpolated and reported on the input's time axis.
    """
    if airflow.duration_s < 10.0:
        raise SignalError("breath detection needs at least 10 s of airflow")
    nyq = airflow.rate_hz / 2.0
    y = linear_detrend(airflow)
    if cutoff_hz < nyq:
        y = butter_lowpass(y, cutoff_hz, order)
    x = y.samples
    rms = float(np.sqrt(np.mean(x * x)))
    if rms == 0.0:
        raise InsufficientBreathsError("flat airflow: no breath cycles")
    gate = amp_frac * rms

    down = np.flatnonzero((x[:-1] > 0.0) & (x[1:] <= 0.0))
    frac = x[down] / (x[down] - x[down + 1])
    times = (down + frac) / airflow.rate_hz
    # running max of the positive lobe between accepted crossings
    onsets: list[float] = []
    last_t = -np.inf
    last_idx = 0
    for k, t in zip(down, times):
        if t - last_t < min_cycle_s:
            continue
        if x[last_idx : k + 1].max() <= gate:
            continue
        onsets.append(float(t))
        last_t = t
        last_idx = k + 1
    if len(onsets) < 3:
        raise InsufficientBreathsError(f"only {len(onsets)} breath cycles detected")
    return BreathCycles(np.asarray(onsets) + airflow.start_time_s)


def fritsch_carlson_slopes(x: NDArray[np.float64], y: NDArray[np.float64]) -> NDArray[np.float64]:
    """Knot derivatives of the Fritsch-Carlson monotone cubic interpolant."""
    h = np.diff(x)
    delta = np.diff(y) / h
    n = x.size
    m = np.empty(n)
    if n == 2:
        m[:] = delta[0]
        return m
    m[0] = delta[0]
    m[-1] = delta[-1]
    m[1:-1] = 0.5 * (delta[:-1] + delta[1:])
    m[1:-1][delta[:-1] * delta[1:] <= 0] = 0.0
    for k in range(n - 1):
        if delta[k] == 0.0:
            m[k] = m[k + 1] = 0.0
            continue
        a = m[k] / delta[k]
        b = m[k + 1] / delta[k]
        s = a * a + b * b
        if s > 9.0:
            tau = 3.0 / np.sqrt(s)
            m[k] = tau * a * delta[k]
            m[k + 1] = tau * b * delta[k]
    return m


def build_irr(cycles: BreathCycles, duration_s: float, rate_hz: float = IRR_RATE_HZ) -> TimeSeries:
    """Instantaneous respiratory rate in cycles per minute, sampled at ``rate_hz``.

    Knots are ``(t_i, 60 / (t_i - t_{i-1}))`` for every onset after the
    first; a Fritsch-Carlson monotone cubic runs through them and
    the value is held constant outside the knot range.
    """
    t = np.asarray(cycles.onsets_s, dtype=np.float64)
    if t.size < 3:
        raise InsufficientBreathsError("IRR needs at least 3 onsets")
    if np.any(np.diff(t) <= 0):
        raise SignalError("duplicate or unsorted breath onsets")
    knots_t = t[1:]
    knots_v = 60.0 / np.diff(t)
    grid = np.arange(int(round(duration_s * rate_hz))) / rate_hz
    clipped = np.clip(grid, knots_t[0], knots_t[-1])
    if knots_t.size == 1:
        return TimeSeries(np.full(grid.size, knots_v[0]), rate_hz)
    spline = CubicHermiteSpline(knots_t, knots_v, fritsch_carlson_slopes(knots_t, knots_v))
    values = spline(clipped)
    return TimeSeries(values, rate_hz)


def sqi(airflow_window: TimeSeries, band: tuple[float, float] = RESP_BAND_HZ, order: int = 3) -> float:
    """Spectral signal quality index of a band-passed window.

    Power in the five DFT bins centred on the in-band spectral peak divided
    by the total power of all non-DC bins.  Returns 0 for an all-zero
    spectrum.
    """
    filtered = butter_bandpass(airflow_window, band[0], band[1], order)
    spec = power_spectrum(filtered)
    return _sqi_from_spectrum(spec, band)


def _sqi_from_spectrum(spec, band: tuple[float, float]) -> float:
    power = spec.power
    total = float(power[1:].sum())
    if total <= 0.0:
        return 0.0
    freqs = spec.freqs
    in_band = np.flatnonzero((freqs >= band[0]) & (freqs <= band[1]))
    if in_band.size == 0:
        return 0.0
    peak = int(in_band[np.argmax(power[in_band])])
    lo = max(1, peak - 2)
    hi = min(power.size - 1, peak + 2)
    value = float(power[lo : hi + 1].sum()) / total
    return min(max(value, 0.0), 1.0)
