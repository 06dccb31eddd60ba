"""One-dimensional signal primitives: detrending, zero-phase Butterworth
filtering and power spectra.

All functions are pure and return new :class:`TimeSeries` objects.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy import signal as sps


class SignalError(ValueError):
    """Raised for invalid signal input (too short, bad band, non-finite)."""


@dataclass(frozen=True)
class TimeSeries:
    """Uniformly sampled real-valued signal.

    Attributes
    ----------
    samples : ndarray
        Sample values (float64, finite).
    rate_hz : float
        Sampling rate in Hz.
    start_time_s : float
        Time of the first sample in seconds.
    """

    samples: NDArray[np.float64]
    rate_hz: float
    start_time_s: float = 0.0

    def __post_init__(self) -> None:
        x = np.asarray(self.samples, dtype=np.float64).reshape(-1)
        if x.size < 1:
            raise SignalError("time series must contain at least one sample")
        if not np.all(np.isfinite(x)):
            raise SignalError("time series contains NaN or Inf")
        if not self.rate_hz > 0:
            raise SignalError(f"rate_hz must be positive, got {self.rate_hz}")
        x.setflags(write=False)
        object.__setattr__(self, "samples", x)
        object.__setattr__(self, "rate_hz", float(self.rate_hz))
        object.__setattr__(self, "start_time_s", float(self.start_time_s))

    def __len__(self) -> int:
        return self.samples.size

    @property
    def duration_s(self) -> float:
        return self.samples.size / self.rate_hz

    @property
    def times(self) -> NDArray[np.float64]:
        return self.start_time_s + np.arange(self.samples.size) / self.rate_hz

    def with_samples(self, samples: ArrayLike) -> "TimeSeries":
        return TimeSeries(np.asarray(samples, dtype=np.float64), self.rate_hz, self.start_time_s)

    def slice_seconds(self, start_s: float, stop_s: float) -> "TimeSeries":
        """Samples with times in ``[start_s, stop_s)`` measured from ``start_time_s``."""
        i0 = int(round(start_s * self.rate_hz))
        i1 = int(round(stop_s * self.rate_hz))
        return TimeSeries(self.samples[i0:i1], self.rate_hz, self.start_time_s + i0 / self.rate_hz)


@dataclass(frozen=True)
class Spectrum:
    """One-sided power spectrum ``|DFT(x)[l]|**2`` for ``l = 0..N//2``."""

    power: NDArray[np.float64]
    bin_hz: float
    n_samples: int = field(default=0)

    @property
    def freqs(self) -> NDArray[np.float64]:
        return np.arange(self.power.size) * self.bin_hz


def _as_series(x: TimeSeries | ArrayLike, rate_hz: float | None = None) -> TimeSeries:
    if isinstance(x, TimeSeries):
        return x
    if rate_hz is None:
        raise SignalError("rate_hz is required for raw arrays")
    return TimeSeries(np.asarray(x, dtype=np.float64), rate_hz)


def linear_detrend(x: TimeSeries) -> TimeSeries:
    """Subtract the least-squares affine fit."""
    y = x.samples
    n = y.size
    if n < 2:
        raise SignalError("linear_detrend needs at least 2 samples")
    t = np.arange(n, dtype=np.float64)
    t -= t.mean()
    slope = np.dot(t, y - y.mean()) / np.dot(t, t)
    resid = y - y.mean() - slope * t
    return x.with_samples(resid)


def _check_order(order: int) -> None:
    if int(order) != order or order < 1:
        raise SignalError(f"filter order must be a positive integer, got {order}")


def _zero_phase(sos: NDArray[np.float64], x: TimeSeries, order: int) -> TimeSeries:
    # odd reflection over 3*order samples, clipped for very short inputs
    padlen = min(3 * order, len(x) - 1)
    y = sps.sosfiltfilt(sos, x.samples, padtype="odd", padlen=padlen)
    return x.with_samples(y)


def butter_lowpass(x: TimeSeries, cutoff_hz: float, order: int = 5) -> TimeSeries:
    """Zero-phase Butterworth low-pass (forward and backward pass).

    The effective magnitude response is the square of the single-pass
    Butterworth response, ``1 / (1 + (f / cutoff_hz) ** (2 * order))``.
    """
    _check_order(order)
    nyq = x.rate_hz / 2.0
    if not 0.0 < cutoff_hz < nyq:
        raise SignalError(f"cutoff {cutoff_hz} Hz outside (0, {nyq}) Hz")
    sos = sps.butter(order, cutoff_hz, btype="lowpass", fs=x.rate_hz, output="sos")
    return _zero_phase(sos, x, order)


def butter_bandpass(x: TimeSeries, low_hz: float, high_hz: float, order: int = 3) -> TimeSeries:
    """Zero-phase Butterworth band-pass over ``[low_hz, high_hz]``."""
    _check_order(order)
    nyq = x.rate_hz / 2.0
    if not 0.0 < low_hz < high_hz < nyq:
        raise SignalError(f"band [{low_hz}, {high_hz}] Hz outside (0, {nyq}) Hz")
    sos = sps.butter(order, [low_hz, high_hz], btype="bandpass", fs=x.rate_hz, output="sos")
    return _zero_phase(sos, x, order)


def power_spectrum(x: TimeSeries) -> Spectrum:
    """Rectangular-window power spectrum of the whole series."""
    n = len(x)
    if n < 2:
        raise SignalError("power_spectrum needs at least 2 samples")
    coeffs = np.fft.rfft(x.samples)
    power = coeffs.real**2 + coeffs.imag**2
    return Spectrum(power=power, bin_hz=x.rate_hz / n, n_samples=n)
