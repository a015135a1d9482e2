"""Periodicity detection.

Decides whether a series is periodic and recovers up to a small number of
period lengths. Candidates come from periodogram peaks on a clipped,
detrended, median-filtered copy of the series; each candidate must be
confirmed by an autocorrelation peak and by the share of variance a trial
seasonal fit at that lag explains.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.ndimage
import scipy.signal

from .core import EngineError, ErrorKind, TimeSeries
from .ingest import MAD_SCALE

__all__ = ["PeriodReport", "detect_periods", "phase_pattern", "tile_pattern"]

DEFAULT_MAX_PERIODS = 2
DEFAULT_STRENGTH_THRESHOLD = 0.5

#: Candidate periodogram peaks must exceed this multiple of the median power.
NOISE_FLOOR_FACTOR = 3.0

#: Values are clipped at median +/- this many robust standard deviations
#: before spectral analysis.
CLIP_SIGMAS = 5.0

_MAX_CANDIDATES = 12


@dataclass(frozen=True)
class PeriodReport:
    """Detected period lengths (in samples), strongest first."""

    periods: tuple
    strengths: tuple

    @property
    def is_periodic(self) -> bool:
        return len(self.periods) > 0

    @property
    def dominant_strength(self) -> float:
        return self.strengths[0] if self.strengths else 0.0


def phase_pattern(arr: np.ndarray, period: int) -> np.ndarray:
    """Median of ``arr`` grouped by index mod ``period``, mean-centered.

    The centering keeps the pattern summing to zero over one full cycle, the
    identifiability convention every seasonal component follows.
    """
    n = len(arr)
    n_cycles = -(-n // period)
    buf = np.full(n_cycles * period, np.nan)
    buf[:n] = arr
    pattern = np.nanmedian(buf.reshape(n_cycles, period), axis=0)
    return pattern - pattern.mean()

def tile_pattern(pattern: np.ndarray, n: int) -> np.ndarray:
    period = len(pattern)
    reps = -(-n // period)
    return np.tile(pattern, reps)[:n]


def _clip_robust(x: np.ndarray) -> np.ndarray:
    med = float(np.median(x))
    mad = float(np.median(np.abs(x - med)))
    scale = MAD_SCALE * mad
    if scale <= 0:
        return x
    return np.clip(x, med - CLIP_SIGMAS * scale, med + CLIP_SIGMAS * scale)


def _detrend_linear(x: np.ndarray) -> np.ndarray:
    t = np.arange(len(x), dtype=float)
    slope, intercept = np.polyfit(t, x, 1)
    return x - (slope * t + intercept)


def _autocorrelation(x: np.ndarray) -> np.ndarray:
    """Biased autocorrelation via FFT, normalized to acf[0] == 1."""
    n = len(x)
    centered = x - x.mean()
    size = 1 << (2 * n - 1).bit_length()
    spectrum = np.fft.rfft(centered, size)
    acf = np.fft.irfft(spectrum * np.conj(spectrum), size)[:n]
    if acf[0] <= 0:
        return np.zeros(n)
    return acf / acf[0]


def _candidate_periods(detrended: np.ndarray) -> list:
    """Periodogram peak lags above the noise floor, strongest power first.

    Near-equal powers are broken toward the smaller period.
    """
    n = len(detrended)
    smoothed = scipy.ndimage.median_filter(detrended, size=3, mode="nearest")
    power = np.abs(np.fft.rfft(smoothed)) ** 2
    power[0] = 0.0
    if len(power) < 3:
        return []
    floor = float(np.median(power[1:]))
    peaks = []
    for k in range(1, len(power)):
        if power[k] <= NOISE_FLOOR_FACTOR * floor or power[k] <= 0:
            continue
        left = power[k - 1] if k - 1 >= 1 else 0.0
        right = power[k + 1] if k + 1 < len(power) else 0.0
        if power[k] < left or power[k] < right:
            continue
        period = int(round(n / k))
        if 2 <= period <= n // 2:
            peaks.append((period, float(power[k])))
    peaks.sort(key=lambda pw: (-pw[1], pw[0]))
    seen, ordered = set(), []
    for period, _ in peaks:
        if period not in seen:
            seen.add(period)
            ordered.append(period)
    return ordered[:_MAX_CANDIDATES]


def _refine_with_acf(period: int, acf: np.ndarray, n: int) -> int | None:
    """Snap a candidate to the nearest autocorrelation peak; reject lags
    without positive correlation.

    The search half-width grows with the periodogram's bin quantization
    error at this lag (about p^2/2n samples)."""
    half = max(2, -(-period * period // (2 * n)) + 1)
    lo = max(2, period - half)
    hi = min(n // 2, period + half)
    if lo > hi:
        return None
    window = acf[lo : hi + 1]
    best = lo + int(np.argmax(window))
    if acf[best] <= 0:
        return None
    return best


def _seasonal_strength(detrended: np.ndarray, period: int) -> float:
    seasonal = tile_pattern(phase_pattern(detrended, period), len(detrended))
    total = float(np.var(detrended))
    if total <= 0:
        return 0.0
    resid = float(np.var(detrended - seasonal))
    return float(min(1.0, max(0.0, 1.0 - resid / total)))


def _drop_weaker_multiples(scored: list) -> list:
    """Drop a period that is an integer multiple (within +/-2 samples) of an
    already accepted one unless it is strictly stronger."""
    kept = []
    for period, strength in scored:
        redundant = False
        for base, base_strength in kept:
            k = round(period / base)
            if k >= 2 and abs(period - k * base) <= 2 and strength <= base_strength:
                redundant = True
                break
        if not redundant:
            kept.append((period, strength))
    return kept


def detect_periods(
    series: TimeSeries,
    max_periods: int = DEFAULT_MAX_PERIODS,
    strength_threshold: float = DEFAULT_STRENGTH_THRESHOLD,
    require_periodic: bool = False,
) -> PeriodReport:
    """Detect up to ``max_periods`` period lengths in a repaired series.

    A candidate is reported when at least two full cycles fit in the series,
    an autocorrelation peak confirms the lag, and a trial seasonal fit at
    the lag explains at least ``strength_threshold`` of the variance. The
    decision is invariant under positive affine rescaling of the input.

    Args:
        series: repaired series (no missing samples), length >= 8.
        max_periods: cap on the number of reported periods.
        strength_threshold: minimum variance-explained score in [0, 1].
        require_periodic: raise INSUFFICIENT_DATA instead of returning an
            empty report when no period survives.

    Raises:
        EngineError: INSUFFICIENT_DATA on missing samples, length < 8, or
            (with ``require_periodic``) when nothing is detected.
    """
    x = series.to_array()
    n = len(x)
    if np.isnan(x).any():
        raise EngineError(
            ErrorKind.INSUFFICIENT_DATA, "series has missing samples; repair first"
        )
    if n < 8:
        raise EngineError(
            ErrorKind.INSUFFICIENT_DATA, f"need >= 8 samples, have {n}"
        )
    if max_periods < 1:
        raise EngineError(ErrorKind.INVALID_CONFIG, "max_periods must be >= 1")

    empty = PeriodReport(periods=(), strengths=())
    if float(np.var(x)) <= 0:
        if require_periodic:
            raise EngineError(ErrorKind.INSUFFICIENT_DATA, "constant series")
        return empty

    detrended = _detrend_linear(_clip_robust(x))
    if float(np.var(detrended)) <= 0:
        if require_periodic:
            raise EngineError(ErrorKind.INSUFFICIENT_DATA, "series is a pure trend")
        return empty

    acf = _autocorrelation(detrended)
    scored = []
    seen = set()
    for candidate in _candidate_periods(detrended):
        period = _refine_with_acf(candidate, acf, n)
        if period is None or period in seen:
            continue
        if n < 2 * period:
            continue  # fewer than two full cycles: discard, not an error
        seen.add(period)
        strength = _seasonal_strength(detrended, period)
        if strength >= strength_threshold:
            scored.append((period, strength))

    scored.sort(key=lambda ps: (-ps[1], ps[0]))
    kept = _drop_weaker_multiples(scored)[:max_periods]
    if not kept and require_periodic:
        raise EngineError(
            ErrorKind.INSUFFICIENT_DATA, "no period with two full cycles detected"
        )
    return PeriodReport(
        periods=tuple(p for p, _ in kept),
        strengths=tuple(s for _, s in kept),
    )
