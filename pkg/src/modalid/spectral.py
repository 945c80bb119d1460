"""Averaged spectral estimation, coherence gating and resonance picking.

All estimates share one periodogram accumulator so that cross spectra,
auto spectra and coherence are mutually consistent: averaging happens on
the spectral densities first, ratios are formed last. Windowing uses a
symmetric Hann taper by default; the per-impact coherence path uses a
rectangular window because a taper would null the impulsive force
sample sitting at the window start.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.signal.windows import hann
from scipy.stats import chi2

from .errors import (
    AlignmentError,
    DegenerateCoherenceError,
    InvalidParameterError,
    TooShortError,
)
from .signal import ImpactSegment, TimeSeries

__all__ = [
    "Spectrum",
    "ConfidenceBand",
    "ValidBand",
    "psd",
    "cpsd",
    "averaged_coherence",
    "receptance",
    "psd_confidence",
    "confidence_dof",
    "valid_band",
    "pick_resonances",
    "spectrum_to_csv",
    "spectrum_to_json",
]

DEFAULT_SEG_LEN = 4096
DEFAULT_OVERLAP = 0.5


@dataclass
class Spectrum:
    """Frequency-indexed spectral estimate with averaging metadata.

    kind is one of ``psd`` (real, >= 0), ``cpsd`` (complex),
    ``coherence`` (real in [0, 1]) or ``receptance`` (complex).
    """

    freqs: np.ndarray
    values: np.ndarray
    kind: str
    n_averages: int = 1
    segment_length: int = 0

    def __post_init__(self):
        self.freqs = np.asarray(self.freqs, dtype=float)
        self.values = np.asarray(self.values)
        if self.freqs.shape != self.values.shape:
            raise ValueError("freqs and values must have equal length")
        if self.freqs.size and self.freqs[0] < 0:
            raise ValueError("frequencies must be nonnegative")
        if self.kind not in ("psd", "cpsd", "coherence", "receptance"):
            raise ValueError(f"unknown spectrum kind {self.kind!r}")
        if self.kind in ("psd", "coherence"):
            self.values = np.real(self.values).astype(float)

    @property
    def df(self) -> float:
        return float(self.freqs[1] - self.freqs[0]) if self.freqs.size > 1 else 0.0


@dataclass
class ConfidenceBand:
    """Multiplicative chi-squared confidence band around a PSD."""

    center: Spectrum
    lower: Spectrum
    upper: Spectrum
    alpha: float
    nu: float

    def __post_init__(self):
        if not 0 < self.alpha < 1:
            raise InvalidParameterError("alpha must be in (0, 1)")
        for s in (self.lower, self.upper):
            if s.freqs.shape != self.center.freqs.shape:
                raise ValueError("band members must share the frequency grid")


@dataclass
class ValidBand:
    """Frequency intervals where the coherence clears the threshold."""

    intervals: list[tuple[float, float]]
    threshold: float = 0.8

    def covers(self, low_hz: float, high_hz: float) -> float:
        """Fraction of [low_hz, high_hz] covered by the valid intervals."""
        span = high_hz - low_hz
        if span <= 0:
            return 0.0
        covered = 0.0
        for lo, hi in self.intervals:
            covered += max(0.0, min(hi, high_hz) - max(lo, low_hz))
        return covered / span


def _segment_starts(n: int, seg_len: int, overlap_frac: float) -> range:
    step = seg_len - int(overlap_frac * seg_len)
    step = max(step, 1)
    return range(0, n - seg_len + 1, step)


class _WelchAccumulator:
    """Sums one-sided cross periodograms; density scaling, no detrend."""

    def __init__(self, seg_len: int, sample_rate: float, window: str = "hann"):
        self.seg_len = int(seg_len)
        self.sample_rate = float(sample_rate)
        if window == "hann":
            self.window = hann(self.seg_len, sym=True)
        elif window == "boxcar":
            self.window = np.ones(self.seg_len)
        else:
            raise InvalidParameterError(f"unknown window {window!r}")
        self.scale = 1.0 / (self.sample_rate * np.sum(self.window**2))
        self.freqs = np.fft.rfftfreq(self.seg_len, d=1.0 / self.sample_rate)
        self.sum = np.zeros(self.freqs.size, dtype=complex)
        self.count = 0

    def add_pair(self, x: np.ndarray, y: np.ndarray, overlap_frac: float) -> None:
        if x.size < self.seg_len:
            raise TooShortError(
                f"segment length {self.seg_len} exceeds series length {x.size}"
            )
        for start in _segment_starts(x.size, self.seg_len, overlap_frac):
            sl = slice(start, start + self.seg_len)
            fx = np.fft.rfft(self.window * x[sl])
            fy = fx if y is x else np.fft.rfft(self.window * y[sl])
            self.sum += np.conj(fx) * fy
            self.count += 1

    def average(self) -> np.ndarray:
        if self.count == 0:
            raise TooShortError("no complete segment fits the data")
        g = self.sum * (self.scale / self.count)
        g[1:] *= 2.0
        if self.seg_len % 2 == 0:
            g[-1] /= 2.0
        return g


def _check_aligned(x: TimeSeries, y: TimeSeries) -> None:
    if x.sample_rate != y.sample_rate:
        raise AlignmentError("channels have different sample rates")
    if len(x) != len(y):
        raise AlignmentError("channels have different lengths")


def psd(
    ts: TimeSeries,
    seg_len: int = DEFAULT_SEG_LEN,
    overlap_frac: float = DEFAULT_OVERLAP,
    window: str = "hann",
) -> Spectrum:
    """One-sided Welch power spectral density.

    Hann-windowed overlapping segments, density scaling: the values
    integrate to the signal power (Parseval within estimator bias).
    """
    if not 0 <= overlap_frac < 1:
        raise InvalidParameterError("overlap_frac must be in [0, 1)")
    acc = _WelchAccumulator(seg_len, ts.sample_rate, window)
    acc.add_pair(ts.samples, ts.samples, overlap_frac)
    values = np.real(acc.average())
    return Spectrum(acc.freqs, values, "psd", n_averages=acc.count, segment_length=acc.seg_len)


def cpsd(
    x: TimeSeries,
    y: TimeSeries,
    seg_len: int = DEFAULT_SEG_LEN,
    overlap_frac: float = DEFAULT_OVERLAP,
    window: str = "hann",
) -> Spectrum:
    """Complex cross power spectral density with the same segmentation as psd.

    ``cpsd(x, x)`` equals ``psd(x)`` exactly (same accumulation path).
    """
    _check_aligned(x, y)
    if not 0 <= overlap_frac < 1:
        raise InvalidParameterError("overlap_frac must be in [0, 1)")
    acc = _WelchAccumulator(seg_len, x.sample_rate, window)
    acc.add_pair(x.samples, y.samples if y is not x else x.samples, overlap_frac)
    return Spectrum(
        acc.freqs, acc.average(), "cpsd", n_averages=acc.count, segment_length=acc.seg_len
    )


def averaged_coherence(
    segments: list[ImpactSegment],
    seg_len: int | None = None,
    overlap_frac: float = 0.0,
) -> Spectrum:
    """Coherence from spectral densities averaged across impacts.

    The force, acceleration and cross densities are pooled over every
    periodogram of every impact first; the coherence ratio
    ``|G_fa|^2 / (G_ff * G_aa)`` is formed once, on the averages. A
    rectangular window is used so that the force pulse anchored at the
    window start survives the taper.

    Raises
    ------
    DegenerateCoherenceError
        With fewer than two impacts (one average is identically 1).
    """
    if len(segments) < 2:
        raise DegenerateCoherenceError("coherence needs at least two impacts")
    for s in segments:
        if s.force_window is None:
            raise ValueError("every segment must carry a force window")
    fs = segments[0].sample_rate
    if seg_len is None:
        seg_len = min(len(s.accel_window) for s in segments)

    gff = _WelchAccumulator(seg_len, fs, "boxcar")
    gaa = _WelchAccumulator(seg_len, fs, "boxcar")
    gfa = _WelchAccumulator(seg_len, fs, "boxcar")
    for s in segments:
        if s.sample_rate != fs:
            raise AlignmentError("impacts have mixed sample rates")
        f = s.force_window.samples
        a = s.accel_window.samples
        gff.add_pair(f, f, overlap_frac)
        gaa.add_pair(a, a, overlap_frac)
        gfa.add_pair(f, a, overlap_frac)

    sff = np.real(gff.average())
    saa = np.real(gaa.average())
    sfa = gfa.average()
    denom = sff * saa
    with np.errstate(divide="ignore", invalid="ignore"):
        coh = np.where(denom > 0, np.abs(sfa) ** 2 / denom, 0.0)
    if np.any(coh > 1.0 + 1e-9):
        raise AssertionError(
            f"coherence exceeded 1 by {np.max(coh) - 1.0:.3e}; estimator inconsistency"
        )
    coh = np.clip(coh, 0.0, 1.0)
    return Spectrum(
        gfa.freqs, coh, "coherence", n_averages=gfa.count, segment_length=seg_len
    )


def receptance(
    force: TimeSeries,
    accel: TimeSeries,
    seg_len: int = DEFAULT_SEG_LEN,
    overlap_frac: float = DEFAULT_OVERLAP,
    window: str = "hann",
) -> Spectrum:
    """Receptance (displacement per force) from force/acceleration records.

    Computed as ``G_aa / (-omega^2 G_fa)``; the singular DC bin is
    dropped, so the first reported frequency is one bin spacing. Bins
    with vanishing cross spectrum are flagged NaN rather than fatal.
    """
    _check_aligned(force, accel)
    gaa = cpsd(accel, accel, seg_len, overlap_frac, window)
    gfa = cpsd(force, accel, seg_len, overlap_frac, window)
    freqs = gaa.freqs[1:]
    omega = 2.0 * np.pi * freqs
    num = np.real(gaa.values[1:])
    den = -(omega**2) * gfa.values[1:]
    with np.errstate(divide="ignore", invalid="ignore"):
        h = np.where(den != 0, num / den, np.nan + 0j)
    n_bad = int(np.sum(den == 0))
    if n_bad:
        warnings.warn(f"{n_bad} receptance bins invalid (zero cross spectrum)", stacklevel=2)
    return Spectrum(
        freqs, h, "receptance", n_averages=gaa.n_averages, segment_length=seg_len
    )


def confidence_dof(
    n_observations: int, window_size: int | None = None, lag_weight: float = 0.5
) -> float:
    """Equivalent chi-squared degrees of freedom of a smoothed PSD estimate.

    ``2 N / sum of squared correlation-window weights`` with a constant
    weight over ``2 L`` lags; the window size defaults to the number of
    observations, collapsing the expression to ``1 / lag_weight^2``.
    """
    if n_observations <= 0:
        raise InvalidParameterError("n_observations must be positive")
    L = n_observations if window_size is None else window_size
    if L <= 0 or lag_weight <= 0:
        raise InvalidParameterError("window size and lag weight must be positive")
    return 2.0 * n_observations / (2.0 * L * lag_weight**2)


def psd_confidence(
    center: Spectrum,
    n_samples: int | None = None,
    alpha: float = 0.05,
    nu: float | None = None,
) -> ConfidenceBand:
    """Chi-squared confidence band around a PSD estimate.

    The band is multiplicative, hence constant at every frequency on a
    log scale: ``upper = center * nu / chi2_nu(alpha/2)`` and
    ``lower = center * nu / chi2_nu(1 - alpha/2)``.

    The degrees of freedom come from, in order of precedence: the ``nu``
    argument; :func:`confidence_dof` applied to ``n_samples``; twice the
    number of averages recorded on the spectrum (exact for
    non-overlapping segments).
    """
    if center.kind != "psd":
        raise InvalidParameterError("confidence bands are defined for psd spectra")
    if not 0 < alpha < 1:
        raise InvalidParameterError("alpha must be in (0, 1)")
    if nu is None:
        nu = confidence_dof(n_samples) if n_samples is not None else 2.0 * center.n_averages
    if nu <= 0:
        raise InvalidParameterError("degrees of freedom must be positive")
    upper_ratio = nu / chi2.ppf(alpha / 2.0, nu)
    lower_ratio = nu / chi2.ppf(1.0 - alpha / 2.0, nu)
    lower = Spectrum(
        center.freqs,
        center.values * lower_ratio,
        "psd",
        center.n_averages,
        center.segment_length,
    )
    upper = Spectrum(
        center.freqs,
        center.values * upper_ratio,
        "psd",
        center.n_averages,
        center.segment_length,
    )
    return ConfidenceBand(center=center, lower=lower, upper=upper, alpha=alpha, nu=float(nu))


def valid_band(coh: Spectrum, threshold: float = 0.8, min_bins: int = 3) -> ValidBand:
    """Maximal frequency intervals where coherence stays at or above threshold.

    Runs shorter than ``min_bins`` bins are discarded as spurious.
    """
    if coh.kind != "coherence":
        raise InvalidParameterError("valid_band expects a coherence spectrum")
    mask = coh.values >= threshold
    intervals: list[tuple[float, float]] = []
    start = None
    for i, ok in enumerate(mask):
        if ok and start is None:
            start = i
        elif not ok and start is not None:
            if i - start >= min_bins:
                intervals.append((float(coh.freqs[start]), float(coh.freqs[i - 1])))
            start = None
    if start is not None and mask.size - start >= min_bins:
        intervals.append((float(coh.freqs[start]), float(coh.freqs[-1])))
    return ValidBand(intervals=intervals, threshold=threshold)


def pick_resonances(
    spec: Spectrum,
    band: tuple[float, float],
    k: int,
    prominence_factor: float = 3.0,
    median_bins: int = 50,
) -> list[tuple[float, float]]:
    """The ``k`` strongest resonance peaks inside a frequency band.

    A local maximum qualifies when it exceeds the median magnitude of
    the surrounding ``median_bins`` bins by ``prominence_factor``. The
    result is sorted by frequency; if fewer than ``k`` peaks qualify all
    found ones are returned and a warning is emitted.
    """
    if spec.kind not in ("psd", "receptance"):
        raise InvalidParameterError("resonance picking expects psd or receptance")
    mag = np.abs(spec.values)
    lo, hi = band
    idx = np.where((spec.freqs >= lo) & (spec.freqs <= hi))[0]
    peaks = []
    half = median_bins // 2
    for i in idx:
        if 0 < i < mag.size - 1 and mag[i] > mag[i - 1] and mag[i] >= mag[i + 1]:
            lo_i = max(i - half, 0)
            hi_i = min(i + half + 1, mag.size)
            background = np.median(mag[lo_i:hi_i])
            if mag[i] >= prominence_factor * background:
                peaks.append((float(spec.freqs[i]), float(mag[i])))
    peaks.sort(key=lambda p: p[1], reverse=True)
    picked = sorted(peaks[:k], key=lambda p: p[0])
    if len(picked) < k:
        warnings.warn(f"found {len(picked)} of {k} requested peaks", stacklevel=2)
    return picked


def spectrum_to_csv(spec: Spectrum, path) -> None:
    """Write ``freq_hz, value_re, value_im`` rows for external plotting."""
    values = np.asarray(spec.values, dtype=complex)
    with open(path, "w", newline="") as fh:
        fh.write("freq_hz,value_re,value_im\n")
        for f, v in zip(spec.freqs, values):
            fh.write(f"{f:.9g},{v.real:.9g},{v.imag:.9g}\n")


def spectrum_to_json(spec: Spectrum, alpha: float | None = None) -> dict:
    """JSON-ready dict for a spectrum (alpha included for band members)."""
    values = np.asarray(spec.values, dtype=complex)
    out = {
        "kind": spec.kind,
        "n_averages": spec.n_averages,
        "segment_length": spec.segment_length,
        "freq_hz": [float(f) for f in spec.freqs],
        "value_re": [float(v) for v in values.real],
        "value_im": [float(v) for v in values.imag],
    }
    if alpha is not None:
        out["alpha"] = alpha
    return out


def save_spectrum_json(spec: Spectrum, path, alpha: float | None = None) -> None:
    with open(path, "w") as fh:
        json.dump(spectrum_to_json(spec, alpha), fh, indent=2, sort_keys=True)
        fh.write("\n")
