"""Time-series containers, zero-phase filtering and event segmentation.

Records enter the pipeline as uniformly sampled channels (impact force
and vertical rail acceleration). This module slices them into
per-impact / per-wheel windows and provides the fixed Butterworth
filtering used throughout: 4th order, applied forward-backward so the
effective response is 8th order with zero phase distortion.
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.signal import butter, filtfilt, find_peaks, freqz

from .errors import AlignmentError, CsvParseError, InvalidFilterError, TooShortError

__all__ = [
    "TimeSeries",
    "ImpactSegment",
    "FilterSpec",
    "apply_filter",
    "band_split",
    "segment_impacts",
    "detect_wheel_events",
    "read_record_csv",
    "write_record_csv",
]

FILTER_ORDER = 4


@dataclass
class TimeSeries:
    """Uniformly sampled real-valued channel.

    Sample ``i`` corresponds to time ``t0 + i / sample_rate``.

    Parameters
    ----------
    samples : ndarray
        Channel values (acceleration in normalized g or force in N).
    sample_rate : float
        Sampling frequency in Hz, > 0.
    label : str
        Channel identifier.
    t0 : float
        Time of the first sample in seconds.
    """

    samples: np.ndarray
    sample_rate: float
    label: str = ""
    t0: float = 0.0

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=float)
        if self.samples.ndim != 1:
            raise ValueError("samples must be one-dimensional")
        if not self.sample_rate > 0:
            raise ValueError("sample_rate must be positive")

    def __len__(self) -> int:
        return self.samples.size

    @property
    def dt(self) -> float:
        return 1.0 / self.sample_rate

    @property
    def nyquist(self) -> float:
        return 0.5 * self.sample_rate

    @property
    def duration(self) -> float:
        return self.samples.size / self.sample_rate

    @property
    def times(self) -> np.ndarray:
        return self.t0 + np.arange(self.samples.size) / self.sample_rate

    def slice(self, start: int, stop: int, label: str | None = None) -> "TimeSeries":
        """Window by sample index, keeping the absolute time offset."""
        return TimeSeries(
            self.samples[start:stop].copy(),
            self.sample_rate,
            label=self.label if label is None else label,
            t0=self.t0 + start / self.sample_rate,
        )

    def with_samples(self, samples: np.ndarray) -> "TimeSeries":
        return replace(self, samples=np.asarray(samples, dtype=float))


@dataclass
class ImpactSegment:
    """One excitation event: a hammer impact or a wheel passage.

    ``force_window`` is absent for train data, where only the response
    is observed. When present, both windows cover the same interval.
    """

    accel_window: TimeSeries
    force_window: TimeSeries | None = None
    event_index: int = 0
    peak_time: float = 0.0
    flags: tuple[str, ...] = field(default_factory=tuple)

    def __post_init__(self):
        if self.force_window is not None:
            f, a = self.force_window, self.accel_window
            if f.sample_rate != a.sample_rate:
                raise AlignmentError("force and acceleration sample rates differ")
            if len(f) != len(a) or abs(f.t0 - a.t0) > 0.5 / f.sample_rate:
                raise AlignmentError("force and acceleration windows do not cover the same interval")
        w = self.accel_window
        if not (w.t0 - 0.5 / w.sample_rate <= self.peak_time <= w.t0 + w.duration):
            raise ValueError("peak_time lies outside the window interval")

    @property
    def sample_rate(self) -> float:
        return self.accel_window.sample_rate


@dataclass(frozen=True)
class FilterSpec:
    """Cutoff specification for the fixed zero-phase Butterworth design.

    kind is one of ``lowpass``, ``highpass`` or ``bandpass``; cutoffs
    holds one frequency (two for bandpass), strictly inside
    (0, sample_rate / 2).
    """

    kind: str
    cutoffs: tuple[float, ...]

    def __post_init__(self):
        if self.kind not in ("lowpass", "highpass", "bandpass"):
            raise InvalidFilterError(f"unknown filter kind {self.kind!r}")
        cut = tuple(float(c) for c in self.cutoffs)
        object.__setattr__(self, "cutoffs", cut)
        n = 2 if self.kind == "bandpass" else 1
        if len(cut) != n:
            raise InvalidFilterError(f"{self.kind} needs {n} cutoff(s), got {len(cut)}")
        if any(c <= 0 for c in cut):
            raise InvalidFilterError("cutoffs must be positive")
        if self.kind == "bandpass" and not cut[0] < cut[1]:
            raise InvalidFilterError("bandpass needs low < high cutoff")


def lowpass(cutoff_hz: float) -> FilterSpec:
    return FilterSpec("lowpass", (cutoff_hz,))


def highpass(cutoff_hz: float) -> FilterSpec:
    return FilterSpec("highpass", (cutoff_hz,))


def bandpass(low_hz: float, high_hz: float) -> FilterSpec:
    return FilterSpec("bandpass", (low_hz, high_hz))


def _design(spec: FilterSpec, sample_rate: float):
    nyq = 0.5 * sample_rate
    if any(c >= nyq for c in spec.cutoffs):
        raise InvalidFilterError(
            f"cutoff {max(spec.cutoffs):g} Hz at or above Nyquist ({nyq:g} Hz)"
        )
    wn = [c / nyq for c in spec.cutoffs]
    btype = {"lowpass": "low", "highpass": "high", "bandpass": "band"}[spec.kind]
    return butter(FILTER_ORDER, wn if len(wn) > 1 else wn[0], btype=btype)


def filter_gain(spec: FilterSpec, sample_rate: float, freqs_hz) -> np.ndarray:
    """Magnitude response of the forward-backward filter at given frequencies.

    The two passes square the single-pass magnitude.
    """
    b, a = _design(spec, sample_rate)
    w = 2.0 * np.pi * np.atleast_1d(np.asarray(freqs_hz, dtype=float)) / sample_rate
    _, h = freqz(b, a, worN=w)
    return np.abs(h) ** 2


def apply_filter(ts: TimeSeries, spec: FilterSpec) -> TimeSeries:
    """Zero-phase Butterworth filtering (4th order, forward-backward).

    Reflect padding keeps the start-up transient away from the impact
    onset. Length and sample rate are preserved.

    Raises
    ------
    InvalidFilterError
        If a cutoff is at or above Nyquist.
    TooShortError
        If the series is shorter than three filter lengths.
    """
    b, a = _design(spec, ts.sample_rate)
    padlen = 3 * max(len(a), len(b))
    if len(ts) <= padlen:
        raise TooShortError(
            f"series of {len(ts)} samples is too short for filtering (need > {padlen})"
        )
    y = filtfilt(b, a, ts.samples, padtype="even", padlen=padlen)
    return ts.with_samples(y)


def band_split(ts: TimeSeries, split_hz: float = 200.0) -> tuple[TimeSeries, TimeSeries]:
    """Split a series into complementary low/high branches at ``split_hz``."""
    if not 0 < split_hz < ts.nyquist:
        raise InvalidFilterError(f"split frequency {split_hz:g} Hz outside (0, Nyquist)")
    low = apply_filter(ts, lowpass(split_hz))
    high = apply_filter(ts, highpass(split_hz))
    return low, high


def segment_impacts(
    force: TimeSeries,
    accel: TimeSeries,
    threshold_frac: float = 0.1,
    window_s: float = 0.15,
) -> list[ImpactSegment]:
    """Cut one window per hammer blow out of an aligned force/accel pair.

    A window of ``window_s`` starts at each force peak exceeding
    ``threshold_frac`` times the record maximum. Windows reaching into
    the next peak are truncated there and flagged.
    """
    if force.sample_rate != accel.sample_rate or len(force) != len(accel):
        raise AlignmentError("force and acceleration records are not aligned")
    if not 0 < threshold_frac < 1:
        raise ValueError("threshold_frac must be in (0, 1)")
    fmax = np.max(force.samples) if len(force) else 0.0
    if fmax <= 0:
        return []
    height = threshold_frac * fmax
    peaks, _ = find_peaks(force.samples, height=height)
    if peaks.size == 0:
        return []

    win = max(int(round(window_s * force.sample_rate)), 2)
    segments = []
    for k, p in enumerate(peaks):
        stop = p + win
        flags = ()
        if k + 1 < peaks.size and peaks[k + 1] < stop:
            stop = int(peaks[k + 1])
            flags = ("truncated",)
            warnings.warn(
                f"impact {k} window truncated at the next peak", stacklevel=2
            )
        stop = min(stop, len(force))
        segments.append(
            ImpactSegment(
                accel_window=accel.slice(p, stop),
                force_window=force.slice(p, stop),
                event_index=k,
                peak_time=force.t0 + p / force.sample_rate,
                flags=flags,
            )
        )
    return segments


def _rms_envelope(x: np.ndarray, n: int) -> np.ndarray:
    """Short-time RMS via a centered moving average of x**2."""
    n = max(n, 1)
    kernel = np.ones(n) / n
    return np.sqrt(np.convolve(x * x, kernel, mode="same"))


def detect_wheel_events(
    accel: TimeSeries,
    min_separation_s: float = 0.05,
    threshold_frac: float = 0.1,
    envelope_s: float = 0.005,
) -> list[ImpactSegment]:
    """Locate wheel excitations in a train-passage acceleration record.

    Events anchor at local maxima of the short-time RMS envelope that
    exceed ``threshold_frac`` of the envelope maximum. Candidates closer
    than ``min_separation_s`` are merged into the strongest one, which
    is flagged. Each window runs to the next event (or record end).
    The record is expected band-pass filtered to the analysis band
    beforehand.
    """
    env = _rms_envelope(accel.samples, int(round(envelope_s * accel.sample_rate)))
    emax = env.max() if env.size else 0.0
    if emax <= 0:
        return []
    candidates, props = find_peaks(env, height=threshold_frac * emax)
    if candidates.size == 0:
        return []

    min_gap = int(round(min_separation_s * accel.sample_rate))
    order = np.argsort(props["peak_heights"])[::-1]
    kept: list[int] = []
    merged: set[int] = set()
    for idx in order:
        p = candidates[idx]
        near = [q for q in kept if abs(q - p) < min_gap]
        if near:
            merged.update(near)
            continue
        kept.append(p)
    kept.sort()

    segments = []
    for k, p in enumerate(kept):
        stop = kept[k + 1] if k + 1 < len(kept) else len(accel)
        flags = ("merged",) if p in merged else ()
        if flags:
            warnings.warn(f"wheel event {k} merged closer candidates", stacklevel=2)
        segments.append(
            ImpactSegment(
                accel_window=accel.slice(p, stop),
                force_window=None,
                event_index=k,
                peak_time=accel.t0 + p / accel.sample_rate,
                flags=flags,
            )
        )
    return segments


def read_record_csv(path) -> tuple[TimeSeries | None, TimeSeries]:
    """Read one sensor-location record.

    Expected columns: ``time_s, force_n, accel`` (``force_n`` optional),
    with a header row. The sample rate is inferred from the first two
    time stamps and checked uniform to 1e-9 s.

    Returns
    -------
    (force, accel) : tuple
        ``force`` is None when the file has no force column.
    """
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise CsvParseError("empty file", line=1) from None
        cols = [c.strip().lower() for c in header]
        if "time_s" not in cols or "accel" not in cols:
            raise CsvParseError(
                "header must contain time_s and accel columns", line=1
            )
        it = cols.index("time_s")
        ia = cols.index("accel")
        has_force = "force_n" in cols
        iff = cols.index("force_n") if has_force else None

        times, forces, accels = [], [], []
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            try:
                times.append(float(row[it]))
                accels.append(float(row[ia]))
                if has_force:
                    forces.append(float(row[iff]))
            except (ValueError, IndexError):
                raise CsvParseError(f"malformed row: {row!r}", line=lineno) from None

    if len(times) < 2:
        raise CsvParseError("need at least two samples", line=len(times) + 1)
    t = np.asarray(times)
    dt = t[1] - t[0]
    if dt <= 0:
        raise CsvParseError("time stamps must increase", line=3)
    if np.max(np.abs(np.diff(t) - dt)) > 1e-9:
        bad = int(np.argmax(np.abs(np.diff(t) - dt))) + 3
        raise CsvParseError("non-uniform sampling beyond 1e-9 s", line=bad)
    fs = 1.0 / dt
    accel = TimeSeries(np.asarray(accels), fs, label="accel", t0=t[0])
    force = (
        TimeSeries(np.asarray(forces), fs, label="force", t0=t[0]) if has_force else None
    )
    return force, accel


def write_record_csv(path, accel: TimeSeries, force: TimeSeries | None = None) -> None:
    """Write a record in the same layout :func:`read_record_csv` ingests."""
    if force is not None and (
        len(force) != len(accel) or force.sample_rate != accel.sample_rate
    ):
        raise AlignmentError("force and acceleration records are not aligned")
    t = accel.times
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        if force is not None:
            w.writerow(["time_s", "force_n", "accel"])
            for i in range(len(accel)):
                w.writerow(
                    [
                        format(t[i], ".9g"),
                        format(force.samples[i], ".9g"),
                        format(accel.samples[i], ".9g"),
                    ]
                )
        else:
            w.writerow(["time_s", "accel"])
            for i in range(len(accel)):
                w.writerow([format(t[i], ".9g"), format(accel.samples[i], ".9g")])
