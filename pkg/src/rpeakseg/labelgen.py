"""Segmentation targets from R-peak annotations, plus training-set augmentation."""
from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DataError
from .signal_io import RPeakAnnotations, SegmentView, read_signal_csv

PULSE_HALF_WIDTH = 2  # pulse covers p-2 .. p+2
ARRHYTHMIA_TYPES = ("S", "V")


@dataclass
class TargetMap:
    labels: np.ndarray
    valid_length: int


def peaks_in_segment(peaks: RPeakAnnotations, segment: SegmentView):
    """Window-local indices (and beat types) of peaks inside the segment's valid span."""
    lo = segment.start_index
    hi = lo + segment.valid_length
    idx = peaks.peak_indices
    sel = np.nonzero((idx >= lo) & (idx < hi))[0]
    return idx[sel] - lo, [peaks.beat_types[i] for i in sel]


def make_target_map(peaks: RPeakAnnotations, segment: SegmentView) -> TargetMap:
    """Binary map with a 5-sample pulse centred on each in-window R-peak."""
    n = segment.window_samples
    labels = np.zeros(n, dtype=np.uint8)
    local, _ = peaks_in_segment(peaks, segment)
    for p in local:
        labels[max(0, p - PULSE_HALF_WIDTH):min(segment.valid_length, p + PULSE_HALF_WIDTH + 1)] = 1
    return TargetMap(labels, segment.valid_length)


def _valid(segment: SegmentView) -> np.ndarray:
    return np.asarray(segment.samples[:segment.valid_length], dtype=float)


def _finish(segment: SegmentView, valid: np.ndarray) -> SegmentView:
    out = np.array(segment.samples, dtype=float, copy=True)
    out[:segment.valid_length] = np.clip(valid, -1.0, 1.0)
    return segment.replace_samples(out)


def augment_gaussian(segment: SegmentView, sigma_range=(0.01, 0.1), rng_seed=0) -> SegmentView:
    """Add white noise with a standard deviation drawn uniformly from ``sigma_range``."""
    rng = np.random.default_rng(rng_seed)
    sigma = rng.uniform(*sigma_range)
    x = _valid(segment)
    return _finish(segment, x + rng.normal(0.0, sigma, x.size))


def augment_sinusoid(segment: SegmentView, amp_range=(0.05, 0.3), freq_range_hz=(0.1, 0.7),
                     rng_seed=0) -> SegmentView:
    """Add ``A sin(2 pi f t + phi)`` baseline drift with random amplitude, frequency and phase."""
    rng = np.random.default_rng(rng_seed)
    amp = rng.uniform(*amp_range)
    freq = rng.uniform(*freq_range_hz)
    phase = rng.uniform(0.0, 2 * math.pi)
    x = _valid(segment)
    t = np.arange(x.size) / segment.sampling_rate_hz
    return _finish(segment, x + amp * np.sin(2 * math.pi * freq * t + phase))


@dataclass
class NoiseBank:
    records: dict

    def __post_init__(self):
        if not self.records:
            raise DataError("noise bank is empty")

    @classmethod
    def from_dir(cls, path, fs: float | None = None) -> "NoiseBank":
        files = sorted(Path(path).glob("*.csv"))
        return cls({f.stem: read_signal_csv(f, fs=fs) for f in files})

    @property
    def names(self) -> list:
        return sorted(self.records)


def noise_excerpt(segment: SegmentView, bank: NoiseBank, snr_db: float, rng_seed=0) -> np.ndarray:
    """Zero-mean noise excerpt scaled so that var(signal) / mean(noise**2) = 10**(snr_db/10).

    Signal power is taken over the segment's valid span with its mean removed, so the
    DC level left by normalization does not count as signal.
    """
    n = segment.valid_length
    if math.isinf(snr_db) and snr_db > 0:
        return np.zeros(n)
    rng = np.random.default_rng(rng_seed)
    name = bank.names[rng.integers(len(bank.records))]
    rec = bank.records[name]
    if not math.isclose(rec.sampling_rate_hz, segment.sampling_rate_hz):
        raise DataError(f"noise record {name!r} at {rec.sampling_rate_hz} Hz, "
                        f"segment at {segment.sampling_rate_hz} Hz")
    if len(rec) < n:
        raise DataError(f"noise record {name!r} ({len(rec)} samples) shorter than segment ({n})")
    start = rng.integers(0, len(rec) - n + 1)
    noise = rec.samples[start:start + n] - rec.samples[start:start + n].mean()
    p_noise = float(np.mean(noise ** 2))
    p_signal = float(np.var(_valid(segment)))
    if p_noise == 0.0 or p_signal == 0.0:
        return np.zeros(n)
    return noise * math.sqrt(p_signal / (p_noise * 10 ** (snr_db / 10)))


def augment_noise_mix(segment: SegmentView, bank: NoiseBank, snr_db: float, rng_seed=0) -> SegmentView:
    """Mix a random recorded-noise excerpt in at the requested SNR (``inf`` = no noise)."""
    return _finish(segment, _valid(segment) + noise_excerpt(segment, bank, snr_db, rng_seed))


def select_augmentable(segments, annotations: RPeakAnnotations) -> list:
    """Segments containing at least one S or V beat."""
    chosen = []
    for seg in segments:
        _, types = peaks_in_segment(annotations, seg)
        if any(t in ARRHYTHMIA_TYPES for t in types):
            chosen.append(seg)
    return chosen


def augment_segment(segment: SegmentView, kind: str, settings, seed: int,
                    bank: NoiseBank | None = None) -> SegmentView:
    """Apply one named recipe (``gauss``, ``sine`` or ``noisebank``) with ``settings`` ranges."""
    if kind == "gauss":
        return augment_gaussian(segment, settings.sigma_range, seed)
    if kind == "sine":
        return augment_sinusoid(segment, settings.amp_range, settings.freq_range_hz, seed)
    if kind == "noisebank":
        if bank is None:
            raise DataError("noisebank augmentation requested without a noise bank")
        snr = np.random.default_rng([seed, 1]).uniform(*settings.snr_db_range)
        return augment_noise_mix(segment, bank, snr, seed)
    raise ValueError(f"unknown augmentation {kind!r}")

