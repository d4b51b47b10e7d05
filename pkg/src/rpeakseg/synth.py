"""Template-sum synthetic ECG with exact R-peak ground truth."""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np
from scipy.signal import lfilter

from .signal_io import EcgRecord, RPeakAnnotations


@dataclass
class SynthConfig:
    duration_s: float = 60.0
    fs_hz: float = 400.0
    heart_rate_bpm: float = 60.0
    rr_jitter_s: float = 0.0          # std of Gaussian RR jitter
    qrs_width_ms: float = 90.0        # ~ +/-3 sigma of the QRS Gaussian
    qrs_amplitude: float = 1.0
    p_amplitude: float = 0.15
    t_amplitude: float = 0.3
    s_rate: float = 0.0
    v_rate: float = 0.0
    noise_sigma: float = 0.0          # white noise std (same units as qrs_amplitude)
    baseline_wander_amp: float = 0.0
    baseline_wander_hz: float = 0.25
    seed: int = 0
    record_id: str = "synth"

    def __post_init__(self):
        if self.fs_hz <= 0 or self.duration_s <= 0 or self.heart_rate_bpm <= 0:
            raise ValueError("fs_hz, duration_s and heart_rate_bpm must be positive")
        for name in ("s_rate", "v_rate"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must be in [0, 1]")
        if self.s_rate + self.v_rate > 1.0:
            raise ValueError("s_rate + v_rate must not exceed 1")

    def replace(self, **kw) -> "SynthConfig":
        return dataclasses.replace(self, **kw)


def _bump(t, center, sigma, amp):
    return amp * np.exp(-0.5 * ((t - center) / sigma) ** 2)


def beat_template(kind: str, fs: float, cfg: SynthConfig):
    """``(offsets, waveform)`` for one beat centred at offset 0 (the R-peak)."""
    half = int(round(0.45 * fs))
    t = np.arange(-half, half + 1) / fs
    sigma = cfg.qrs_width_ms / 6000.0
    if kind == "V":
        wave = _bump(t, 0.0, 2 * sigma, -1.5 * cfg.qrs_amplitude)
        wave += _bump(t, 0.30, 0.06, 0.4 * cfg.qrs_amplitude)
    else:
        width = 0.85 * sigma if kind == "S" else sigma
        wave = _bump(t, 0.0, width, cfg.qrs_amplitude)
        wave += _bump(t, -0.16, 0.025, cfg.p_amplitude)
        wave += _bump(t, 0.25, 0.04, cfg.t_amplitude)
    return np.arange(-half, half + 1), wave


def generate(config: SynthConfig):
    """Return ``(EcgRecord, RPeakAnnotations)``.

    Beats sit on an RR grid (mean RR from the heart rate, optional jitter).  An S-like
    beat arrives 20-40 % early with a slightly narrower QRS; a V-like beat has a
    2x wider, inverted, larger QRS and no P wave.  Annotations are the integer
    template centres, so ground truth is exact.
    """
    rng = np.random.default_rng(config.seed)
    fs = config.fs_hz
    n = int(round(config.duration_s * fs))
    rr_mean = 60.0 / config.heart_rate_bpm
    signal = np.zeros(n)
    peaks, types = [], []
    templates = {k: beat_template(k, fs, config) for k in ("N", "S", "V")}

    t = 0.5 * rr_mean
    prev = None
    while True:
        u = rng.random()
        kind = "V" if u < config.v_rate else ("S" if u < config.v_rate + config.s_rate else "N")
        if prev is not None:
            jitter = rng.normal(0.0, config.rr_jitter_s) if config.rr_jitter_s > 0 else 0.0
            step = max(0.3 * rr_mean, rr_mean + jitter)
            if kind == "S":
                step *= 1.0 - rng.uniform(0.2, 0.4)
            t = prev + step
        idx = int(round(t * fs))
        if idx >= n:
            break
        offsets, wave = templates[kind]
        pos = idx + offsets
        ok = (pos >= 0) & (pos < n)
        signal[pos[ok]] += wave[ok]
        peaks.append(idx)
        types.append(kind)
        prev = t

    time = np.arange(n) / fs
    if config.baseline_wander_amp > 0:
        phase = rng.uniform(0, 2 * np.pi)
        signal += config.baseline_wander_amp * np.sin(2 * np.pi * config.baseline_wander_hz * time + phase)
    if config.noise_sigma > 0:
        signal += rng.normal(0.0, config.noise_sigma, n)
    record = EcgRecord(config.record_id, fs, signal)
    return record, RPeakAnnotations(np.array(peaks, dtype=np.int64), types)


def generate_noise(kind: str, duration_s: float, fs: float = 400.0, seed: int = 0) -> EcgRecord:
    """Stand-in noise-stress recordings: ``bw`` (baseline wander), ``ma`` (muscle),
    ``em`` (electrode motion: band-limited bursts with step transients)."""
    rng = np.random.default_rng(seed)
    n = int(round(duration_s * fs))
    t = np.arange(n) / fs
    if kind == "bw":
        x = sum(rng.uniform(0.3, 1.0) * np.sin(2 * np.pi * rng.uniform(0.05, 0.6) * t + rng.uniform(0, 6.3))
                for _ in range(4))
        x = x + np.cumsum(rng.normal(0, 0.01, n))
    elif kind == "ma":
        x = _bandlimited(rng.normal(size=n), fs, 5.0, 40.0)
    elif kind == "em":
        x = _bandlimited(rng.normal(size=n), fs, 1.0, 15.0)
        env = np.repeat(rng.uniform(0.2, 2.0, n // int(fs) + 1), int(fs))[:n]
        x = x * env
        kicks = (rng.random(n) < 0.5 / fs) * rng.normal(0, 3.0, n)
        x = x + lfilter([1.0], [1.0, -np.exp(-1.0 / (0.3 * fs))], kicks)
    else:
        raise ValueError(f"unknown noise kind {kind!r}")
    x = np.asarray(x, dtype=float)
    x = x - x.mean()
    return EcgRecord(kind, fs, x / (x.std() or 1.0))


def _bandlimited(white, fs, lo, hi):
    spec = np.fft.rfft(white)
    f = np.fft.rfftfreq(white.size, 1 / fs)
    spec[(f < lo) | (f > hi)] = 0
    return np.fft.irfft(spec, white.size)
