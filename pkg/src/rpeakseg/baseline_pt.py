"""Classical Pan-Tompkins QRS detector (comparison baseline).

The filter chain runs at 200 Hz (the rate its integer-coefficient filters were designed
for); detections are mapped back to the record's rate and snapped to the local
extremum of the raw signal.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.signal import find_peaks, lfilter

from .errors import ConfigError
from .postprocess import Detections
from .signal_io import EcgRecord, resample

FS_INTERNAL = 200.0

# Every tunable number of the detector lives here.
PT_CONSTANTS = {
    "lowpass_b": [1, 0, 0, 0, 0, 0, -2, 0, 0, 0, 0, 0, 1],
    "lowpass_a": [1, -2, 1],
    "lowpass_delay": 5,
    "highpass_delay": 16,
    "derivative_delay": 2,
    "mwi_samples": 30,            # 150 ms at 200 Hz
    "learning_s": 2.0,
    "refractory_s": 0.200,
    "t_wave_window_s": 0.360,
    "t_wave_slope_ratio": 0.5,
    "spk_weight": 0.125,          # SPK = 0.125 PEAK + 0.875 SPK
    "npk_weight": 0.125,
    "searchback_weight": 0.25,    # SPK = 0.25 PEAK + 0.75 SPK on search-back
    "threshold_fraction": 0.25,   # TH1 = NPK + 0.25 (SPK - NPK)
    "threshold2_ratio": 0.5,      # TH2 = 0.5 TH1
    "rr_low": 0.92,
    "rr_high": 1.16,
    "rr_missed": 1.66,
    "rr_history": 8,
    "refine_s": 0.040,
    "baseline_s": 0.200,
    "min_fs": 200.0,
    "max_fs": 1000.0,
}


def _highpass_coeffs():
    # y(n) = x(n-16) - (1/32) * sum_{k=0..31} x(n-k), in recursive form
    b = np.zeros(33)
    b[16], b[17] = 1.0, -1.0
    b[0] -= 1 / 32
    b[32] += 1 / 32
    return b, np.array([1.0, -1.0])


@dataclass
class PtState:
    spki: float
    npki: float
    spkf: float
    npkf: float
    rr_recent: list = field(default_factory=list)
    rr_selected: list = field(default_factory=list)
    rr_avg1: float = 1.0
    rr_avg2: float = 1.0
    last_qrs: int | None = None
    last_slope: float = 0.0

    def thresholds(self, c):
        ti1 = self.npki + c["threshold_fraction"] * (self.spki - self.npki)
        tf1 = self.npkf + c["threshold_fraction"] * (self.spkf - self.npkf)
        return ti1, c["threshold2_ratio"] * ti1, tf1, c["threshold2_ratio"] * tf1

    def add_rr(self, rr: float, c) -> None:
        n = c["rr_history"]
        self.rr_recent = (self.rr_recent + [rr])[-n:]
        self.rr_avg1 = float(np.mean(self.rr_recent))
        if not self.rr_selected or c["rr_low"] * self.rr_avg2 <= rr <= c["rr_high"] * self.rr_avg2:
            self.rr_selected = (self.rr_selected + [rr])[-n:]
            self.rr_avg2 = float(np.mean(self.rr_selected))


def pt_filter_chain(x200, c=PT_CONSTANTS):
    """Band-passed, differentiated and integrated signals at 200 Hz."""
    lp = lfilter(c["lowpass_b"], c["lowpass_a"], x200)
    hb, ha = _highpass_coeffs()
    bp = lfilter(hb, ha, lp)
    deriv = lfilter(np.array([2, 1, 0, -1, -2]) / 8.0, [1.0], bp)
    mwi = lfilter(np.ones(c["mwi_samples"]) / c["mwi_samples"], [1.0], deriv ** 2)
    return bp, deriv, mwi


def pt_detect(record: EcgRecord, constants=None) -> Detections:
    """Run the detector; every detection carries score 1.0."""
    c = dict(PT_CONSTANTS, **(constants or {}))
    fs = record.sampling_rate_hz
    if not c["min_fs"] <= fs <= c["max_fs"]:
        raise ConfigError(f"Pan-Tompkins supports {c['min_fs']:g}-{c['max_fs']:g} Hz, got {fs:g}")
    raw = record.samples - np.median(record.samples)
    scale = np.max(np.abs(raw))
    if scale == 0.0:
        return Detections.empty()
    x200 = resample(EcgRecord(record.record_id, fs, raw / scale), FS_INTERNAL).samples
    bp, deriv, mwi = pt_filter_chain(x200, c)
    if np.max(np.abs(bp)) < 1e-9:
        return Detections.empty()

    qrs200 = _decide(bp, deriv, mwi, c)
    return _refine(record, qrs200, c)


def _decide(bp, deriv, mwi, c) -> list:
    fs = FS_INTERNAL
    n_mwi = c["mwi_samples"]
    refractory = int(round(c["refractory_s"] * fs))
    bp_delay = c["lowpass_delay"] + c["highpass_delay"]
    abs_bp = np.abs(bp)

    learn = slice(0, min(len(mwi), int(c["learning_s"] * fs)))
    state = PtState(spki=mwi[learn].max() / 3, npki=mwi[learn].mean() / 2,
                    spkf=abs_bp[learn].max() / 3, npkf=abs_bp[learn].mean() / 2)

    candidates, _ = find_peaks(mwi, distance=refractory)

    def features(m):
        lo = max(0, m - n_mwi)
        k = lo + int(np.argmax(abs_bp[lo:m + 1]))
        slope = float(np.max(np.abs(deriv[lo:m + 1])))
        return k, abs_bp[k], slope

    qrs = []  # (mwi index, bp index)
    noise_since_qrs = []  # (mwi index, bp index, peak_i, peak_f, slope)

    def accept(m, k, peak_i, peak_f, slope, weight):
        state.spki = weight * peak_i + (1 - weight) * state.spki
        state.spkf = weight * peak_f + (1 - weight) * state.spkf
        if state.last_qrs is not None:
            state.add_rr((m - state.last_qrs) / fs, c)
        state.last_qrs = m
        state.last_slope = slope
        qrs.append((m, k))
        noise_since_qrs.clear()

    for m in candidates:
        peak_i = mwi[m]
        k, peak_f, slope = features(m)
        ti1, ti2, tf1, tf2 = state.thresholds(c)

        if state.last_qrs is not None and len(state.rr_selected) >= 1:
            missed = c["rr_missed"] * state.rr_avg2 * fs
            if m - state.last_qrs > missed:
                best = None
                for cand in noise_since_qrs:
                    cm, ck, ci, cf, cs = cand
                    if cm - state.last_qrs < refractory:
                        continue
                    if ci > ti2 and cf > tf2 and (best is None or ci > best[2]):
                        best = cand
                if best is not None:
                    accept(best[0], best[1], best[2], best[3], best[4], c["searchback_weight"])
                    ti1, ti2, tf1, tf2 = state.thresholds(c)

        if state.last_qrs is not None and m - state.last_qrs < refractory:
            continue
        if peak_i > ti1 and peak_f > tf1:
            if (state.last_qrs is not None
                    and m - state.last_qrs < c["t_wave_window_s"] * fs
                    and slope < c["t_wave_slope_ratio"] * state.last_slope):
                state.npki = c["npk_weight"] * peak_i + (1 - c["npk_weight"]) * state.npki
                state.npkf = c["npk_weight"] * peak_f + (1 - c["npk_weight"]) * state.npkf
                continue
            accept(m, k, peak_i, peak_f, slope, c["spk_weight"])
        else:
            state.npki = c["npk_weight"] * peak_i + (1 - c["npk_weight"]) * state.npki
            state.npkf = c["npk_weight"] * peak_f + (1 - c["npk_weight"]) * state.npkf
            noise_since_qrs.append((m, k, peak_i, peak_f, slope))

    return [k - bp_delay for _, k in qrs]


def _refine(record: EcgRecord, qrs200, c) -> Detections:
    fs = record.sampling_rate_hz
    x = record.samples
    n = x.size
    half = max(1, int(round(c["refine_s"] * fs)))
    base_half = max(1, int(round(c["baseline_s"] * fs)))
    refractory = c["refractory_s"] * fs
    peaks = []
    for p200 in qrs200:
        p = int(round(p200 * fs / FS_INTERNAL))
        if p < 0 or p >= n:
            continue
        lo, hi = max(0, p - half), min(n, p + half + 1)
        base = x[max(0, p - base_half):min(n, p + base_half + 1)].mean()
        r = lo + int(np.argmax(np.abs(x[lo:hi] - base)))
        if peaks and r - peaks[-1] < refractory:
            continue
        peaks.append(r)
    return Detections(np.array(peaks, dtype=np.int64), np.ones(len(peaks)))
