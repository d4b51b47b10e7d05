"""End-to-end glue: training-set assembly, record-level detection, latency benchmark."""
from __future__ import annotations

import math
import time
from dataclasses import dataclass

import numpy as np

from . import model as M
from .labelgen import NoiseBank, augment_segment, make_target_map, select_augmentable
from .postprocess import Detections, extract_peaks, stitch_windows
from .signal_io import EcgRecord, RPeakAnnotations, rescale_annotations, resample, window_record
from .verify import run_verification


def to_model_rate(record: EcgRecord, ann: RPeakAnnotations | None, fs: float):
    if math.isclose(record.sampling_rate_hz, fs):
        return record, ann
    src = record.sampling_rate_hz
    rec = resample(record, fs)
    if ann is not None:
        ann = rescale_annotations(ann, src, fs)
    return rec, ann


def build_dataset(pairs, config: M.ModelConfig, stride_seconds: float | None = None,
                  augment: M.AugmentConfig | None = None, bank: NoiseBank | None = None,
                  seed: int = 0) -> M.Dataset:
    """Window every ``(record, annotations)`` pair into a training set.

    Each augmentation kind adds ``augment.copies`` noisy copies of every window that
    contains an S or V beat; targets are shared with the clean window.
    """
    segs, targets, aug_segs, aug_targets = [], [], [], []
    kinds = tuple(augment.kinds) if augment else ()
    for r, (record, ann) in enumerate(pairs):
        record, ann = to_model_rate(record, ann, config.sampling_rate_hz)
        windows = window_record(record, config.window_seconds, stride_seconds,
                                multiple=2 ** config.stages)
        for seg in windows:
            segs.append(seg)
            targets.append(make_target_map(ann, seg))
        if not kinds:
            continue
        chosen = {id(s) for s in select_augmentable(windows, ann)}
        for w, seg in enumerate(windows):
            if id(seg) not in chosen:
                continue
            tmap = targets[len(targets) - len(windows) + w]
            for k, kind in enumerate(kinds):
                for c in range(augment.copies):
                    s = int(np.random.default_rng([seed, r, w, k, c]).integers(2 ** 31))
                    aug_segs.append(augment_segment(seg, kind, augment, s, bank))
                    aug_targets.append(tmap)
    ds = M.Dataset.from_pairs(zip(segs, targets))
    if aug_segs:
        ds = ds.concat(M.Dataset.from_pairs(zip(aug_segs, aug_targets)))
    return ds


@dataclass
class DetectTiming:
    segments: int
    network_s: float
    verify_s: float


def detect_record(weights: M.ModelWeights, record: EcgRecord, threshold: float = 0.5,
                  merge_gap: int = 3, verify: bool = False, stride_seconds: float | None = None,
                  batch_size: int = 16, timing: list | None = None) -> Detections:
    """Window, run the network, extract and stitch peaks, optionally verify.

    Returned indices are in the input record's own sampling rate.
    """
    cfg = weights.config
    src_fs = record.sampling_rate_hz
    rec, _ = to_model_rate(record, None, cfg.sampling_rate_hz)
    t0 = time.perf_counter()
    windows = window_record(rec, cfg.window_seconds, stride_seconds, multiple=2 ** cfg.stages)
    probs = M.predict(weights, np.stack([w.samples for w in windows]), batch_size)
    per_window = [extract_peaks(p, threshold, merge_gap, w.valid_length)
                  for p, w in zip(probs, windows)]
    det = stitch_windows(per_window, [w.start_index for w in windows],
                         [w.valid_length for w in windows])
    t1 = time.perf_counter()
    if verify:
        det = run_verification(rec, det)
    t2 = time.perf_counter()
    if timing is not None:
        timing.append(DetectTiming(len(windows), t1 - t0, t2 - t1))
    if not math.isclose(src_fs, cfg.sampling_rate_hz):
        idx = np.floor(det.peak_indices * (src_fs / cfg.sampling_rate_hz) + 0.5).astype(np.int64)
        idx = np.minimum(idx, len(record) - 1)
        keep = np.concatenate([[True], np.diff(idx) > 0]) if idx.size else np.zeros(0, bool)
        det = Detections(idx[keep], det.scores[keep])
    return det


@dataclass
class BenchResult:
    segments: int
    network_mean_ms: float
    network_p95_ms: float
    verify_mean_ms: float
    verify_p95_ms: float
    pt_mean_ms: float

    @property
    def total_mean_ms(self) -> float:
        return self.network_mean_ms + self.verify_mean_ms

    @property
    def verify_fraction(self) -> float:
        return self.verify_mean_ms / self.total_mean_ms if self.total_mean_ms else 0.0


def bench(weights: M.ModelWeights, segments, threshold: float = 0.5) -> BenchResult:
    """Per-segment latency of network inference (incl. peak extraction) and verification.

    ``segments`` are :class:`EcgRecord` objects one window long; each runs alone
    (batch of one), as a streaming detector would.
    """
    from .baseline_pt import pt_detect

    net, ver, pt = [], [], []
    for rec in segments:
        timing = []
        detect_record(weights, rec, threshold, verify=True, batch_size=1, timing=timing)
        net.append(timing[0].network_s)
        ver.append(timing[0].verify_s)
        t0 = time.perf_counter()
        pt_detect(rec)
        pt.append(time.perf_counter() - t0)
    def ms(a, q=None):
        return 1000 * float(np.mean(a) if q is None else np.percentile(a, q))

    return BenchResult(len(net), ms(net), ms(net, 95), ms(ver), ms(ver, 95), ms(pt))
