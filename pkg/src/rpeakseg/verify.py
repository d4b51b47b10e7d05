"""False-alarm removal for closely spaced detections by beat-morphology similarity.

When two detections fall closer than 300 ms, each is compared against the nearest
confident beat before and after the pair; the less similar one is dropped.
"""
from __future__ import annotations

import numpy as np

from .postprocess import Detections

PAIR_WINDOW_MS = 300.0
BEAT_WINDOW_MS = 150.0  # 60 samples at 400 Hz
REFERENCE_SCORE = 0.5


def pearson(x, y) -> float:
    """Population Pearson correlation; 0 when either input is constant."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape or x.size < 2:
        raise ValueError("pearson needs two equal-length sequences of length >= 2")
    xc = x - x.mean()
    yc = y - y.mean()
    sx = np.sqrt(np.mean(xc * xc))
    sy = np.sqrt(np.mean(yc * yc))
    if sx == 0.0 or sy == 0.0:
        return 0.0
    return float(np.clip(np.mean(xc * yc) / (sx * sy), -1.0, 1.0))


def beat_window_samples(fs: float) -> int:
    return max(2, int(round(BEAT_WINDOW_MS * fs / 1000.0)))


def beat_window(samples, center: int, width: int) -> np.ndarray:
    """``width`` samples with ``center`` at position ``width // 2``; edges repeat the end value."""
    samples = np.asarray(samples, dtype=float)
    lo = center - width // 2
    idx = np.clip(np.arange(lo, lo + width), 0, samples.size - 1)
    return samples[idx]


def find_close_pairs(det: Detections, sampling_rate_hz: float, window_ms: float = PAIR_WINDOW_MS):
    """Indices ``(i, i + 1)`` of adjacent detections less than ``window_ms`` apart."""
    if len(det) < 2:
        return []
    limit = window_ms * sampling_rate_hz / 1000.0
    gaps = np.diff(det.peak_indices)
    return [(int(i), int(i) + 1) for i in np.nonzero(gaps < limit)[0]]


def select_references(det: Detections, pair, score_threshold: float = REFERENCE_SCORE):
    """Nearest detection before and after ``pair`` scoring above ``score_threshold``.

    Returns ``(prev_index, next_index)`` or None if either side has no candidate.
    """
    first, second = pair
    prev = next_ = None
    for j in range(first - 1, -1, -1):
        if det.scores[j] > score_threshold:
            prev = j
            break
    for j in range(second + 1, len(det)):
        if det.scores[j] > score_threshold:
            next_ = j
            break
    if prev is None or next_ is None:
        return None
    return prev, next_


def similarity_scores(samples, det: Detections, pair, refs, width: int):
    beats = [beat_window(samples, int(det.peak_indices[i]), width) for i in (*pair, *refs)]
    b1, b2, bp, bn = beats
    return (pearson(b1, bp) * pearson(b1, bn), pearson(b2, bp) * pearson(b2, bn))


def verify_pair(samples, det: Detections, pair, refs, width: int) -> int:
    """Index (into ``det``) of the pair member to remove.

    The member with the lower similarity score goes; ties fall to the lower detection
    score, then to the later beat.
    """
    s1, s2 = similarity_scores(samples, det, pair, refs, width)
    first, second = pair
    if s1 < s2:
        return first
    if s2 < s1:
        return second
    if det.scores[first] < det.scores[second]:
        return first
    return second


def run_verification(record, det: Detections, window_ms: float = PAIR_WINDOW_MS,
                     score_threshold: float = REFERENCE_SCORE) -> Detections:
    """Resolve close pairs left to right, one removal per pair, until none can be resolved.

    Pairs lacking a reference beat on either side are left untouched.  Removing a beat
    never creates a reference, so pairs already skipped stay skipped and the scan only
    steps back one position after each removal.
    """
    samples = np.asarray(record.samples, dtype=float)
    fs = record.sampling_rate_hz
    width = beat_window_samples(fs)
    limit = window_ms * fs / 1000.0
    current = det.subset(slice(None))
    i = 0
    while i < len(current) - 1:
        if current.peak_indices[i + 1] - current.peak_indices[i] >= limit:
            i += 1
            continue
        refs = select_references(current, (i, i + 1), score_threshold)
        if refs is None:
            i += 1
            continue
        loser = verify_pair(samples, current, (i, i + 1), refs, width)
        current = current.subset(np.arange(len(current)) != loser)
        i = max(i - 1, 0)
    return current
