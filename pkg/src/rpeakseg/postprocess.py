"""Probability map to discrete R-peak detections."""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import FormatError

STITCH_DEDUP_SAMPLES = 5


@dataclass
class Detections:
    """Sorted peak indices with per-peak probability scores."""
    peak_indices: np.ndarray
    scores: np.ndarray

    def __post_init__(self):
        self.peak_indices = np.asarray(self.peak_indices, dtype=np.int64).reshape(-1)
        self.scores = np.asarray(self.scores, dtype=float).reshape(-1)
        if self.peak_indices.shape != self.scores.shape:
            raise ValueError("peak_indices and scores differ in length")

    def __len__(self):
        return self.peak_indices.size

    @classmethod
    def empty(cls) -> "Detections":
        return cls(np.zeros(0, np.int64), np.zeros(0))

    def subset(self, keep) -> "Detections":
        return Detections(self.peak_indices[keep], self.scores[keep])


def extract_peaks(prob, threshold: float = 0.5, merge_gap_samples: int = 3,
                  valid_length: int | None = None) -> Detections:
    """One detection per above-threshold region, located at the region's maximum.

    Regions separated by at most ``merge_gap_samples`` below-threshold samples merge.
    """
    if not 0.0 < threshold < 1.0:
        raise ValueError(f"threshold must be in (0, 1), got {threshold}")
    prob = np.asarray(prob, dtype=float)
    if valid_length is not None:
        prob = prob[:valid_length]
    above = prob > threshold
    if not above.any():
        return Detections.empty()
    edges = np.diff(np.concatenate([[0], above.astype(np.int8), [0]]))
    starts = np.nonzero(edges == 1)[0]
    ends = np.nonzero(edges == -1)[0]  # exclusive
    gaps = starts[1:] - ends[:-1]
    split = np.concatenate([[True], gaps > merge_gap_samples])
    group_starts = starts[split]
    group_ends = np.concatenate([ends[:-1][split[1:]], [ends[-1]]])
    peaks, scores = [], []
    for s, e in zip(group_starts, group_ends):
        i = s + int(np.argmax(prob[s:e]))
        peaks.append(i)
        scores.append(prob[i])
    return Detections(np.array(peaks), np.array(scores))


def stitch_windows(per_window, offsets, valid_lengths=None,
                   dedup_samples: int = STITCH_DEDUP_SAMPLES) -> Detections:
    """Shift window-local detections to record coordinates and merge overlaps.

    Detections at or beyond a window's valid length (its zero padding) are dropped.
    Detections from different windows within ``dedup_samples`` of each other are
    collapsed to the higher-scoring one.
    """
    idx_parts, score_parts, win_parts = [], [], []
    for w, (det, off) in enumerate(zip(per_window, offsets)):
        keep = np.ones(len(det), bool)
        if valid_lengths is not None:
            keep = det.peak_indices < valid_lengths[w]
        idx_parts.append(det.peak_indices[keep] + int(off))
        score_parts.append(det.scores[keep])
        win_parts.append(np.full(keep.sum(), w))
    if not idx_parts:
        return Detections.empty()
    idx = np.concatenate(idx_parts)
    scores = np.concatenate(score_parts)
    wins = np.concatenate(win_parts)
    order = np.lexsort((-scores, idx))
    idx, scores, wins = idx[order], scores[order], wins[order]
    out_i, out_s, out_w = [], [], []
    for i, s, w in zip(idx.tolist(), scores.tolist(), wins.tolist()):
        if out_i and i - out_i[-1] <= dedup_samples and w != out_w[-1]:
            if s > out_s[-1]:
                out_i[-1], out_s[-1], out_w[-1] = i, s, w
            continue
        if out_i and i == out_i[-1]:
            continue
        out_i.append(i)
        out_s.append(s)
        out_w.append(w)
    return Detections(np.array(out_i, dtype=np.int64), np.array(out_s))


def write_detections_csv(det: Detections, path) -> Path:
    path = Path(path)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("peak_index,score\n")
        for i, s in zip(det.peak_indices.tolist(), det.scores.tolist()):
            fh.write(f"{i},{s:.6f}\n")
    return path


def read_detections_csv(path) -> Detections:
    path = Path(path)
    idx, scores = [], []
    for lineno, raw in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        line = raw.strip()
        if not line or (lineno == 1 and line.startswith("peak_index")):
            continue
        parts = line.split(",")
        try:
            idx.append(int(parts[0]))
            scores.append(float(parts[1]) if len(parts) > 1 else 1.0)
        except ValueError:
            raise FormatError(f"{path}:{lineno}: cannot parse {raw!r}") from None
    if any(b <= a for a, b in zip(idx, idx[1:])):
        raise FormatError(f"{path}: detection indices must be strictly increasing")
    return Detections(np.array(idx, dtype=np.int64), np.array(scores))
