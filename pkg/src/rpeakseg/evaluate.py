"""Tolerance matching of detections against ground truth, and detection metrics."""
from __future__ import annotations

import csv
import dataclasses
import json
from bisect import bisect_left
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .signal_io import RPeakAnnotations

REPORT_FIELDS = ("tp", "fn", "fp", "recall_pct", "precision_pct", "f1_pct",
                 "s_missed", "v_missed", "tolerance_ms")
PLOT_FIELDS = ("sample_index", "amplitude", "truth_flag", "pred_flag")


@dataclass
class MatchResult:
    tp_pairs: list          # (truth position, prediction position) into the input arrays
    fn_truth: list          # truth positions left unmatched
    fp_pred: list           # prediction positions left unmatched


@dataclass
class EvalReport:
    tp: int
    fn: int
    fp: int
    recall_pct: float
    precision_pct: float
    f1_pct: float
    s_missed: int = 0
    v_missed: int = 0
    tolerance_ms: float = 75.0

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def __add__(self, other: "EvalReport") -> "EvalReport":
        return build_report(self.tp + other.tp, self.fn + other.fn, self.fp + other.fp,
                            self.s_missed + other.s_missed, self.v_missed + other.v_missed,
                            self.tolerance_ms)


def tolerance_samples(tolerance_ms: float, fs: float) -> int:
    return int(round(tolerance_ms * fs / 1000.0))


def match_detections(truth, preds, tolerance_ms: float = 75.0, fs: float = 400.0) -> MatchResult:
    """Greedy chronological one-to-one matching.

    Predictions are visited in time order; each takes the nearest still-unmatched
    truth within ``round(tolerance_ms * fs / 1000)`` samples (inclusive), ties going
    to the earlier truth.
    """
    t = np.asarray(getattr(truth, "peak_indices", truth), dtype=np.int64)
    p = np.asarray(getattr(preds, "peak_indices", preds), dtype=np.int64)
    tol = tolerance_samples(tolerance_ms, fs)
    t_list = t.tolist()
    used = [False] * len(t_list)
    tp, fp = [], []
    for j, pj in enumerate(p.tolist()):
        lo = bisect_left(t_list, pj - tol)
        best, best_d = None, None
        i = lo
        while i < len(t_list) and t_list[i] <= pj + tol:
            if not used[i]:
                d = abs(t_list[i] - pj)
                if best is None or d < best_d:
                    best, best_d = i, d
            i += 1
        if best is None:
            fp.append(j)
        else:
            used[best] = True
            tp.append((best, j))
    fn = [i for i, u in enumerate(used) if not u]
    return MatchResult(tp, fn, fp)


def compute_metrics(tp: int, fn: int, fp: int):
    """Recall, precision and F1 in percent; a zero denominator gives 0."""
    recall = 100.0 * tp / (tp + fn) if tp + fn > 0 else 0.0
    precision = 100.0 * tp / (tp + fp) if tp + fp > 0 else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
    return recall, precision, f1


def per_class_missed(fn_truth, beat_types):
    types = [beat_types[i] for i in fn_truth]
    return types.count("S"), types.count("V")


def build_report(tp, fn, fp, s_missed=0, v_missed=0, tolerance_ms=75.0) -> EvalReport:
    r, p, f = compute_metrics(tp, fn, fp)
    return EvalReport(int(tp), int(fn), int(fp), r, p, f, int(s_missed), int(v_missed),
                      float(tolerance_ms))


def evaluate(truth: RPeakAnnotations, preds, fs: float, tolerance_ms: float = 75.0) -> EvalReport:
    m = match_detections(truth, preds, tolerance_ms, fs)
    s, v = per_class_missed(m.fn_truth, truth.beat_types)
    return build_report(len(m.tp_pairs), len(m.fn_truth), len(m.fp_pred), s, v, tolerance_ms)


def emit_report(report: EvalReport, path, fmt: str = "json") -> Path:
    """Write the report as JSON (object) or CSV (header ``REPORT_FIELDS`` + one row)."""
    path = Path(path)
    d = report.to_dict()
    if fmt == "json":
        path.write_text(json.dumps(d, indent=2) + "\n", encoding="utf-8")
    elif fmt == "csv":
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.DictWriter(fh, fieldnames=REPORT_FIELDS)
            w.writeheader()
            w.writerow(d)
    else:
        raise ValueError(f"unknown report format {fmt!r}")
    return path


def load_report(path) -> EvalReport:
    path = Path(path)
    if path.suffix == ".csv":
        with open(path, newline="", encoding="utf-8") as fh:
            row = next(csv.DictReader(fh))
        kinds = {f.name: f.type for f in dataclasses.fields(EvalReport)}
        return EvalReport(**{k: (int(v) if kinds[k] in (int, "int") else float(v))
                             for k, v in row.items()})
    return EvalReport(**json.loads(path.read_text(encoding="utf-8")))


def write_plot_data(samples, truth, preds, path) -> Path:
    """One row per sample: index, amplitude, and 0/1 flags for truth and prediction."""
    samples = np.asarray(samples, dtype=float)
    n = samples.size
    tflag = np.zeros(n, dtype=np.int8)
    pflag = np.zeros(n, dtype=np.int8)
    for arr, flag in ((getattr(truth, "peak_indices", truth), tflag),
                      (getattr(preds, "peak_indices", preds), pflag)):
        idx = np.asarray(arr, dtype=np.int64)
        flag[idx[(idx >= 0) & (idx < n)]] = 1
    path = Path(path)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(PLOT_FIELDS)
        for i in range(n):
            w.writerow((i, repr(float(samples[i])), int(tflag[i]), int(pflag[i])))
    return path
