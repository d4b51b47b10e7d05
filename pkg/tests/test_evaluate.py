import csv
import json
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from rpeakseg.evaluate import (
    PLOT_FIELDS,
    REPORT_FIELDS,
    build_report,
    compute_metrics,
    emit_report,
    evaluate,
    load_report,
    match_detections,
    per_class_missed,
    tolerance_samples,
    write_plot_data,
)
from rpeakseg.signal_io import RPeakAnnotations


def exact_metrics(tp, fn, fp):
    """Rational-arithmetic oracle."""
    r = Fraction(100 * tp, tp + fn) if tp + fn else Fraction(0)
    p = Fraction(100 * tp, tp + fp) if tp + fp else Fraction(0)
    f = 2 * p * r / (p + r) if p + r else Fraction(0)
    return float(r), float(p), float(f)


def test_tolerance_samples():
    assert tolerance_samples(75, 400) == 30
    assert tolerance_samples(75, 360) == 27


def test_match_at_boundary():
    m = match_detections([4000], [4030])
    assert len(m.tp_pairs) == 1 and not m.fn_truth and not m.fp_pred


def test_match_just_outside():
    m = match_detections([4000], [4031])
    assert m.tp_pairs == [] and m.fn_truth == [0] and m.fp_pred == [0]


def test_match_one_to_one():
    m = match_detections([4000], [3990, 4010])
    assert len(m.tp_pairs) == 1 and len(m.fp_pred) == 1


def test_match_nearest_unused_truth():
    # the prediction at 1015 takes truth 1020 (nearer) even though 1000 is also in range
    m = match_detections([1000, 1020], [1015, 1001])
    assert sorted(m.tp_pairs) == [(0, 1), (1, 0)]


def test_match_tie_goes_to_earlier_truth():
    m = match_detections([990, 1010], [1000])
    assert m.tp_pairs == [(0, 0)] and m.fn_truth == [1]


@pytest.mark.parametrize("tp, fn, fp", [(1_022_845, 3_250, 10_916), (109_304, 171, 182),
                                        (5, 0, 0), (1, 1, 1), (10, 3, 0)])
def test_metrics_match_exact_oracle(tp, fn, fp):
    np.testing.assert_allclose(compute_metrics(tp, fn, fp), exact_metrics(tp, fn, fp), rtol=1e-14)


def test_metrics_degenerate():
    assert compute_metrics(0, 0, 0) == (0.0, 0.0, 0.0)
    assert compute_metrics(0, 5, 5) == (0.0, 0.0, 0.0)


def test_per_class_missed():
    types = ["N", "S", "V", "S", "N"]
    assert per_class_missed([1, 2, 3], types) == (2, 1)
    assert per_class_missed([], types) == (0, 0)


def test_evaluate_counts_missed_classes():
    truth = RPeakAnnotations([100, 500, 900, 1300], ["N", "S", "V", "N"])
    rep = evaluate(truth, [101, 1290, 2000], fs=400)
    assert (rep.tp, rep.fn, rep.fp) == (2, 2, 1)
    assert (rep.s_missed, rep.v_missed) == (1, 1)


def test_reports_add_by_summing_counts():
    a = build_report(10, 1, 2, 1, 0)
    b = build_report(5, 0, 1, 0, 0)
    s = a + b
    assert (s.tp, s.fn, s.fp, s.s_missed) == (15, 1, 3, 1)
    assert s.f1_pct == pytest.approx(exact_metrics(15, 1, 3)[2])


sorted_ints = st.lists(st.integers(0, 5000), max_size=60, unique=True).map(sorted)


@given(sorted_ints, sorted_ints, st.integers(0, 100))
def test_exact_partition(truth, preds, tol_ms):
    m = match_detections(truth, preds, tol_ms, 400)
    assert len(m.tp_pairs) + len(m.fn_truth) == len(truth)
    assert len(m.tp_pairs) + len(m.fp_pred) == len(preds)
    tol = tolerance_samples(tol_ms, 400)
    assert all(abs(truth[i] - preds[j]) <= tol for i, j in m.tp_pairs)


@given(sorted_ints, sorted_ints, st.integers(0, 100), st.integers(0, 100))
def test_shrinking_tolerance_never_adds_tp(truth, preds, a, b):
    lo, hi = sorted((a, b))
    assert (len(match_detections(truth, preds, lo).tp_pairs)
            <= len(match_detections(truth, preds, hi).tp_pairs))


@given(st.lists(st.integers(0, 100), max_size=30, unique=True))
def test_matching_mirror_symmetric(offsets):
    # beats spaced well apart, each prediction offset within tolerance: mirrored inputs give equal counts
    truth = [1000 * (k + 1) for k in range(len(offsets))]
    preds = sorted(t + (o % 61) - 30 for t, o in zip(truth, offsets))
    fwd = match_detections(truth, preds)
    rev = match_detections(sorted(-t for t in truth), sorted(-p for p in preds))
    assert len(fwd.tp_pairs) == len(rev.tp_pairs) == len(truth)


# --------------------------------------------------------------------------- output


def test_json_roundtrip(tmp_path):
    rep = build_report(1_022_845, 3_250, 10_916, 40, 552)
    back = load_report(emit_report(rep, tmp_path / "r.json"))
    assert back == rep
    assert set(json.loads((tmp_path / "r.json").read_text())) == set(REPORT_FIELDS)


def test_csv_header_and_roundtrip(tmp_path):
    rep = build_report(7, 1, 2, 0, 1, 50.0)
    path = emit_report(rep, tmp_path / "r.csv", "csv")
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    assert tuple(rows[0]) == REPORT_FIELDS and len(rows) == 2
    assert load_report(path) == rep


def test_unknown_format(tmp_path):
    with pytest.raises(ValueError):
        emit_report(build_report(1, 0, 0), tmp_path / "x", "xml")


def test_plot_data_rows(tmp_path):
    samples = np.sin(np.arange(500) / 7)
    path = write_plot_data(samples, [10, 200], [11, 480], tmp_path / "p.csv")
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    assert tuple(rows[0]) == PLOT_FIELDS
    assert len(rows) - 1 == 500
    assert rows[11][2:] == ["1", "0"] and rows[12][2:] == ["0", "1"]
