import json

import numpy as np
import pytest

from rpeakseg.cli import EXIT_DATA, EXIT_OK, EXIT_USAGE, main, manifest_path, parse_args
from rpeakseg.evaluate import load_report
from rpeakseg.postprocess import read_detections_csv
from rpeakseg.signal_io import read_annotations_csv

TINY = ["--filters", "2", "2", "4", "4", "8", "8", "--window-s", "5.12"]


def run(*argv):
    return main([str(a) for a in argv])


@pytest.fixture
def synth_record(tmp_path):
    out = tmp_path / "rec"
    assert run("synth", "--out", out, "--duration", 60, "--seed", 7) == EXIT_OK
    return tmp_path


def test_synth_detect_eval_pipeline(synth_record):
    d = synth_record
    assert run("detect", "--input", d / "rec.csv", "--baseline", "pt", "--out", d / "pt.csv") == EXIT_OK
    assert run("eval", "--truth", d / "rec.ann.csv", "--pred", d / "pt.csv", "--out", d / "r.json") == EXIT_OK
    assert load_report(d / "r.json").f1_pct >= 99.0


def test_eval_csv_and_plot_data(synth_record):
    d = synth_record
    run("detect", "--input", d / "rec.csv", "--baseline", "pt", "--out", d / "pt.csv")
    assert run("eval", "--truth", d / "rec.ann.csv", "--pred", d / "pt.csv", "--out", d / "r.csv",
               "--format", "csv", "--signal", d / "rec.csv", "--plot-data", d / "plot.csv") == EXIT_OK
    assert load_report(d / "r.csv").tp > 0
    assert len((d / "plot.csv").read_text().splitlines()) == 24_001


def test_detect_without_model_is_usage_error(synth_record, capsys):
    assert run("detect", "--input", synth_record / "rec.csv", "--out", synth_record / "x.csv") == EXIT_USAGE
    assert "--weights" in capsys.readouterr().err


def test_bad_flag_is_usage_error():
    assert run("synth", "--out", "x", "--bogus") == EXIT_USAGE
    assert run("frobnicate") == EXIT_USAGE


def test_missing_input_is_data_error(tmp_path):
    assert run("detect", "--input", tmp_path / "nope.csv", "--baseline", "pt",
               "--out", tmp_path / "x.csv") == EXIT_DATA


def test_malformed_csv_is_data_error(tmp_path):
    (tmp_path / "bad.csv").write_text("# fs=400\n1.0\nabc\n")
    assert run("detect", "--input", tmp_path / "bad.csv", "--baseline", "pt",
               "--out", tmp_path / "x.csv") == EXIT_DATA


def test_config_file_may_supply_required_flags(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"out": str(tmp_path / "o"), "duration": 5}))
    assert run("synth", "--config", cfg) == EXIT_OK
    assert (tmp_path / "o.csv").exists()


def test_missing_required_flag_is_usage_error():
    assert run("synth") == EXIT_USAGE


def test_config_file_sets_defaults_and_flags_override(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"duration": 12.5, "hr": 90}))
    args = parse_args(["synth", "--config", str(cfg), "--out", "o", "--hr", "70"])
    assert args.duration == 12.5 and args.hr == 70


def test_unknown_config_key_is_usage_error(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"not_an_option": 1}))
    assert run("synth", "--config", cfg, "--out", tmp_path / "o") == EXIT_USAGE


@pytest.fixture
def trained(tmp_path):
    for seed in (1, 2, 3):
        run("synth", "--out", tmp_path / f"r{seed}", "--duration", 30, "--seed", seed,
            "--hr", 72, "--rr-jitter", 0.05, "--v-rate", 0.1)
    w = tmp_path / "w.npz"
    assert run("train", "--data", tmp_path / "r1.csv", tmp_path / "r2.csv", "--out", w,
               "--epochs", 2, "--batch-size", 4, "--seed", 5, *TINY) == EXIT_OK
    return tmp_path, w


def test_train_writes_weights_history_and_manifest(trained):
    d, w = trained
    hist = json.loads((d / "w.history.json").read_text())
    assert len(hist["all"]) == 2
    man = json.loads(manifest_path(w).read_text())
    assert man["subcommand"] == "train" and man["seed"] == 5
    assert man["config"]["epochs"] == 2 and "train" in man["timings_s"]


def test_manifest_replays_bit_identically(trained):
    d, w = trained
    w2 = d / "w2.npz"
    assert run("train", "--config", manifest_path(w), "--out", w2) == EXIT_OK
    a, b = np.load(w), np.load(w2)
    assert sorted(a.files) == sorted(b.files)
    for k in a.files:
        assert a[k].tobytes() == b[k].tobytes(), k


def test_verify_output_is_subset(trained):
    d, w = trained
    common = ["detect", "--input", d / "r3.csv", "--weights", w, "--threshold", 0.3]
    assert run(*common, "--out", d / "plain.csv") == EXIT_OK
    assert run(*common, "--verify", "--out", d / "ver.csv") == EXIT_OK
    plain = set(read_detections_csv(d / "plain.csv").peak_indices.tolist())
    ver = set(read_detections_csv(d / "ver.csv").peak_indices.tolist())
    assert ver <= plain


def test_kfold_training(trained):
    d, _ = trained
    out = d / "k.npz"
    assert run("train", "--data", d / "r1.csv", d / "r2.csv", d / "r3.csv", "--folds", 3,
               "--out", out, "--epochs", 1, "--batch-size", 4, *TINY) == EXIT_OK
    assert all((d / f"k.fold{i}.npz").exists() for i in range(3))
    rep = json.loads((d / "k.cv_report.json").read_text())
    assert rep["tp"] + rep["fn"] == sum(
        len(read_annotations_csv(d / f"r{s}.ann.csv").peak_indices) for s in (1, 2, 3))


def test_noisebank_without_dir_is_usage_error(trained):
    d, _ = trained
    assert run("train", "--data", d / "r1.csv", "--out", d / "n.npz", "--aug", "noisebank",
               "--epochs", 1, *TINY) == EXIT_USAGE


def test_noisebank_training(trained):
    d, _ = trained
    (d / "noise").mkdir()
    for kind in ("bw", "ma", "em"):
        assert run("synth", "--noise-kind", kind, "--duration", 30, "--out", d / "noise" / kind) == EXIT_OK
    assert run("train", "--data", d / "r1.csv", "--out", d / "n.npz", "--aug", "noisebank",
               "--noise-dir", d / "noise", "--epochs", 1, "--batch-size", 4, *TINY) == EXIT_OK


def test_bench_reports_published_reference(tmp_path, capsys):
    out = tmp_path / "b.json"
    assert run("bench", "--segments", 2, "--window-s", 5.12, "--out", out) == EXIT_OK
    text = capsys.readouterr().out
    assert "published reference" in text and "202" in text
    res = json.loads(out.read_text())
    assert res["segments"] == 2 and 0 <= res["verify_fraction"] <= 1
