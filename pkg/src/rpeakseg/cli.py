"""Command-line entry point: ``rpeakseg {synth,train,detect,eval,bench}``.

Every numeric knob can come from a JSON file (``--config``); flags given on the
command line override it.  A RunManifest (``<output>.manifest.json``) records the
resolved settings, so ``--config <manifest>`` replays a run.

Exit codes: 0 success, 1 usage or configuration error, 2 data/format error,
3 numeric failure (non-finite training loss).
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import math
import sys
import time
from dataclasses import dataclass, field
from importlib import metadata
from pathlib import Path

import numpy as np

from . import model as M
from .baseline_pt import pt_detect
from .errors import ConfigError, DataError, FormatError, NumericError
from .evaluate import emit_report, evaluate, write_plot_data
from .labelgen import NoiseBank
from .pipeline import bench, build_dataset, detect_record
from .postprocess import read_detections_csv, write_detections_csv
from .signal_io import (
    EcgRecord,
    read_annotations_csv,
    read_signal_csv,
    read_wfdb_212,
    write_annotations_csv,
    write_signal_csv,
)
from .synth import SynthConfig, generate, generate_noise

log = logging.getLogger("rpeakseg")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3
PUBLISHED_LATENCY_MS = 202.0


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _version() -> str:
    try:
        return metadata.version("rpeakseg")
    except metadata.PackageNotFoundError:
        return "0+unknown"


@dataclass
class RunManifest:
    subcommand: str
    config: dict
    inputs: list
    outputs: list
    seed: int | None
    tool_version: str = field(default_factory=_version)
    timings_s: dict = field(default_factory=dict)

    def write(self, path) -> Path:
        path = Path(path)
        path.write_text(json.dumps(dataclasses.asdict(self), indent=2, default=str) + "\n",
                        encoding="utf-8")
        return path


def manifest_path(output) -> Path:
    output = Path(output)
    return output.with_name(output.name + ".manifest.json")


# --------------------------------------------------------------------------- parser


def _on_off(value: str) -> bool:
    v = value.lower()
    if v in ("on", "true", "1", "yes"):
        return True
    if v in ("off", "false", "0", "no"):
        return False
    raise argparse.ArgumentTypeError(f"expected on/off, got {value!r}")


# checked after --config is merged, so a config file may supply them
REQUIRED = {"synth": ("out",), "train": ("data", "out"), "detect": ("input", "out"),
            "eval": ("truth", "pred", "out"), "bench": ()}


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="rpeakseg", description="ECG R-peak detection by 1D segmentation network.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    def common(sp):
        sp.add_argument("--config", help="JSON file of option values (or a run manifest)")
        sp.add_argument("--seed", type=int, default=0)
        return sp

    s = common(sub.add_parser("synth", help="write a synthetic record and its annotations"))
    s.add_argument("--out", help="output prefix: writes <out>.csv and <out>.ann.csv")
    s.add_argument("--duration", type=float, default=60.0, help="seconds")
    s.add_argument("--fs", type=float, default=400.0)
    s.add_argument("--hr", type=float, default=60.0, help="heart rate, bpm")
    s.add_argument("--rr-jitter", type=float, default=0.0, help="RR jitter std, seconds")
    s.add_argument("--s-rate", type=float, default=0.0)
    s.add_argument("--v-rate", type=float, default=0.0)
    s.add_argument("--noise-sigma", type=float, default=0.0)
    s.add_argument("--wander", type=float, default=0.0, help="baseline wander amplitude")
    s.add_argument("--noise-kind", choices=("bw", "ma", "em"),
                   help="write a noise-stress record (<out>.csv only) instead of ECG")

    t = common(sub.add_parser("train", help="train the segmentation network"))
    t.add_argument("--data", nargs="+", help="signal CSV or WFDB .hea files")
    t.add_argument("--ann", nargs="+", help="annotation CSVs (default: <signal stem>.ann.csv)")
    t.add_argument("--out", help="weights file (.npz)")
    t.add_argument("--fs", type=float, help="sampling rate for CSVs without a '# fs=' line")
    t.add_argument("--window-s", type=float, default=20.0)
    t.add_argument("--stride-s", type=float)
    t.add_argument("--skip-connections", type=_on_off, default=True, metavar="{on,off}")
    t.add_argument("--folds", type=int, default=1, help="1 trains on everything; k >= 2 runs k-fold")
    t.add_argument("--epochs", type=int, default=50)
    t.add_argument("--batch-size", type=int, default=64)
    t.add_argument("--lr", type=float, default=1e-3)
    t.add_argument("--aug", nargs="+", choices=("none", "gauss", "sine", "noisebank"), default=["none"])
    t.add_argument("--aug-copies", type=int, default=1)
    t.add_argument("--noise-dir", help="directory of noise CSVs for --aug noisebank")
    t.add_argument("--filters", type=int, nargs=6, help="encoder filter schedule")
    t.add_argument("--threshold", type=float, default=0.5, help="used for k-fold evaluation")
    t.add_argument("--tolerance-ms", type=float, default=75.0)

    d = common(sub.add_parser("detect", help="detect R-peaks in a record"))
    d.add_argument("--input", help="signal CSV or WFDB .hea file")
    d.add_argument("--out", help="detections CSV")
    d.add_argument("--fs", type=float)
    d.add_argument("--weights")
    d.add_argument("--baseline", choices=("pt",))
    d.add_argument("--threshold", type=float, default=0.5)
    d.add_argument("--stride-s", type=float)
    d.add_argument("--verify", action="store_true")
    d.add_argument("--channel", type=int, default=0, help="WFDB channel")

    e = common(sub.add_parser("eval", help="score detections against annotations"))
    e.add_argument("--truth", help="annotation CSV")
    e.add_argument("--pred", help="detections CSV")
    e.add_argument("--out", help="report file")
    e.add_argument("--fs", type=float, help="sampling rate (default: from --signal, else 400)")
    e.add_argument("--tolerance-ms", type=float, default=75.0)
    e.add_argument("--format", choices=("json", "csv"), default="json")
    e.add_argument("--signal", help="signal CSV; with --plot-data writes plot rows")
    e.add_argument("--plot-data")

    b = common(sub.add_parser("bench", help="per-segment inference and verification latency"))
    b.add_argument("--weights", help="weights file (default: freshly initialized default model)")
    b.add_argument("--segments", type=int, default=100)
    b.add_argument("--window-s", type=float, default=20.0)
    b.add_argument("--threshold", type=float, default=0.5)
    b.add_argument("--out", help="JSON results file")
    return p


def parse_args(argv=None) -> argparse.Namespace:
    """Parse, then re-parse with ``--config`` values as defaults so explicit flags win."""
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "config", None):
        cfg = _load_config(args.config)
        sub = parser._subparsers._group_actions[0].choices[args.command]
        known = {a.dest for a in sub._actions}
        unknown = set(cfg) - known
        if unknown:
            raise ConfigError(f"unknown keys in {args.config}: {sorted(unknown)}")
        sub.set_defaults(**cfg)
        args = parser.parse_args(argv)
    missing = [f"--{k.replace('_', '-')}" for k in REQUIRED[args.command] if getattr(args, k) is None]
    if missing:
        raise UsageError(f"rpeakseg {args.command}: missing required {', '.join(missing)}")
    return args


def _load_config(path) -> dict:
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise DataError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: invalid JSON ({exc})") from exc
    if isinstance(data, dict) and "subcommand" in data and "config" in data:
        data = data["config"]
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: expected a JSON object")
    return {k: v for k, v in data.items() if k not in ("config", "command", "verbose")}


def _resolved(args) -> dict:
    return {k: v for k, v in vars(args).items() if k not in ("config", "command", "verbose")}


# --------------------------------------------------------------------------- helpers


def load_record(path, fs=None, channel=0) -> EcgRecord:
    path = Path(path)
    if path.suffix == ".hea":
        channels = read_wfdb_212(path)
        if not 0 <= channel < len(channels):
            raise DataError(f"{path}: no channel {channel}")
        return channels[channel]
    return read_signal_csv(path, fs=fs)


def annotation_path(signal_path) -> Path:
    p = Path(signal_path)
    return p.with_name(p.stem + ".ann.csv")


def _aug_config(args) -> M.AugmentConfig:
    kinds = tuple(k for k in args.aug if k != "none")
    return M.AugmentConfig(kinds=kinds, copies=args.aug_copies, noise_dir=args.noise_dir)


# --------------------------------------------------------------------------- commands


def cmd_synth(args) -> int:
    t0 = time.perf_counter()
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    sig_path = out.with_name(out.name + ".csv")
    outputs = [sig_path]
    if args.noise_kind:
        rec = generate_noise(args.noise_kind, args.duration, args.fs, args.seed)
        write_signal_csv(rec, sig_path)
    else:
        cfg = SynthConfig(duration_s=args.duration, fs_hz=args.fs, heart_rate_bpm=args.hr,
                          rr_jitter_s=args.rr_jitter, s_rate=args.s_rate, v_rate=args.v_rate,
                          noise_sigma=args.noise_sigma, baseline_wander_amp=args.wander,
                          seed=args.seed, record_id=out.name)
        rec, ann = generate(cfg)
        write_signal_csv(rec, sig_path)
        outputs.append(write_annotations_csv(ann, out.with_name(out.name + ".ann.csv")))
    RunManifest("synth", _resolved(args), [], [str(p) for p in outputs], args.seed,
                timings_s={"total": time.perf_counter() - t0}).write(manifest_path(sig_path))
    print(f"wrote {', '.join(str(p) for p in outputs)}")
    return EXIT_OK


def _load_training_pairs(args):
    anns = args.ann or [annotation_path(p) for p in args.data]
    if len(anns) != len(args.data):
        raise ConfigError("--ann must list one annotation file per --data file")
    pairs = {}
    for sig, ann in zip(args.data, anns):
        rec = load_record(sig, args.fs)
        if rec.record_id in pairs:
            raise ConfigError(f"duplicate record id {rec.record_id!r}")
        a = read_annotations_csv(ann)
        a.check_within(len(rec))
        pairs[rec.record_id] = (rec, a)
    return pairs


def _train_once(pairs, model_cfg, train_cfg, args, bank):
    ds = build_dataset(pairs, model_cfg, args.stride_s, train_cfg.augment, bank, args.seed)
    log.info("training on %d windows", len(ds))
    weights = M.build_model(model_cfg)
    return M.train(weights, ds, train_cfg,
                   callback=lambda e, loss: print(f"epoch {e + 1}/{train_cfg.epochs} loss {loss:.5f}"))


def cmd_train(args) -> int:
    timings = {}
    t0 = time.perf_counter()
    pairs = _load_training_pairs(args)
    aug = _aug_config(args)
    bank = None
    if "noisebank" in aug.kinds:
        if not args.noise_dir:
            raise ConfigError("--aug noisebank needs --noise-dir")
        bank = NoiseBank.from_dir(args.noise_dir, fs=args.fs)
    model_kw = dict(window_seconds=args.window_s, skip_connections=args.skip_connections,
                    seed=args.seed)
    if args.filters:
        model_kw["filter_schedule"] = tuple(args.filters)
    model_cfg = M.ModelConfig(**model_kw)
    train_cfg = M.TrainConfig(learning_rate=args.lr, batch_size=args.batch_size, epochs=args.epochs,
                              folds=args.folds, seed=args.seed, augment=aug)
    log.info("model: %d trainable parameters", M.build_model(model_cfg).parameter_count())
    timings["load"] = time.perf_counter() - t0

    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    outputs = []
    ids = list(pairs)
    if args.folds <= 1:
        t1 = time.perf_counter()
        weights, history = _train_once(list(pairs.values()), model_cfg, train_cfg, args, bank)
        timings["train"] = time.perf_counter() - t1
        outputs.append(M.save_weights(weights, out))
        histories = {"all": history}
    else:
        histories, fold_reports = {}, []
        for i, (train_ids, test_ids) in enumerate(M.kfold_split(ids, args.folds, args.seed)):
            t1 = time.perf_counter()
            weights, history = _train_once([pairs[r] for r in train_ids], model_cfg, train_cfg, args, bank)
            timings[f"fold{i}.train"] = time.perf_counter() - t1
            histories[f"fold{i}"] = history
            outputs.append(M.save_weights(weights, out.with_name(f"{out.stem}.fold{i}{out.suffix}")))
            for rid in test_ids:
                rec, ann = pairs[rid]
                det = detect_record(weights, rec, args.threshold, stride_seconds=args.stride_s)
                rep = evaluate(ann, det, rec.sampling_rate_hz, args.tolerance_ms)
                fold_reports.append(rep)
                print(f"fold {i} record {rid}: F1 {rep.f1_pct:.2f}% (TP {rep.tp}, FN {rep.fn}, FP {rep.fp})")
        total = fold_reports[0]
        for rep in fold_reports[1:]:
            total = total + rep
        outputs.append(emit_report(total, out.with_name(out.stem + ".cv_report.json")))
        print(f"cross-validated F1 {total.f1_pct:.2f}%")
    hist_path = out.with_name(out.stem + ".history.json")
    hist_path.write_text(json.dumps(histories, indent=2) + "\n", encoding="utf-8")
    outputs.append(hist_path)
    timings["total"] = time.perf_counter() - t0
    RunManifest("train", _resolved(args), [str(p) for p in args.data], [str(p) for p in outputs],
                args.seed, timings_s=timings).write(manifest_path(out))
    print(f"wrote {out}")
    return EXIT_OK


def cmd_detect(args) -> int:
    if bool(args.weights) == bool(args.baseline):
        raise UsageError("detect needs exactly one of --weights or --baseline")
    t0 = time.perf_counter()
    rec = load_record(args.input, args.fs, args.channel)
    timings = {"load": time.perf_counter() - t0}
    if args.baseline == "pt":
        if args.verify:
            raise UsageError("--verify applies to network detections only")
        t1 = time.perf_counter()
        det = pt_detect(rec)
        timings["detect"] = time.perf_counter() - t1
    else:
        weights = M.load_weights(args.weights)
        stages = []
        det = detect_record(weights, rec, args.threshold, verify=args.verify,
                            stride_seconds=args.stride_s, timing=stages)
        timings["network"] = stages[0].network_s
        timings["verify"] = stages[0].verify_s
    out = write_detections_csv(det, args.out)
    timings["total"] = time.perf_counter() - t0
    inputs = [str(args.input)] + ([str(args.weights)] if args.weights else [])
    RunManifest("detect", _resolved(args), inputs, [str(out)], args.seed,
                timings_s=timings).write(manifest_path(out))
    print(f"{len(det)} detections -> {out}")
    return EXIT_OK


def cmd_eval(args) -> int:
    t0 = time.perf_counter()
    truth = read_annotations_csv(args.truth)
    pred = read_detections_csv(args.pred)
    signal = load_record(args.signal, args.fs) if args.signal else None
    fs = args.fs or (signal.sampling_rate_hz if signal is not None else 400.0)
    report = evaluate(truth, pred, fs, args.tolerance_ms)
    outputs = [emit_report(report, args.out, args.format)]
    if args.plot_data:
        if signal is None:
            raise UsageError("--plot-data needs --signal")
        outputs.append(write_plot_data(signal.samples, truth, pred, args.plot_data))
    RunManifest("eval", _resolved(args), [args.truth, args.pred], [str(p) for p in outputs], args.seed,
                timings_s={"total": time.perf_counter() - t0}).write(manifest_path(args.out))
    print(f"TP {report.tp}  FN {report.fn}  FP {report.fp}  "
          f"recall {report.recall_pct:.2f}%  precision {report.precision_pct:.2f}%  F1 {report.f1_pct:.2f}%  "
          f"S missed {report.s_missed}  V missed {report.v_missed}")
    return EXIT_OK


def cmd_bench(args) -> int:
    t0 = time.perf_counter()
    if args.weights:
        weights = M.load_weights(args.weights)
    else:
        weights = M.build_model(M.ModelConfig(window_seconds=args.window_s, seed=args.seed))
        print("no --weights: timing a freshly initialized default-size model")
    fs = weights.config.sampling_rate_hz
    seconds = weights.config.window_seconds
    segments = []
    for i in range(args.segments):
        rec, _ = generate(SynthConfig(duration_s=seconds, fs_hz=fs, heart_rate_bpm=75,
                                      s_rate=0.1, v_rate=0.05, noise_sigma=0.05, seed=args.seed + i))
        segments.append(rec)
    res = bench(weights, segments, args.threshold)
    print(f"segments: {res.segments} x {seconds:g} s at {fs:g} Hz, single segment per call")
    print(f"network inference: mean {res.network_mean_ms:.1f} ms, p95 {res.network_p95_ms:.1f} ms")
    print(f"verification:      mean {res.verify_mean_ms:.2f} ms, p95 {res.verify_p95_ms:.2f} ms "
          f"({100 * res.verify_fraction:.1f}% of total)")
    print(f"total per segment: {res.total_mean_ms:.1f} ms")
    print(f"Pan-Tompkins:      mean {res.pt_mean_ms:.1f} ms")
    print(f"published reference: about {PUBLISHED_LATENCY_MS:g} ms per 20 s segment "
          f"(ratio here {res.total_mean_ms / PUBLISHED_LATENCY_MS:.2f}x)")
    outputs = []
    if args.out:
        d = dataclasses.asdict(res)
        d.update(total_mean_ms=res.total_mean_ms, verify_fraction=res.verify_fraction,
                 published_reference_ms=PUBLISHED_LATENCY_MS)
        Path(args.out).write_text(json.dumps(d, indent=2) + "\n", encoding="utf-8")
        outputs.append(args.out)
        RunManifest("bench", _resolved(args), [args.weights] if args.weights else [], outputs,
                    args.seed, timings_s={"total": time.perf_counter() - t0}).write(manifest_path(args.out))
    return EXIT_OK


COMMANDS = {"synth": cmd_synth, "train": cmd_train, "detect": cmd_detect,
            "eval": cmd_eval, "bench": cmd_bench}


def main(argv=None) -> int:
    try:
        args = parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        return COMMANDS[args.command](args)
    except (UsageError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, FormatError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
