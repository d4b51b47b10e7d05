"""Train with and without noise-bank augmentation on synthetic ECG and compare to Pan-Tompkins.

Usage: python scripts/run_synthetic_experiment.py --seeds 0 1 2 --epochs 24 --out results.json
"""
import argparse
import json
import time

from rpeakseg import model as M
from rpeakseg.experiments import SynthCorpus, make_noise_bank, noisy_copies, score, train_on


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    ap.add_argument("--epochs", type=int, default=24)
    ap.add_argument("--batch-size", type=int, default=8)
    ap.add_argument("--train-minutes", type=float, default=30)
    ap.add_argument("--test-minutes", type=float, default=10)
    ap.add_argument("--snr-db", type=float, nargs="+", default=[12, 6, 0])
    ap.add_argument("--out")
    args = ap.parse_args()

    train = SynthCorpus(args.train_minutes, seed=0).records()
    test = SynthCorpus(args.test_minutes, seed=1).records()
    bank_train, bank_test = make_noise_bank(seed=0), make_noise_bank(seed=1)
    noisy = {snr: noisy_copies(test, bank_test, snr, seed=3) for snr in args.snr_db}
    n_v = sum(ann.beat_types.count("V") for _, ann in test)
    print(f"test: {sum(len(a.peak_indices) for _, a in test)} beats, {n_v} V")

    rows = []

    def report(label, seed, detector, seconds=None):
        row = {"detector": label, "seed": seed, "train_s": seconds}
        for name, pairs in [("clean", test)] + [(f"snr{s:g}", p) for s, p in noisy.items()]:
            rep = score(detector, pairs)
            row[name] = rep.to_dict()
            print(f"{label:>10} seed {seed} {name:>7}: F1 {rep.f1_pct:6.2f}  FN {rep.fn:4d}  "
                  f"FP {rep.fp:4d}  V missed {rep.v_missed}", flush=True)
        rows.append(row)

    report("pt", None, "pt")
    for seed in args.seeds:
        for label, kinds in (("plain", ()), ("noisebank", ("noisebank",))):
            tc = M.TrainConfig(batch_size=args.batch_size, epochs=args.epochs, seed=seed,
                               augment=M.AugmentConfig(kinds=kinds))
            t0 = time.perf_counter()
            weights, history, _ = train_on(train, M.ModelConfig(seed=seed), tc, bank_train)
            report(label, seed, weights, time.perf_counter() - t0)
            rows[-1]["final_loss"] = history[-1]
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            json.dump(rows, fh, indent=2)


if __name__ == "__main__":
    main()
