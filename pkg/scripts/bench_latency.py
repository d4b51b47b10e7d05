"""Per-segment latency of inference and verification across window lengths.

Usage: python scripts/bench_latency.py [--weights w.npz] --windows 5.12 10.24 20 30 --segments 20
"""
import argparse

from rpeakseg import model as M
from rpeakseg.pipeline import bench
from rpeakseg.synth import SynthConfig, generate

PUBLISHED_MS = 202.0  # reported per 20 s segment


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--weights", help="trained weights; window length then follows --windows")
    ap.add_argument("--windows", type=float, nargs="+", default=[5.12, 10.24, 20.0, 30.0])
    ap.add_argument("--segments", type=int, default=20)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    print(f"{'window s':>9} {'net ms':>8} {'net p95':>8} {'verify ms':>10} {'verify %':>9} {'PT ms':>7}")
    for seconds in args.windows:
        if args.weights:
            base = M.load_weights(args.weights)
            cfg = M.ModelConfig.from_dict({**base.config.to_dict(), "window_seconds": seconds})
            weights = M.ModelWeights(cfg, base.params)
        else:
            weights = M.build_model(M.ModelConfig(window_seconds=seconds, seed=args.seed))
        segs = [generate(SynthConfig(duration_s=seconds, heart_rate_bpm=75, s_rate=0.1, v_rate=0.05,
                                     noise_sigma=0.05, seed=args.seed + i))[0]
                for i in range(args.segments)]
        r = bench(weights, segs)
        print(f"{seconds:9.2f} {r.network_mean_ms:8.1f} {r.network_p95_ms:8.1f} {r.verify_mean_ms:10.2f} "
              f"{100 * r.verify_fraction:8.1f}% {r.pt_mean_ms:7.1f}")
    print(f"published reference: about {PUBLISHED_MS:g} ms per 20 s segment")


if __name__ == "__main__":
    main()
