"""Desk-scale synthetic experiments shared by ``scripts/`` and the acceptance suite."""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import model as M
from .baseline_pt import pt_detect
from .evaluate import EvalReport, evaluate
from .labelgen import NoiseBank
from .pipeline import build_dataset, detect_record
from .signal_io import EcgRecord
from .synth import SynthConfig, generate, generate_noise

NOISE_KINDS = ("bw", "ma", "em")


@dataclass
class SynthCorpus:
    """Seeded arrhythmic records: ``minutes`` of ECG cut into ``record_s`` records."""
    minutes: float
    record_s: float = 300.0
    seed: int = 0
    beat: SynthConfig = field(default_factory=lambda: SynthConfig(
        heart_rate_bpm=72, rr_jitter_s=0.05, s_rate=0.1, v_rate=0.05, noise_sigma=0.05))

    def records(self) -> list:
        n = max(1, int(round(self.minutes * 60 / self.record_s)))
        return [generate(self.beat.replace(duration_s=self.record_s, seed=self.seed * 1000 + i,
                                           record_id=f"s{self.seed}_{i}"))
                for i in range(n)]


def make_noise_bank(duration_s: float = 120.0, fs: float = 400.0, seed: int = 0,
                    kinds=NOISE_KINDS) -> NoiseBank:
    return NoiseBank({k: generate_noise(k, duration_s, fs, seed * 10 + i) for i, k in enumerate(kinds)})


def add_noise(record: EcgRecord, noise: EcgRecord, snr_db: float, seed: int = 0) -> EcgRecord:
    """Mix a random excerpt of ``noise`` (tiled if short) into ``record`` at ``snr_db``.

    SNR uses mean-removed powers of the whole record and the excerpt.
    """
    n = len(record)
    src = noise.samples
    if src.size < n:
        src = np.tile(src, math.ceil(n / src.size) + 1)
    start = int(np.random.default_rng(seed).integers(0, src.size - n + 1))
    exc = src[start:start + n] - src[start:start + n].mean()
    p_sig, p_noise = float(np.var(record.samples)), float(np.mean(exc ** 2))
    scale = math.sqrt(p_sig / (p_noise * 10 ** (snr_db / 10))) if p_noise > 0 else 0.0
    return EcgRecord(record.record_id, record.sampling_rate_hz, record.samples + scale * exc)


def noisy_copies(pairs, bank: NoiseBank, snr_db: float, seed: int = 0) -> list:
    """Each record gets one bank entry in rotation, each at ``snr_db``."""
    names = bank.names
    return [(add_noise(rec, bank.records[names[i % len(names)]], snr_db, seed * 7919 + i), ann)
            for i, (rec, ann) in enumerate(pairs)]


def train_on(pairs, model_cfg: M.ModelConfig, train_cfg: M.TrainConfig,
             bank: NoiseBank | None = None, stride_s: float | None = None):
    """Build the windowed dataset and train a fresh model. Returns ``(weights, history, seconds)``."""
    t0 = time.perf_counter()
    ds = build_dataset(pairs, model_cfg, stride_s, train_cfg.augment, bank, train_cfg.seed)
    weights, history = M.train(M.build_model(model_cfg), ds, train_cfg)
    return weights, history, time.perf_counter() - t0


def score(detector, pairs, threshold: float = 0.5, verify: bool = False,
          tolerance_ms: float = 75.0) -> EvalReport:
    """Summed report over ``pairs``; ``detector`` is model weights or ``"pt"``."""
    total = None
    for rec, ann in pairs:
        if isinstance(detector, str):
            det = pt_detect(rec)
        else:
            det = detect_record(detector, rec, threshold, verify=verify)
        rep = evaluate(ann, det, rec.sampling_rate_hz, tolerance_ms)
        total = rep if total is None else total + rep
    return total
