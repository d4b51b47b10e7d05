import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rpeakseg.signal_io import read_annotations_csv, read_signal_csv, write_annotations_csv, write_signal_csv
from rpeakseg.synth import SynthConfig, beat_template, generate, generate_noise


def test_60s_at_60bpm():
    rec, ann = generate(SynthConfig(duration_s=60, heart_rate_bpm=60))
    assert len(ann.peak_indices) == 60
    assert np.all(np.diff(ann.peak_indices) == 400)
    assert len(rec) == 24_000


def test_deterministic():
    cfg = SynthConfig(duration_s=20, s_rate=0.2, v_rate=0.1, rr_jitter_s=0.05, noise_sigma=0.05,
                      baseline_wander_amp=0.2, seed=11)
    a, b = generate(cfg), generate(cfg)
    assert a[0].samples.tobytes() == b[0].samples.tobytes()
    assert a[1].peak_indices.tolist() == b[1].peak_indices.tolist()
    assert a[1].beat_types == b[1].beat_types


def test_v_rate_binomial_bound():
    _, ann = generate(SynthConfig(duration_s=1000, heart_rate_bpm=60, v_rate=0.1, seed=2))
    assert len(ann.peak_indices) == 1000
    assert abs(ann.beat_types.count("V") - 100) <= 30


def test_s_beats_arrive_early():
    _, ann = generate(SynthConfig(duration_s=600, heart_rate_bpm=60, s_rate=0.2, seed=4))
    rr = np.diff(ann.peak_indices)
    is_s = np.array(ann.beat_types[1:]) == "S"
    assert np.all((rr[is_s] >= 0.6 * 400 - 1) & (rr[is_s] <= 0.8 * 400 + 1))
    assert np.all(rr[~is_s] == 400)


def test_annotation_is_template_center():
    cfg = SynthConfig(duration_s=30, heart_rate_bpm=50, s_rate=0.2, v_rate=0.2, seed=6,
                      p_amplitude=0.0, t_amplitude=0.0)
    rec, ann = generate(cfg)
    for p, kind in zip(ann.peak_indices, ann.beat_types):
        # the QRS extremum of an isolated, noise-free beat is the template centre
        lo, hi = p - 20, p + 21
        seg = rec.samples[max(lo, 0):hi]
        k = np.argmax(np.abs(seg)) + max(lo, 0)
        assert k == p, kind


def test_v_template_inverted_and_wide():
    cfg = SynthConfig()
    off, n = beat_template("N", 400, cfg)
    _, v = beat_template("V", 400, cfg)
    _, s = beat_template("S", 400, cfg)
    c = np.nonzero(off == 0)[0][0]
    assert v[c] < 0 and abs(v[c]) > n[c]
    assert np.sum(np.abs(v) > 0.5 * abs(v[c])) >= 1.9 * np.sum(n > 0.5 * n[c])
    assert np.sum(s > 0.5 * s[c]) < np.sum(n > 0.5 * n[c])


def test_invalid_rates():
    with pytest.raises(ValueError):
        SynthConfig(v_rate=1.5)
    with pytest.raises(ValueError):
        SynthConfig(s_rate=0.6, v_rate=0.6)
    with pytest.raises(ValueError):
        SynthConfig(fs_hz=0)


@settings(max_examples=10, deadline=None)
@given(seed=st.integers(0, 10_000))
def test_csv_roundtrip(tmp_path_factory, seed):
    d = tmp_path_factory.mktemp("rt")
    rec, ann = generate(SynthConfig(duration_s=5, v_rate=0.2, noise_sigma=0.1, seed=seed))
    back = read_signal_csv(write_signal_csv(rec, d / "r.csv"))
    back_ann = read_annotations_csv(write_annotations_csv(ann, d / "a.csv"))
    np.testing.assert_array_equal(back.samples, rec.samples)
    assert back.sampling_rate_hz == rec.sampling_rate_hz
    assert back_ann.peak_indices.tolist() == ann.peak_indices.tolist()
    assert back_ann.beat_types == ann.beat_types


@pytest.mark.parametrize("kind", ["bw", "ma", "em"])
def test_noise_records(kind):
    n = generate_noise(kind, 30, 400, seed=1)
    assert len(n) == 12_000
    assert abs(n.samples.mean()) < 1e-9 and n.samples.std() == pytest.approx(1.0)
    assert generate_noise(kind, 30, 400, seed=1).samples.tobytes() == n.samples.tobytes()


def test_noise_spectra_differ():
    def low_fraction(x):
        spec = np.abs(np.fft.rfft(x)) ** 2
        f = np.fft.rfftfreq(x.size, 1 / 400)
        return spec[f < 1].sum() / spec.sum()
    assert low_fraction(generate_noise("bw", 60).samples) > 0.9
    assert low_fraction(generate_noise("ma", 60).samples) < 0.01


def test_unknown_noise_kind():
    with pytest.raises(ValueError):
        generate_noise("pink", 1)
