import json
import zipfile

import numpy as np
import pytest
from conftest import model_grad_check, tiny_config
from hypothesis import given, settings
from hypothesis import strategies as st

from rpeakseg import model as M
from rpeakseg.errors import ConfigError, FormatError, NumericError, ShapeError
from rpeakseg.labelgen import make_target_map
from rpeakseg.signal_io import SegmentView, normalize_segment
from rpeakseg.synth import SynthConfig, generate

# pinned: a pure function of the default ModelConfig (conv/tconv weights + biases,
# BN gamma/beta, 1x1 head); see the ledger for the comparison with the published count
DEFAULT_SKIP_PARAMS = 119_058
DEFAULT_PLAIN_PARAMS = 81_394


def expected_count(cfg: M.ModelConfig) -> int:
    """Independent recount from the schedules."""
    total, in_ch = 0, 1
    for k, f in zip(cfg.kernel_schedule, cfg.filter_schedule):
        total += f * in_ch * k + f + 2 * f
        in_ch = f
    for k, f, skip in zip(cfg.kernel_schedule[::-1], cfg.filter_schedule[::-1], cfg.filter_schedule[::-1]):
        total += in_ch * f * k + f + 2 * f
        in_ch = f + skip if cfg.skip_connections else f
    heads = 2 if cfg.output_head == "softmax2" else 1
    return total + heads * in_ch + heads


def test_default_parameter_count_pinned():
    assert M.build_model(M.ModelConfig()).parameter_count() == DEFAULT_SKIP_PARAMS
    assert M.build_model(M.ModelConfig(skip_connections=False)).parameter_count() == DEFAULT_PLAIN_PARAMS


@pytest.mark.parametrize("kw", [{}, {"skip_connections": False}, {"output_head": "sigmoid1"},
                                {"filter_schedule": (2, 2, 4, 4, 8, 8)}])
def test_parameter_count_matches_recount(kw):
    cfg = M.ModelConfig(**kw)
    assert M.build_model(cfg).parameter_count() == expected_count(cfg)


def test_skip_vs_plain_shapes():
    skip = M.layer_shapes(M.ModelConfig())
    plain = M.layer_shapes(M.ModelConfig(skip_connections=False))
    for name in skip:
        if name.startswith("enc"):
            assert skip[name] == plain[name]
    # decoder stage t >= 1 and the head read [decoder output, skip] -> channels doubled
    for t in range(1, 6):
        assert skip[f"dec{t}.tconv.w"][0] == 2 * plain[f"dec{t}.tconv.w"][0]
    assert skip["head.w"][1] == 2 * plain["head.w"][1] == 32


def test_build_deterministic_and_init_range():
    a = M.build_model(M.ModelConfig(seed=3))
    b = M.build_model(M.ModelConfig(seed=3))
    for k in a.params:
        assert a.params[k].tobytes() == b.params[k].tobytes()
    w = a.params["enc0.conv.w"]
    assert w.dtype == np.float32 and np.abs(w).max() <= 0.1
    assert np.all(a.params["enc0.bn.gamma"] == 1) and np.all(a.params["enc0.bn.var"] == 1)


def test_config_validation():
    with pytest.raises(ConfigError):
        M.ModelConfig(stages=5)
    with pytest.raises(ConfigError):
        M.ModelConfig(output_head="tanh")
    with pytest.raises(ConfigError):
        M.ModelConfig.from_dict({"bogus": 1})


# --------------------------------------------------------------------------- forward


@pytest.mark.parametrize("skip", [True, False])
def test_forward_length_and_range(skip):
    w = M.build_model(tiny_config(skip_connections=skip, dtype="float32"))
    x = np.random.default_rng(0).uniform(-1, 1, 256)
    p = M.forward(w, x)
    assert p.shape == (256,)
    assert np.all((p >= 0) & (p <= 1))


def test_forward_zero_input_finite():
    w = M.build_model(M.ModelConfig())
    assert np.all(np.isfinite(M.forward(w, np.zeros(8000))))


def test_forward_rejects_wrong_length():
    with pytest.raises(ShapeError):
        M.forward(M.build_model(tiny_config()), np.zeros(320))


def test_forward_rejects_non_multiple_of_64():
    with pytest.raises(ShapeError):
        M.forward_train(M.build_model(tiny_config()), np.zeros((1, 250)))


def test_predict_matches_forward_batching():
    w = M.build_model(tiny_config())
    x = np.random.default_rng(1).uniform(-1, 1, (5, 256))
    np.testing.assert_allclose(M.predict(w, x, batch_size=2), M.forward(w, x), rtol=1e-12)


def test_infer_mode_does_not_touch_running_stats():
    w = M.build_model(tiny_config())
    before = w.params["enc0.bn.mean"].copy()
    M.forward(w, np.ones(256))
    np.testing.assert_array_equal(w.params["enc0.bn.mean"], before)


@settings(max_examples=15, deadline=None)
@given(st.integers(1, 8))
def test_tiny_window_lengths_roundtrip(mult):
    cfg = tiny_config(window_seconds=64 * mult / 400.0)
    w = M.build_model(cfg)
    assert M.forward(w, np.zeros(64 * mult)).shape == (64 * mult,)


# --------------------------------------------------------------------------- gradients


def test_full_model_gradients_tiny():
    res = model_grad_check(tiny_config(), max_entries=12)
    worst = max(r.max_rel_error for r in res.values())
    assert worst < 1e-4, {k: r for k, r in res.items() if r.max_rel_error >= 1e-4}
    assert sum(r.checked for r in res.values()) > 300


# --------------------------------------------------------------------------- training


def _toy_dataset(n_windows=4, seed=0):
    """256-sample windows cut from a 120 bpm synthetic record."""
    rec, ann = generate(SynthConfig(duration_s=n_windows * 0.64, heart_rate_bpm=120, seed=seed))
    pairs = []
    for start in range(0, len(rec) - 255, 256):
        s = SegmentView(rec.record_id, start, normalize_segment(rec.samples[start:start + 256]), 256, 256)
        pairs.append((s, make_target_map(ann, s)))
    return M.Dataset.from_pairs(pairs)


def test_train_loss_decreases_on_toy_problem():
    ds = _toy_dataset()
    w = M.build_model(tiny_config(dtype="float32"))
    _, hist = M.train(w, ds, M.TrainConfig(epochs=8, batch_size=4, learning_rate=1e-2))
    assert hist[-1] < hist[0]


def test_train_zero_epochs_is_noop():
    ds = _toy_dataset()
    w = M.build_model(tiny_config())
    before = w.copy()
    _, hist = M.train(w, ds, M.TrainConfig(epochs=0))
    assert hist == []
    for k in w.params:
        np.testing.assert_array_equal(w.params[k], before.params[k])


def test_train_deterministic():
    ds = _toy_dataset()
    runs = []
    for _ in range(2):
        w = M.build_model(tiny_config(dtype="float32"), rng_seed=5)
        _, hist = M.train(w, ds, M.TrainConfig(epochs=2, batch_size=2, seed=9))
        runs.append((w, hist))
    assert runs[0][1] == runs[1][1]
    for k in runs[0][0].params:
        assert runs[0][0].params[k].tobytes() == runs[1][0].params[k].tobytes()


def test_train_rejects_window_mismatch():
    ds = _toy_dataset()
    w = M.build_model(tiny_config(window_seconds=1.28))
    with pytest.raises(ShapeError):
        M.train(w, ds, M.TrainConfig(epochs=1))


def test_train_nan_raises_numeric_error():
    ds = _toy_dataset()
    ds.inputs[0, 10] = np.nan
    w = M.build_model(tiny_config())
    with pytest.raises(NumericError):
        M.train(w, ds, M.TrainConfig(epochs=1, batch_size=len(ds)))


# --------------------------------------------------------------------------- folds


def test_kfold_ten_records():
    ids = [f"r{i}" for i in range(10)]
    folds = M.kfold_split(ids, 10, seed=1)
    assert len(folds) == 10
    for train, test in folds:
        assert len(test) == 1 and len(train) == 9 and not set(train) & set(test)


def test_kfold_two_of_four():
    folds = M.kfold_split(list("abcd"), 2)
    t0, t1 = folds[0][1], folds[1][1]
    assert len(t0) == len(t1) == 2 and set(t0) | set(t1) == set("abcd")


@given(n=st.integers(2, 40), data=st.data())
def test_kfold_partition(n, data):
    k = data.draw(st.integers(2, n))
    ids = list(range(n))
    folds = M.kfold_split(ids, k, seed=data.draw(st.integers(0, 100)))
    tests = [t for _, t in folds]
    assert sorted(x for t in tests for x in t) == ids
    for train, test in folds:
        assert set(train) | set(test) == set(ids) and not set(train) & set(test)


def test_kfold_rejects_large_k():
    with pytest.raises(ConfigError):
        M.kfold_split(["a", "b"], 3)


# --------------------------------------------------------------------------- persistence


def test_save_load_roundtrip(tmp_path):
    w = M.build_model(tiny_config(dtype="float32"), rng_seed=4)
    w.params["enc0.bn.mean"][:] = 0.25
    path = M.save_weights(w, tmp_path / "w.npz")
    back = M.load_weights(path)
    x = np.random.default_rng(0).uniform(-1, 1, 256)
    assert M.forward(w, x).tobytes() == M.forward(back, x).tobytes()
    assert back.config == w.config


def _rewrite_meta(path, mutate):
    with np.load(path) as data:
        arrays = {k: data[k] for k in data.files}
    meta = json.loads(bytes(arrays["__meta__"]).decode())
    mutate(meta, arrays)
    arrays["__meta__"] = np.frombuffer(json.dumps(meta).encode(), np.uint8)
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def test_load_corrupted_shape_names_layer(tmp_path):
    path = M.save_weights(M.build_model(tiny_config()), tmp_path / "w.npz")

    def corrupt(meta, arrays):
        meta["manifest"]["dec3.tconv.w"] = [1, 2, 3]
    _rewrite_meta(path, corrupt)
    with pytest.raises(FormatError, match="dec3.tconv.w"):
        M.load_weights(path)


def test_load_bad_version(tmp_path):
    path = M.save_weights(M.build_model(tiny_config()), tmp_path / "w.npz")
    _rewrite_meta(path, lambda meta, arrays: meta.update(format_version=99))
    with pytest.raises(FormatError, match="version"):
        M.load_weights(path)


def test_load_missing_meta(tmp_path):
    path = tmp_path / "w.npz"
    np.savez(path, a=np.zeros(2))
    with pytest.raises(FormatError):
        M.load_weights(path)


def test_load_not_a_zip(tmp_path):
    path = tmp_path / "w.npz"
    path.write_text("hello")
    with pytest.raises(FormatError):
        M.load_weights(path)
    assert not zipfile.is_zipfile(path)


def test_load_config_mismatch(tmp_path):
    path = M.save_weights(M.build_model(tiny_config()), tmp_path / "w.npz")
    M.load_weights(path, expected_config=tiny_config(seed=123))  # seed alone is not a mismatch
    with pytest.raises(ConfigError):
        M.load_weights(path, expected_config=tiny_config(skip_connections=False))
