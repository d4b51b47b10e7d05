"""1D encoder-decoder segmentation network: build, forward/backward, train, save/load."""
from __future__ import annotations

import dataclasses
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import nn_core as nn
from .errors import ConfigError, FormatError, NumericError, ShapeError

log = logging.getLogger(__name__)

FORMAT_VERSION = 1
BUFFER_SUFFIXES = (".mean", ".var")


@dataclass
class ModelConfig:
    window_seconds: float = 20.0
    sampling_rate_hz: float = 400.0
    stages: int = 6
    kernel_schedule: tuple = (9, 9, 6, 6, 3, 3)
    filter_schedule: tuple = (16, 16, 32, 32, 64, 64)
    skip_connections: bool = True
    dropout_rate: float = 0.1
    dropout_all_stages: bool = False
    output_head: str = "softmax2"
    bn_momentum: float = 0.9
    bn_eps: float = 1e-5
    init_range: float = 0.1
    dtype: str = "float32"
    seed: int = 0

    def __post_init__(self):
        self.kernel_schedule = tuple(int(k) for k in self.kernel_schedule)
        self.filter_schedule = tuple(int(f) for f in self.filter_schedule)
        if self.stages != 6:
            raise ConfigError(f"stages must be 6, got {self.stages}")
        if len(self.kernel_schedule) != 6 or len(self.filter_schedule) != 6:
            raise ConfigError("kernel and filter schedules must have length 6")
        if self.output_head not in ("softmax2", "sigmoid1"):
            raise ConfigError(f"unknown output head {self.output_head!r}")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ConfigError(f"dropout_rate must be in [0, 1), got {self.dropout_rate}")
        if self.window_seconds <= 0 or self.sampling_rate_hz <= 0:
            raise ConfigError("window_seconds and sampling_rate_hz must be positive")

    @property
    def window_samples(self) -> int:
        return padded_length(round(self.window_seconds * self.sampling_rate_hz), self.stages)

    @property
    def decoder_kernels(self) -> tuple:
        return self.kernel_schedule[::-1]

    @property
    def decoder_filters(self) -> tuple:
        return self.filter_schedule[::-1]

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["kernel_schedule"] = list(self.kernel_schedule)
        d["filter_schedule"] = list(self.filter_schedule)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**d)


def padded_length(n: int, stages: int = 6) -> int:
    """Round ``n`` up to a multiple of ``2**stages``."""
    m = 2 ** stages
    return max(m, int(math.ceil(n / m)) * m)


def layer_shapes(config: ModelConfig) -> dict:
    """Ordered ``name -> shape`` map of every parameter and buffer."""
    shapes = {}

    def bn(prefix, ch):
        for suffix in ("gamma", "beta", "mean", "var"):
            shapes[f"{prefix}.bn.{suffix}"] = (ch,)

    in_ch = 1
    for s, (k, f) in enumerate(zip(config.kernel_schedule, config.filter_schedule)):
        shapes[f"enc{s}.conv.w"] = (f, in_ch, k)
        shapes[f"enc{s}.conv.b"] = (f,)
        bn(f"enc{s}", f)
        in_ch = f
    skip_ch = config.filter_schedule[::-1]
    for t, (k, f) in enumerate(zip(config.decoder_kernels, config.decoder_filters)):
        shapes[f"dec{t}.tconv.w"] = (in_ch, f, k)
        shapes[f"dec{t}.tconv.b"] = (f,)
        bn(f"dec{t}", f)
        in_ch = f + skip_ch[t] if config.skip_connections else f
    n_out = 2 if config.output_head == "softmax2" else 1
    shapes["head.w"] = (n_out, in_ch, 1)
    shapes["head.b"] = (n_out,)
    return shapes


def is_buffer(name: str) -> bool:
    return name.endswith(BUFFER_SUFFIXES)


@dataclass
class ModelWeights:
    config: ModelConfig
    params: dict
    version: int = FORMAT_VERSION

    @property
    def trainable_names(self) -> list:
        return [n for n in self.params if not is_buffer(n)]

    def parameter_count(self) -> int:
        return int(sum(self.params[n].size for n in self.trainable_names))

    def copy(self) -> "ModelWeights":
        return ModelWeights(dataclasses.replace(self.config),
                            {k: v.copy() for k, v in self.params.items()}, self.version)


def build_model(config: ModelConfig, rng_seed=None) -> ModelWeights:
    """Initialize weights; conv/tconv kernels and biases uniform in ``±init_range``."""
    seed = config.seed if rng_seed is None else rng_seed
    rng = np.random.default_rng(seed)
    dtype = np.dtype(config.dtype)
    params = {}
    for name, shape in layer_shapes(config).items():
        if name.endswith((".w", ".b")):
            arr = rng.uniform(-config.init_range, config.init_range, size=shape)
        elif name.endswith((".gamma", ".var")):
            arr = np.ones(shape)
        else:
            arr = np.zeros(shape)
        params[name] = arr.astype(dtype)
    weights = ModelWeights(config, params)
    log.info("built model: %d trainable parameters (skip=%s)",
             weights.parameter_count(), config.skip_connections)
    return weights


# --------------------------------------------------------------------------- forward / backward


def _prepare_input(weights: ModelWeights, x) -> np.ndarray:
    x = np.asarray(getattr(x, "samples", x), dtype=np.dtype(weights.config.dtype))
    if x.ndim == 1:
        x = x[None, None, :]
    elif x.ndim == 2:
        x = x[:, None, :]
    n = x.shape[-1]
    if n % 2 ** weights.config.stages:
        raise ShapeError(f"input length {n} is not a multiple of {2 ** weights.config.stages}")
    return x


def forward_train(weights: ModelWeights, x, mode: str = "train", rng=None):
    """Run the network, returning ``(peak_probability, cache)`` for :func:`backward`."""
    cfg, p = weights.config, weights.params
    h = _prepare_input(weights, x)
    rng = np.random.default_rng(rng)
    cache = {"enc": [], "dec": []}
    skips = []
    for s in range(cfg.stages):
        pre = f"enc{s}"
        c, cols = nn.conv1d_forward(h, p[f"{pre}.conv.w"], p[f"{pre}.conv.b"], return_cols=True)
        b, bnc = nn.batchnorm_forward(c, p[f"{pre}.bn.gamma"], p[f"{pre}.bn.beta"],
                                      p[f"{pre}.bn.mean"], p[f"{pre}.bn.var"], mode,
                                      cfg.bn_momentum, cfg.bn_eps)
        a = nn.relu(b)
        pooled, idx = nn.maxpool2_forward(a)
        mask = None
        if cfg.dropout_all_stages or s == cfg.stages - 1:
            pooled, mask = nn.dropout(pooled, cfg.dropout_rate, mode, rng)
        cache["enc"].append((h, cols, bnc, a, idx, mask))
        skips.append(a)
        h = pooled
    for t in range(cfg.stages):
        pre = f"dec{t}"
        u = nn.tconv1d_forward(h, p[f"{pre}.tconv.w"], p[f"{pre}.tconv.b"])
        b, bnc = nn.batchnorm_forward(u, p[f"{pre}.bn.gamma"], p[f"{pre}.bn.beta"],
                                      p[f"{pre}.bn.mean"], p[f"{pre}.bn.var"], mode,
                                      cfg.bn_momentum, cfg.bn_eps)
        d = nn.relu(b)
        cache["dec"].append((h, bnc, d))
        h = np.concatenate([d, skips[cfg.stages - 1 - t]], axis=1) if cfg.skip_connections else d
    logits = nn.conv1d_forward(h, p["head.w"], p["head.b"])
    if cfg.output_head == "softmax2":
        prob = nn.softmax2(logits)[:, 1]
    else:
        prob = nn.sigmoid(logits[:, 0])
    cache["head"] = h
    cache["prob"] = prob
    return prob, cache


def backward(weights: ModelWeights, cache: dict, grad_prob) -> dict:
    """Gradients of a scalar loss w.r.t. every trainable parameter (and ``"input"``)."""
    cfg, p = weights.config, weights.params
    grads = {}
    prob = cache["prob"]
    if cfg.output_head == "softmax2":
        dlogits = nn.softmax2_backward(grad_prob, prob)
    else:
        dlogits = (grad_prob * prob * (1.0 - prob))[:, None]
    dh, grads["head.w"], grads["head.b"] = nn.conv1d_backward(cache["head"], p["head.w"], dlogits)
    skip_grads = [None] * cfg.stages
    for t in reversed(range(cfg.stages)):
        pre = f"dec{t}"
        h_in, bnc, d = cache["dec"][t]
        if cfg.skip_connections:
            nd = d.shape[1]
            skip_grads[cfg.stages - 1 - t] = dh[:, nd:]
            dh = dh[:, :nd]
        db = nn.relu_backward(dh, d)
        du, grads[f"{pre}.bn.gamma"], grads[f"{pre}.bn.beta"] = nn.batchnorm_backward(db, bnc)
        dh, grads[f"{pre}.tconv.w"], grads[f"{pre}.tconv.b"] = nn.tconv1d_backward(
            h_in, p[f"{pre}.tconv.w"], du)
    for s in reversed(range(cfg.stages)):
        pre = f"enc{s}"
        h_in, cols, bnc, a, idx, mask = cache["enc"][s]
        if mask is not None:
            dh = dh * mask
        da = nn.maxpool2_backward(dh, idx)
        if skip_grads[s] is not None:
            da = da + skip_grads[s]
        db = nn.relu_backward(da, a)
        dc, grads[f"{pre}.bn.gamma"], grads[f"{pre}.bn.beta"] = nn.batchnorm_backward(db, bnc)
        dh, grads[f"{pre}.conv.w"], grads[f"{pre}.conv.b"] = nn.conv1d_backward(
            h_in, p[f"{pre}.conv.w"], dc, cols=cols)
    grads["input"] = dh[:, 0]
    dtype = np.dtype(cfg.dtype)
    return {k: v.astype(dtype, copy=False) for k, v in grads.items()}


def forward(weights: ModelWeights, segment, mode: str = "infer", rng=None) -> np.ndarray:
    """Per-sample R-peak probability for one segment (1D) or a batch (2D)."""
    x = getattr(segment, "samples", segment)
    single = np.ndim(x) == 1
    window = weights.config.window_samples
    if np.shape(x)[-1] != window:
        raise ShapeError(f"segment length {np.shape(x)[-1]} != configured window {window}")
    prob, _ = forward_train(weights, x, mode, rng)
    return prob[0] if single else prob


def predict(weights: ModelWeights, inputs, batch_size: int = 32) -> np.ndarray:
    """Inference over any number of equal-length inputs, batched."""
    inputs = np.asarray(inputs)
    out = [forward_train(weights, inputs[i:i + batch_size], "infer")[0]
           for i in range(0, len(inputs), batch_size)]
    return np.concatenate(out, axis=0) if out else np.zeros((0, inputs.shape[-1]))


# --------------------------------------------------------------------------- training


@dataclass
class AugmentConfig:
    kinds: tuple = ()
    copies: int = 1
    sigma_range: tuple = (0.01, 0.1)
    amp_range: tuple = (0.05, 0.3)
    freq_range_hz: tuple = (0.1, 0.7)
    snr_db_range: tuple = (0.0, 12.0)
    noise_dir: str | None = None


@dataclass
class TrainConfig:
    learning_rate: float = 1e-3
    batch_size: int = 64
    epochs: int = 50
    folds: int = 10
    seed: int = 0
    augment: AugmentConfig = field(default_factory=AugmentConfig)

    def __post_init__(self):
        if isinstance(self.augment, dict):
            self.augment = AugmentConfig(**self.augment)
        self.augment.kinds = tuple(self.augment.kinds)
        if self.learning_rate <= 0 or self.batch_size <= 0 or self.epochs < 0:
            raise ConfigError("learning_rate and batch_size must be positive, epochs >= 0")
        if self.folds < 1:
            raise ConfigError(f"folds must be >= 1, got {self.folds}")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


@dataclass
class Dataset:
    """Stacked training examples: inputs ``(n, L)``, targets ``(n, L)``, valid lengths ``(n,)``."""
    inputs: np.ndarray
    targets: np.ndarray
    valid_lengths: np.ndarray

    def __len__(self):
        return len(self.inputs)

    @classmethod
    def from_pairs(cls, pairs) -> "Dataset":
        pairs = list(pairs)
        if not pairs:
            return cls(np.zeros((0, 0)), np.zeros((0, 0), np.uint8), np.zeros(0, int))
        return cls(np.stack([np.asarray(s.samples) for s, _ in pairs]),
                   np.stack([np.asarray(t.labels) for _, t in pairs]).astype(np.uint8),
                   np.array([t.valid_length for _, t in pairs], dtype=int))

    def concat(self, other: "Dataset") -> "Dataset":
        if len(self) == 0:
            return other
        if len(other) == 0:
            return self
        return Dataset(np.concatenate([self.inputs, other.inputs]),
                       np.concatenate([self.targets, other.targets]),
                       np.concatenate([self.valid_lengths, other.valid_lengths]))


def train_step(weights: ModelWeights, x, y, valid, state: nn.AdamState, rng) -> float:
    prob, cache = forward_train(weights, x, "train", rng)
    loss, grad = nn.bce_loss(prob, y, valid)
    if not np.isfinite(loss):
        raise NumericError(f"non-finite loss {loss}")
    grads = backward(weights, cache, grad)
    grads.pop("input")
    nn.adam_step(weights.params, grads, state)
    return loss


def train(weights: ModelWeights, dataset, train_config: TrainConfig, callback=None):
    """Mini-batch BCE minimization with Adam. Returns ``(weights, per-epoch mean loss)``.

    ``weights`` is updated in place.  Shuffling and dropout draw from a single generator
    seeded by ``train_config.seed``, so runs are reproducible.
    """
    if not isinstance(dataset, Dataset):
        dataset = Dataset.from_pairs(dataset)
    if len(dataset) == 0:
        raise ConfigError("training dataset is empty")
    window = weights.config.window_samples
    if dataset.inputs.shape[1] != window:
        raise ShapeError(f"dataset window {dataset.inputs.shape[1]} != model window {window}")
    dtype = np.dtype(weights.config.dtype)
    rng = np.random.default_rng(train_config.seed)
    state = nn.AdamState(lr=train_config.learning_rate)
    history = []
    for epoch in range(train_config.epochs):
        order = rng.permutation(len(dataset))
        losses, sizes = [], []
        for i in range(0, len(order), train_config.batch_size):
            sel = order[i:i + train_config.batch_size]
            x = dataset.inputs[sel].astype(dtype, copy=False)
            y = dataset.targets[sel].astype(dtype)
            loss = train_step(weights, x, y, dataset.valid_lengths[sel], state, rng)
            losses.append(loss)
            sizes.append(len(sel))
        epoch_loss = float(np.average(losses, weights=sizes))
        history.append(epoch_loss)
        log.info("epoch %d/%d loss %.5f", epoch + 1, train_config.epochs, epoch_loss)
        if callback is not None:
            callback(epoch, epoch_loss)
    return weights, history


def kfold_split(record_ids, k: int, seed=0) -> list:
    """Partition whole records into ``k`` folds; returns ``[(train_ids, test_ids), ...]``."""
    ids = list(record_ids)
    if len(set(ids)) != len(ids):
        raise ConfigError("record ids must be unique")
    if k < 2 or k > len(ids):
        raise ConfigError(f"need 2 <= k <= {len(ids)} records, got k={k}")
    order = np.random.default_rng(seed).permutation(len(ids))
    folds = [[ids[i] for i in chunk] for chunk in np.array_split(order, k)]
    return [([r for j, f in enumerate(folds) if j != i for r in f], folds[i]) for i in range(k)]


# --------------------------------------------------------------------------- persistence


def save_weights(weights: ModelWeights, path) -> Path:
    """Write an ``.npz`` container: one array per parameter plus a JSON ``__meta__`` block."""
    path = Path(path)
    meta = {
        "format_version": weights.version,
        "config": weights.config.to_dict(),
        "manifest": {k: list(v.shape) for k, v in weights.params.items()},
        "dtypes": {k: str(v.dtype) for k, v in weights.params.items()},
    }
    arrays = {k: v for k, v in weights.params.items()}
    arrays["__meta__"] = np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8)
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)
    return path


def load_weights(path, expected_config: ModelConfig | None = None) -> ModelWeights:
    try:
        data = np.load(path, allow_pickle=False)
    except (OSError, ValueError) as exc:
        raise FormatError(f"cannot read weights file {path}: {exc}") from exc
    with data:
        if "__meta__" not in data.files:
            raise FormatError(f"{path}: missing __meta__ block")
        meta = json.loads(bytes(data["__meta__"]).decode())
        if meta.get("format_version") != FORMAT_VERSION:
            raise FormatError(f"{path}: format version {meta.get('format_version')} "
                              f"!= supported {FORMAT_VERSION}")
        config = ModelConfig.from_dict(meta["config"])
        expected = layer_shapes(config)
        manifest = meta["manifest"]
        params = {}
        for name, shape in expected.items():
            if name not in data.files or name not in manifest:
                raise FormatError(f"{path}: layer {name!r} missing")
            arr = data[name]
            if tuple(manifest[name]) != shape or arr.shape != shape:
                raise FormatError(f"{path}: layer {name!r} has shape {tuple(manifest[name])} "
                                  f"(array {arr.shape}), expected {shape}")
            params[name] = arr
        extra = set(manifest) - set(expected)
        if extra:
            raise FormatError(f"{path}: unexpected layers {sorted(extra)}")
    if expected_config is not None:
        mismatch = {k for k, v in expected_config.to_dict().items()
                    if k != "seed" and config.to_dict()[k] != v}
        if mismatch:
            raise ConfigError(f"weights config differs from requested config in {sorted(mismatch)}")
    return ModelWeights(config, params, meta["format_version"])
