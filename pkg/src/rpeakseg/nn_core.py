"""Minimal 1D layer library: forward/backward passes, BCE loss, Adam, gradient checking.

All feature maps are ``(batch, channels, length)`` arrays.  A 2D ``(channels, length)``
array is accepted by the forward functions and treated as a batch of one.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ShapeError

BCE_EPS = 1e-7


def _as_batch(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x)
    if x.ndim == 2:
        return x[None]
    if x.ndim != 3:
        raise ShapeError(f"expected (batch, channels, length) array, got shape {x.shape}")
    return x


def same_padding(k: int) -> tuple[int, int]:
    left = (k - 1) // 2
    return left, k - 1 - left


# --------------------------------------------------------------------------- conv


def _im2col(x: np.ndarray, k: int) -> np.ndarray:
    b, c, n = x.shape
    left, right = same_padding(k)
    xp = np.pad(x, ((0, 0), (0, 0), (left, right)))
    win = np.lib.stride_tricks.sliding_window_view(xp, n, axis=2)  # (b, c, k, n)
    return win.reshape(b, c * k, n)


def conv1d_forward(x, w, b, stride: int = 1, return_cols: bool = False):
    """Same-padded cross-correlation. ``w`` is ``(out, in, k)``, ``b`` is ``(out,)``.

    With ``stride > 1`` the stride-1 output is subsampled, so the output length is
    ``ceil(n / stride)``.
    """
    x = _as_batch(x)
    out_ch, in_ch, k = w.shape
    if x.shape[1] != in_ch:
        raise ShapeError(f"conv expects {in_ch} input channels, got {x.shape[1]}")
    if b.shape != (out_ch,):
        raise ShapeError(f"conv bias shape {b.shape} != ({out_ch},)")
    cols = _im2col(x, k)
    y = np.matmul(w.reshape(out_ch, in_ch * k), cols)
    y += b[None, :, None]
    if stride > 1:
        y = y[:, :, ::stride]
    if return_cols:
        return y, cols
    return y


def conv1d_backward(x, w, grad_out, stride: int = 1, cols=None):
    """Return ``(grad_x, grad_w, grad_b)`` for :func:`conv1d_forward`."""
    x = _as_batch(x)
    grad_out = _as_batch(grad_out)
    out_ch, in_ch, k = w.shape
    bsz, _, n = x.shape
    if stride > 1:
        full = np.zeros((bsz, out_ch, n), dtype=grad_out.dtype)
        full[:, :, ::stride] = grad_out
        grad_out = full
    if grad_out.shape != (bsz, out_ch, n):
        raise ShapeError(f"grad_out shape {grad_out.shape} != {(bsz, out_ch, n)}")
    if cols is None:
        cols = _im2col(x, k)
    grad_w = np.tensordot(grad_out, cols, axes=([0, 2], [0, 2])).reshape(w.shape)
    grad_b = grad_out.sum(axis=(0, 2))
    dcols = np.matmul(w.reshape(out_ch, in_ch * k).T, grad_out).reshape(bsz, in_ch, k, n)
    left, _ = same_padding(k)
    dxp = np.zeros((bsz, in_ch, n + k - 1), dtype=dcols.dtype)
    for j in range(k):
        dxp[:, :, j:j + n] += dcols[:, :, j, :]
    return dxp[:, :, left:left + n], grad_w, grad_b


# --------------------------------------------------------------------------- transposed conv


def tconv_crop(k: int) -> int:
    # offset into the full scatter output so that the kept span is exactly 2n long
    return max(k - 2, 0) // 2


def tconv1d_forward(x, w, b):
    """Stride-2 transposed convolution with output length exactly ``2 * n``.

    ``w`` is ``(in, out, k)``.  Input sample ``i`` is scattered to output positions
    ``2i + j - crop`` for taps ``j``.
    """
    x = _as_batch(x)
    in_ch, out_ch, k = w.shape
    if x.shape[1] != in_ch:
        raise ShapeError(f"tconv expects {in_ch} input channels, got {x.shape[1]}")
    if b.shape != (out_ch,):
        raise ShapeError(f"tconv bias shape {b.shape} != ({out_ch},)")
    bsz, _, n = x.shape
    wt = w.transpose(2, 1, 0).reshape(k * out_ch, in_ch)
    z = np.matmul(wt, x).reshape(bsz, k, out_ch, n)
    full = np.zeros((bsz, out_ch, 2 * n + k), dtype=z.dtype)
    for j in range(k):
        full[:, :, j:j + 2 * n:2] += z[:, j]
    c = tconv_crop(k)
    y = full[:, :, c:c + 2 * n]
    y += b[None, :, None]
    return y


def tconv1d_backward(x, w, grad_out):
    """Return ``(grad_x, grad_w, grad_b)`` for :func:`tconv1d_forward`."""
    x = _as_batch(x)
    grad_out = _as_batch(grad_out)
    in_ch, out_ch, k = w.shape
    bsz, _, n = x.shape
    if grad_out.shape != (bsz, out_ch, 2 * n):
        raise ShapeError(f"grad_out shape {grad_out.shape} != {(bsz, out_ch, 2 * n)}")
    c = tconv_crop(k)
    gfull = np.zeros((bsz, out_ch, 2 * n + k), dtype=grad_out.dtype)
    gfull[:, :, c:c + 2 * n] = grad_out
    dz = np.empty((bsz, k, out_ch, n), dtype=grad_out.dtype)
    for j in range(k):
        dz[:, j] = gfull[:, :, j:j + 2 * n:2]
    dz = dz.reshape(bsz, k * out_ch, n)
    wt = w.transpose(2, 1, 0).reshape(k * out_ch, in_ch)
    grad_wt = np.tensordot(dz, x, axes=([0, 2], [0, 2]))
    grad_w = grad_wt.reshape(k, out_ch, in_ch).transpose(2, 1, 0)
    grad_x = np.matmul(wt.T, dz)
    return grad_x, np.ascontiguousarray(grad_w), grad_out.sum(axis=(0, 2))


# --------------------------------------------------------------------------- pooling


def maxpool2_forward(x):
    """Non-overlapping max over sample pairs.

    Returns ``(y, idx)`` where ``idx`` holds the input sample index of each maximum;
    ties resolve to the earlier sample.
    """
    x = _as_batch(x)
    bsz, ch, n = x.shape
    if n % 2:
        raise ShapeError(f"maxpool2 needs an even length, got {n}")
    pairs = x.reshape(bsz, ch, n // 2, 2)
    which = np.argmax(pairs, axis=3)
    y = np.take_along_axis(pairs, which[..., None], axis=3)[..., 0]
    return y, which + 2 * np.arange(n // 2)


def maxpool2_backward(grad_out, idx):
    grad_out = _as_batch(grad_out)
    bsz, ch, half = grad_out.shape
    dx = np.zeros((bsz, ch, half, 2), dtype=grad_out.dtype)
    which = idx - 2 * np.arange(half)
    np.put_along_axis(dx, which[..., None], grad_out[..., None], axis=3)
    return dx.reshape(bsz, ch, 2 * half)


# --------------------------------------------------------------------------- batch norm


@dataclass
class BatchNormCache:
    xhat: np.ndarray
    inv_std: np.ndarray
    gamma: np.ndarray
    train: bool


def batchnorm_forward(x, gamma, beta, running_mean, running_var, mode="train",
                      momentum=0.9, eps=1e-5):
    """Per-channel batch norm over (batch, length).

    In train mode ``running_mean``/``running_var`` are updated in place as
    ``r = momentum * r + (1 - momentum) * batch_stat``.
    """
    x = _as_batch(x)
    if mode == "train":
        mean = x.mean(axis=(0, 2))
        var = x.var(axis=(0, 2))
        running_mean *= momentum
        running_mean += (1 - momentum) * mean
        running_var *= momentum
        running_var += (1 - momentum) * var
    elif mode == "infer":
        mean, var = running_mean, running_var
    else:
        raise ValueError(f"unknown mode {mode!r}")
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x - mean[None, :, None]) * inv_std[None, :, None]
    y = xhat * gamma[None, :, None] + beta[None, :, None]
    return y.astype(x.dtype, copy=False), BatchNormCache(xhat, inv_std, gamma, mode == "train")


def batchnorm_backward(grad_out, cache: BatchNormCache):
    """Return ``(grad_x, grad_gamma, grad_beta)``."""
    g = _as_batch(grad_out)
    xhat = cache.xhat
    grad_gamma = (g * xhat).sum(axis=(0, 2))
    grad_beta = g.sum(axis=(0, 2))
    dxhat = g * cache.gamma[None, :, None]
    if not cache.train:
        return dxhat * cache.inv_std[None, :, None], grad_gamma, grad_beta
    m = g.shape[0] * g.shape[2]
    dx = (dxhat - dxhat.sum(axis=(0, 2), keepdims=True) / m
          - xhat * (dxhat * xhat).sum(axis=(0, 2), keepdims=True) / m)
    return dx * cache.inv_std[None, :, None], grad_gamma, grad_beta


# --------------------------------------------------------------------------- activations


def relu(x):
    return np.maximum(x, 0)


def relu_backward(grad_out, x):
    return grad_out * (x > 0)


def sigmoid(x):
    x = np.asarray(x)
    out = np.empty_like(x, dtype=np.result_type(x, np.float32))
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def softmax2(x):
    """Softmax across a 2-channel axis (axis 1), independently at every position."""
    x = _as_batch(x)
    if x.shape[1] != 2:
        raise ShapeError(f"softmax2 needs exactly 2 channels, got {x.shape[1]}")
    p1 = sigmoid(x[:, 1] - x[:, 0])
    return np.stack([1.0 - p1, p1], axis=1)


def softmax2_backward(grad_p1, p1):
    """Gradient w.r.t. both logits given dL/d(peak probability)."""
    d = grad_p1 * p1 * (1.0 - p1)
    return np.stack([-d, d], axis=1)


def dropout(x, rate: float, mode: str = "train", rng=None):
    """Inverted dropout. Returns ``(y, mask)``; ``mask`` is None when it is the identity."""
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    if mode != "train" or rate == 0.0:
        return x, None
    rng = np.random.default_rng(rng)
    mask = (rng.random(x.shape) >= rate).astype(x.dtype) / (1.0 - rate)
    return x * mask, mask


# --------------------------------------------------------------------------- loss


def valid_mask(shape, valid_length) -> np.ndarray:
    bsz, n = shape
    if valid_length is None:
        return np.ones(shape, dtype=bool)
    vl = np.broadcast_to(np.asarray(valid_length), (bsz,))
    return np.arange(n)[None, :] < vl[:, None]


def bce_loss(pred, target, valid_length=None, eps: float = BCE_EPS):
    """Mean binary cross-entropy over valid positions.

    ``pred``/``target`` are ``(batch, length)`` (or 1D).  ``valid_length`` is a scalar
    or per-item sequence; later positions are padding and contribute nothing.
    Returns ``(loss, grad_pred)``.
    """
    pred = np.asarray(pred)
    target = np.asarray(target)
    squeeze = pred.ndim == 1
    if squeeze:
        pred, target = pred[None], target[None]
    if pred.shape != target.shape:
        raise ShapeError(f"pred shape {pred.shape} != target shape {target.shape}")
    mask = valid_mask(pred.shape, valid_length)
    count = mask.sum()
    if count == 0:
        zero = np.zeros_like(pred)
        return 0.0, zero[0] if squeeze else zero
    p = np.clip(pred, eps, 1.0 - eps)
    terms = target * np.log(p) + (1.0 - target) * np.log1p(-p)
    loss = -float((terms * mask).sum() / count)
    inside = (pred > eps) & (pred < 1.0 - eps)
    grad = -(target / p - (1.0 - target) / (1.0 - p)) * mask * inside / count
    grad = grad.astype(pred.dtype, copy=False)
    return loss, grad[0] if squeeze else grad


# --------------------------------------------------------------------------- Adam


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params: dict, grads: dict, state: AdamState):
    """In-place Adam update with bias correction; returns ``(params, state)``."""
    state.t += 1
    bc1 = 1.0 - state.beta1 ** state.t
    bc2 = 1.0 - state.beta2 ** state.t
    for name, g in grads.items():
        p = params[name]
        if g.shape != p.shape:
            raise ShapeError(f"gradient for {name!r} has shape {g.shape}, parameter {p.shape}")
        if name not in state.m:
            state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
        m, v = state.m[name], state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        p -= (state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)).astype(p.dtype, copy=False)
    return params, state


# --------------------------------------------------------------------------- gradient checking


@dataclass
class GradCheckResult:
    max_rel_error: float
    checked: int
    excluded: int
    worst: str = ""

    def __repr__(self):
        return (f"GradCheckResult(max_rel_error={self.max_rel_error:.3e}, checked={self.checked}, "
                f"excluded={self.excluded}, worst={self.worst!r})")


def grad_check(loss_fn, arrays: dict, analytic: dict, h: float = 1e-5,
               kink_tol: float = 1e-5, atol: float = 1e-10, max_entries=None, rng=None):
    """Compare analytic gradients against central differences with step ``h``.

    ``loss_fn()`` evaluates a scalar from the arrays in ``arrays`` (perturbed in place).

    An entry within ``h`` of a non-differentiable point (ReLU at 0, maxpool tie) is
    excluded rather than failed.  Near such a kink the central differences at ``h``
    and ``h/2`` disagree, or the one-sided slope gap stops scaling linearly with the
    step (on smooth ground it is ``h * f''`` and halves with ``h``); either test
    beyond ``kink_tol`` relative marks the entry.

    The relative error of an entry is ``|a - n| / max(|a|, |n|, 1e-3 * scale)`` where
    ``scale`` is the largest analytic magnitude in that array; absolute agreement
    within ``atol`` counts as exact.
    """
    rng = np.random.default_rng(rng)
    worst, worst_name = 0.0, ""
    checked = excluded = 0
    f0 = loss_fn()
    for name, arr in arrays.items():
        a_grad = np.asarray(analytic[name]).reshape(-1)
        scale = float(np.abs(a_grad).max()) if a_grad.size else 0.0
        flat = arr.reshape(-1)
        idx = np.arange(flat.size)
        if max_entries is not None and flat.size > max_entries:
            idx = np.sort(rng.choice(flat.size, max_entries, replace=False))
        for i in idx:
            orig = flat[i]
            fx = []
            for step in (h, -h, h / 2, -h / 2):
                flat[i] = orig + step
                fx.append(loss_fn())
            flat[i] = orig
            fp, fm, fp2, fm2 = fx
            num = (fp - fm) / (2 * h)
            num2 = (fp2 - fm2) / h
            gap = (fp - 2 * f0 + fm) / h
            gap2 = (fp2 - 2 * f0 + fm2) / (h / 2)
            a = float(a_grad[i])
            size = max(abs(num), abs(a), 1e-3 * scale)
            if (abs(num - num2) > kink_tol * size + atol
                    or abs(gap - 2 * gap2) > kink_tol * size + atol):
                excluded += 1
                continue
            checked += 1
            diff = abs(a - num)
            if diff <= atol:
                continue
            rel = diff / max(size, 1e-300)
            if rel > worst:
                worst, worst_name = rel, f"{name}[{i}]"
    return GradCheckResult(worst, checked, excluded, worst_name)
