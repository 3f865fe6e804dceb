"""Differentiable versions of the tensor kernels.

Each function accepts :class:`~eadnet.autograd.Var` (or raw arrays) and
returns a ``Var`` whose backward closure calls the matching kernel in
:mod:`eadnet.tensor`.
"""
from __future__ import annotations

import contextlib

import numpy as np

from . import tensor as T
from .autograd import Var, as_var, record

IGNORE_INDEX = 255

# Active kink monitors: lists receiving the branch pattern of every PReLU / max-pool evaluated.
_kink_monitors: list[list[bytes]] = []


@contextlib.contextmanager
def record_kinks():
    """Collect the sign/argmax patterns of piecewise-linear ops evaluated inside the block.

    Two evaluations lie on the same linear piece iff their patterns are equal.
    """
    log: list[bytes] = []
    _kink_monitors.append(log)
    try:
        yield log
    finally:
        _kink_monitors.remove(log)


def _note_kinks(pattern: np.ndarray) -> None:
    for log in _kink_monitors:
        log.append(np.packbits(pattern.astype(bool)).tobytes() if pattern.dtype == bool else pattern.tobytes())


def conv2d(x, weight, bias=None, params: T.ConvParams | None = None) -> Var:
    x, weight = as_var(x), as_var(weight)
    bias = None if bias is None else as_var(bias)
    p = params or T.ConvParams(weight.shape[2:])
    out, cols = T.conv2d_forward(x.value, weight.value, None if bias is None else bias.value, p)
    x_shape = x.shape
    w = weight.value

    def backward(g):
        gx, gw, gb = T.conv2d_backward(g, x_shape, w, p, cols, need_input_grad=x.requires_grad)
        return (gx, gw) if bias is None else (gx, gw, gb)

    parents = (x, weight) if bias is None else (x, weight, bias)
    return record(out, parents, backward)


def prelu(x, slope) -> Var:
    x, slope = as_var(x), as_var(slope)
    xv = x.value
    out = T.prelu(xv, T.PReluParams(slope.value))
    if _kink_monitors:
        _note_kinks(xv < 0)

    def backward(g):
        return T.prelu_backward(g, xv, slope.value)

    return record(out, (x, slope), backward)


def batchnorm(x, gamma, beta, running_mean, running_var, training: bool, momentum: float = 0.1, eps: float = 1e-5) -> Var:
    """Batch statistics (and running-stat update) in training, stored statistics otherwise.

    ``running_mean``/``running_var`` are parameters whose values are
    replaced in place during training.
    """
    x, gamma, beta = as_var(x), as_var(gamma), as_var(beta)
    if not training:
        params = T.BatchNormParams(gamma.value, beta.value, running_mean.value, running_var.value, eps)
        out = T.batchnorm_infer(x.value, params)
        inv = (1.0 / np.sqrt(running_var.value + eps)).astype(x.dtype).reshape(1, -1, 1, 1)
        scale = gamma.value.astype(x.dtype).reshape(1, -1, 1, 1) * inv
        xhat = (x.value - running_mean.value.astype(x.dtype).reshape(1, -1, 1, 1)) * inv

        def backward(g):
            return g * scale, (g * xhat).sum(axis=(0, 2, 3)), g.sum(axis=(0, 2, 3))

        return record(out.astype(x.dtype, copy=False), (x, gamma, beta), backward)

    out, cache, mean, var = T.batchnorm_train(x.value, gamma.value, beta.value, eps)
    running_mean.value = ((1 - momentum) * running_mean.value + momentum * mean).astype(running_mean.dtype)
    running_var.value = ((1 - momentum) * running_var.value + momentum * var).astype(running_var.dtype)
    gv = gamma.value

    def backward(g):
        return T.batchnorm_train_backward(g, gv, cache)

    return record(out, (x, gamma, beta), backward)


def concat(xs) -> Var:
    xs = [as_var(x) for x in xs]
    out = T.concat_channels([x.value for x in xs])
    bounds = np.cumsum([0] + [x.shape[1] for x in xs])

    def backward(g):
        return tuple(g[:, a:b] for a, b in zip(bounds[:-1], bounds[1:]))

    return record(out, xs, backward)


def maxpool2x2(x) -> Var:
    x = as_var(x)
    out, idx = T.maxpool2x2_forward(x.value)
    if _kink_monitors:
        _note_kinks(idx.astype(np.uint8))
    shape = x.shape

    def backward(g):
        return (T.maxpool2x2_backward(g, shape, idx),)

    return record(out, (x,), backward)


def bilinear_resize(x, out_h: int, out_w: int) -> Var:
    x = as_var(x)
    out = T.bilinear_resize(x.value, out_h, out_w)
    h, w = x.shape[2:]

    def backward(g):
        return (T.bilinear_resize_backward(g, h, w),)

    return record(out, (x,), backward)


def softmax_channels(x) -> Var:
    x = as_var(x)
    s = T.softmax_channels(x.value)

    def backward(g):
        return (T.softmax_channels_backward(g, s),)

    return record(s, (x,), backward)


def cross_entropy_loss(logits: np.ndarray, labels: np.ndarray, ignore_index: int = IGNORE_INDEX,
                       reduction: str = "sum") -> tuple[float, np.ndarray]:
    """Per-pixel cross-entropy and its gradient with respect to ``logits``.

    ``reduction="sum"`` adds the per-pixel terms; ``"mean"`` divides loss and
    gradient by the number of non-ignored pixels.
    """
    T._check4(logits)
    n, k, h, w = logits.shape
    labels = np.asarray(labels)
    if labels.shape != (n, h, w):
        raise T.ShapeError(f"labels must have shape {(n, h, w)}, got {labels.shape}")
    valid = labels != ignore_index
    bad = valid & ((labels < 0) | (labels >= k))
    if bad.any():
        raise ValueError(f"label values must lie in [0, {k}) or equal {ignore_index}; found {np.unique(labels[bad])}")
    safe = np.where(valid, labels, 0).astype(np.int64)

    shifted = logits - logits.max(axis=1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    logp = shifted - log_z
    picked = np.take_along_axis(logp, safe[:, None], axis=1)[:, 0]
    loss = float(-(picked * valid).sum())

    grad = np.exp(logp)
    onehot = np.zeros_like(grad)
    np.put_along_axis(onehot, safe[:, None], 1, axis=1)
    grad = (grad - onehot) * valid[:, None]

    if reduction == "mean":
        count = int(valid.sum())
        if count:
            loss /= count
            grad /= count
    elif reduction != "sum":
        raise ValueError(f"unknown reduction {reduction!r}")
    return loss, grad.astype(logits.dtype, copy=False)


def cross_entropy(logits, labels, ignore_index: int = IGNORE_INDEX, reduction: str = "mean") -> Var:
    logits = as_var(logits)
    loss, grad = cross_entropy_loss(logits.value, labels, ignore_index, reduction)

    def backward(g):
        return (grad * g,)

    return record(np.asarray(loss, dtype=logits.dtype), (logits,), backward)


def weighted_sum(x, weights) -> Var:
    """sum(x * weights) as a scalar; the usual probe for gradient checks."""
    x = as_var(x)
    wts = np.asarray(weights, dtype=x.dtype)

    def backward(g):
        return (g * wts,)

    return record(np.asarray((x.value * wts).sum(), dtype=x.dtype), (x,), backward)
