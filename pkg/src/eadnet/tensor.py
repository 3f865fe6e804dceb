"""Dense NCHW kernels.

A tensor is a plain rank-4 ``numpy.ndarray`` laid out as (batch, channel,
height, width).  Every function here is pure: inputs are never written to.
Training storage is float32; the same kernels run in float64 when handed
float64 arrays, which is what the gradient checker relies on.

Forward kernels come with the backward helpers the autograd layer needs.
``conv2d_naive`` is the loop-level reference for ``conv2d``.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np


class ShapeError(ValueError):
    """Raised when tensor dimensions do not satisfy an operation's contract."""


def _pair(v) -> tuple[int, int]:
    if isinstance(v, (int, np.integer)):
        return int(v), int(v)
    a, b = v
    return int(a), int(b)


def as_tensor(x, dtype=np.float32) -> np.ndarray:
    arr = np.ascontiguousarray(x, dtype=dtype)
    if arr.ndim != 4:
        raise ShapeError(f"expected a rank-4 (n, c, h, w) tensor, got shape {arr.shape}")
    return arr


def _check4(x: np.ndarray, what: str = "input") -> None:
    if x.ndim != 4:
        raise ShapeError(f"{what} must be rank 4 (n, c, h, w), got shape {x.shape}")


@dataclass(frozen=True)
class ConvParams:
    kernel: tuple[int, int]
    stride: tuple[int, int] = (1, 1)
    dilation: tuple[int, int] = (1, 1)
    padding: tuple[int, int] = (0, 0)
    groups: int = 1
    bias: bool = True

    def __post_init__(self):
        for name in ("kernel", "stride", "dilation", "padding"):
            object.__setattr__(self, name, _pair(getattr(self, name)))
        kh, kw = self.kernel
        if kh < 1 or kw < 1:
            raise ValueError(f"kernel must be positive, got {self.kernel}")
        if min(self.stride) < 1 or min(self.dilation) < 1:
            raise ValueError("stride and dilation must be >= 1")
        if min(self.padding) < 0:
            raise ValueError("padding must be >= 0")
        if self.groups < 1:
            raise ValueError("groups must be >= 1")

    @classmethod
    def same(cls, kernel, dilation=1, stride=1, groups=1, bias=True) -> "ConvParams":
        """Padding ((k-1)*d)/2 per axis, which preserves spatial dims at stride 1."""
        kh, kw = _pair(kernel)
        dh, dw = _pair(dilation)
        return cls((kh, kw), _pair(stride), (dh, dw), ((kh - 1) * dh // 2, (kw - 1) * dw // 2), groups, bias)

    @property
    def effective_kernel(self) -> tuple[int, int]:
        return tuple((k - 1) * d + 1 for k, d in zip(self.kernel, self.dilation))

    def output_hw(self, h: int, w: int) -> tuple[int, int]:
        (eh, ew), (sh, sw), (ph, pw) = self.effective_kernel, self.stride, self.padding
        return (h + 2 * ph - eh) // sh + 1, (w + 2 * pw - ew) // sw + 1


def _check_conv(x, weight, bias, p: ConvParams) -> tuple[int, int]:
    _check4(x)
    _check4(weight, "weight")
    n, c, h, w = x.shape
    oc, icg, kh, kw = weight.shape
    if c % p.groups or oc % p.groups:
        raise ShapeError(f"groups={p.groups} must divide in_channels={c} and out_channels={oc}")
    if icg != c // p.groups or (kh, kw) != p.kernel:
        raise ShapeError(
            f"weight dims {weight.shape} do not match (out_c, {c // p.groups}, {p.kernel[0]}, {p.kernel[1]})"
        )
    if bias is not None and np.shape(bias) != (oc,):
        raise ShapeError(f"bias must have shape ({oc},), got {np.shape(bias)}")
    (eh, ew), (ph, pw) = p.effective_kernel, p.padding
    if eh > h + 2 * ph or ew > w + 2 * pw:
        raise ShapeError(f"effective kernel {(eh, ew)} exceeds padded input {(h + 2 * ph, w + 2 * pw)}")
    oh, ow = p.output_hw(h, w)
    if n == 0 or oh < 1 or ow < 1:
        raise ShapeError(f"convolution output would be empty: {(n, oc, oh, ow)}")
    return oh, ow


def _pad(x: np.ndarray, p: ConvParams) -> np.ndarray:
    ph, pw = p.padding
    if ph == 0 and pw == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (ph, ph), (pw, pw)))


def _taps(p: ConvParams, oh: int, ow: int):
    (kh, kw), (sh, sw), (dh, dw) = p.kernel, p.stride, p.dilation
    for a in range(kh):
        for b in range(kw):
            yield (
                slice(a * dh, a * dh + sh * (oh - 1) + 1, sh),
                slice(b * dw, b * dw + sw * (ow - 1) + 1, sw),
            )


def _im2col(x: np.ndarray, p: ConvParams, oh: int, ow: int) -> np.ndarray:
    """Columns of shape (n, groups, c/groups * kh*kw, oh*ow)."""
    n, c = x.shape[:2]
    xp = _pad(x, p)
    cols = np.stack([xp[:, :, rs, cs] for rs, cs in _taps(p, oh, ow)], axis=2)
    return cols.reshape(n, p.groups, (c // p.groups) * p.kernel[0] * p.kernel[1], oh * ow)


def conv2d(x: np.ndarray, weight: np.ndarray, bias=None, params: ConvParams | None = None) -> np.ndarray:
    """Grouped, dilated, strided 2-D cross-correlation.

    ``weight`` has dims (out_c, in_c/groups, kh, kw).  Implemented as one
    batched matmul per group over im2col columns.
    """
    return conv2d_forward(x, weight, bias, params)[0]


def conv2d_forward(x, weight, bias=None, params: ConvParams | None = None):
    """Like :func:`conv2d` but also returns the im2col columns for the backward pass."""
    p = params or ConvParams(weight.shape[2:])
    oh, ow = _check_conv(x, weight, bias, p)
    n = x.shape[0]
    oc = weight.shape[0]
    g = p.groups
    cols = _im2col(x, p, oh, ow)
    wmat = weight.reshape(g, oc // g, -1)
    out = np.matmul(wmat[None], cols).reshape(n, oc, oh, ow)
    if bias is not None:
        out = out + np.asarray(bias, dtype=out.dtype).reshape(1, oc, 1, 1)
    return out, cols


def conv2d_backward(grad_out, x_shape, weight, params: ConvParams, cols, need_input_grad=True):
    """Gradients (input, weight, bias) of conv2d given upstream ``grad_out``."""
    n, c, h, w = x_shape
    oc = weight.shape[0]
    g = params.groups
    _, _, oh, ow = grad_out.shape
    go = grad_out.reshape(n, g, oc // g, oh * ow)
    gw = np.matmul(go, cols.transpose(0, 1, 3, 2)).sum(axis=0).reshape(weight.shape)
    gb = grad_out.sum(axis=(0, 2, 3))
    gx = None
    if need_input_grad:
        wmat = weight.reshape(g, oc // g, -1)
        dcols = np.matmul(wmat.transpose(0, 2, 1)[None], go)
        kk = params.kernel[0] * params.kernel[1]
        dcols = dcols.reshape(n, c, kk, oh, ow)
        ph, pw = params.padding
        gxp = np.zeros((n, c, h + 2 * ph, w + 2 * pw), dtype=grad_out.dtype)
        for t, (rs, cs) in enumerate(_taps(params, oh, ow)):
            gxp[:, :, rs, cs] += dcols[:, :, t]
        gx = gxp[:, :, ph:ph + h, pw:pw + w]
    return gx, gw, gb


def conv2d_naive(x: np.ndarray, weight: np.ndarray, bias=None, params: ConvParams | None = None) -> np.ndarray:
    """Direct-definition convolution as literal loops, accumulating in float64."""
    p = params or ConvParams(weight.shape[2:])
    oh, ow = _check_conv(x, weight, bias, p)
    n, c, h, w = x.shape
    oc, icg, kh, kw = weight.shape
    ocg = oc // p.groups
    (sh, sw), (dh, dw), (ph, pw) = p.stride, p.dilation, p.padding
    out = np.zeros((n, oc, oh, ow), dtype=np.float64)
    for b in range(n):
        for o in range(oc):
            g = o // ocg
            for i in range(oh):
                for j in range(ow):
                    acc = 0.0 if bias is None else float(bias[o])
                    for ci in range(icg):
                        cin = g * icg + ci
                        for a in range(kh):
                            r = i * sh + a * dh - ph
                            if r < 0 or r >= h:
                                continue
                            for bb in range(kw):
                                s = j * sw + bb * dw - pw
                                if 0 <= s < w:
                                    acc += float(x[b, cin, r, s]) * float(weight[o, ci, a, bb])
                    out[b, o, i, j] = acc
    return out.astype(np.result_type(x, weight), copy=False)


@dataclass(frozen=True)
class PReluParams:
    slope: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "slope", np.asarray(self.slope).reshape(-1))


@dataclass(frozen=True)
class BatchNormParams:
    gamma: np.ndarray
    beta: np.ndarray
    running_mean: np.ndarray
    running_var: np.ndarray
    epsilon: float = 1e-5

    def __post_init__(self):
        vecs = [np.asarray(getattr(self, k)).reshape(-1) for k in ("gamma", "beta", "running_mean", "running_var")]
        if len({v.shape for v in vecs}) != 1:
            raise ShapeError("batch-norm vectors must all have the same length")
        if np.any(vecs[3] < 0):
            raise ValueError("running_var must be non-negative")
        for k, v in zip(("gamma", "beta", "running_mean", "running_var"), vecs):
            object.__setattr__(self, k, v)

    @classmethod
    def identity(cls, channels: int, epsilon: float = 1e-5) -> "BatchNormParams":
        return cls(np.ones(channels), np.zeros(channels), np.zeros(channels), np.ones(channels), epsilon)


def _channel_vec(v, x, what):
    v = np.asarray(v)
    if v.shape != (x.shape[1],):
        raise ShapeError(f"{what} has length {v.size}, input has {x.shape[1]} channels")
    return v.astype(x.dtype, copy=False).reshape(1, -1, 1, 1)


def prelu(x: np.ndarray, params: PReluParams) -> np.ndarray:
    _check4(x)
    a = _channel_vec(params.slope, x, "slope")
    return np.where(x >= 0, x, a * x)


def prelu_backward(grad_out, x, slope):
    a = _channel_vec(slope, x, "slope")
    neg = x < 0
    gx = np.where(neg, a * grad_out, grad_out)
    gs = np.where(neg, grad_out * x, 0).sum(axis=(0, 2, 3))
    return gx, gs


def batchnorm_infer(x: np.ndarray, params: BatchNormParams) -> np.ndarray:
    _check4(x)
    if np.any(np.asarray(params.running_var) < 0):
        raise ValueError("negative running variance")
    mean = _channel_vec(params.running_mean, x, "running_mean")
    var = _channel_vec(params.running_var, x, "running_var")
    scale = _channel_vec(params.gamma, x, "gamma") / np.sqrt(var + params.epsilon)
    return (x - mean) * scale + _channel_vec(params.beta, x, "beta")


def batchnorm_train(x, gamma, beta, eps=1e-5):
    """Normalise with batch statistics.  Returns (out, cache, batch_mean, batch_var_unbiased)."""
    _check4(x)
    m = x.shape[0] * x.shape[2] * x.shape[3]
    mean = x.mean(axis=(0, 2, 3), keepdims=True)
    xc = x - mean
    var = (xc * xc).mean(axis=(0, 2, 3), keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = xhat * _channel_vec(gamma, x, "gamma") + _channel_vec(beta, x, "beta")
    unbiased = var.reshape(-1) * (m / max(m - 1, 1))
    return out, (xhat, inv), mean.reshape(-1), unbiased


def batchnorm_train_backward(grad_out, gamma, cache):
    xhat, inv = cache
    g = _channel_vec(gamma, grad_out, "gamma")
    ggamma = (grad_out * xhat).sum(axis=(0, 2, 3))
    gbeta = grad_out.sum(axis=(0, 2, 3))
    gxhat = grad_out * g
    gx = inv * (gxhat - gxhat.mean(axis=(0, 2, 3), keepdims=True)
                - xhat * (gxhat * xhat).mean(axis=(0, 2, 3), keepdims=True))
    return gx, ggamma, gbeta


def concat_channels(inputs) -> np.ndarray:
    inputs = list(inputs)
    if not inputs:
        raise ShapeError("concat_channels needs at least one input")
    for t in inputs:
        _check4(t)
    n, _, h, w = inputs[0].shape
    for t in inputs[1:]:
        if (t.shape[0], t.shape[2], t.shape[3]) != (n, h, w):
            raise ShapeError(f"cannot concatenate {inputs[0].shape} with {t.shape}: batch/spatial dims differ")
    return np.concatenate(inputs, axis=1)


def maxpool2x2(x: np.ndarray) -> np.ndarray:
    return maxpool2x2_forward(x)[0]


def maxpool2x2_forward(x):
    _check4(x)
    n, c, h, w = x.shape
    if h < 2 or w < 2:
        raise ShapeError(f"maxpool2x2 needs h, w >= 2, got {(h, w)}")
    oh, ow = h // 2, w // 2
    win = x[:, :, :2 * oh, :2 * ow].reshape(n, c, oh, 2, ow, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, oh, ow, 4)
    idx = win.argmax(axis=-1)
    out = np.take_along_axis(win, idx[..., None], axis=-1)[..., 0]
    return out, idx


def maxpool2x2_backward(grad_out, x_shape, idx):
    n, c, h, w = x_shape
    oh, ow = grad_out.shape[2:]
    win = np.zeros((n, c, oh, ow, 4), dtype=grad_out.dtype)
    np.put_along_axis(win, idx[..., None], grad_out[..., None], axis=-1)
    gx = np.zeros(x_shape, dtype=grad_out.dtype)
    gx[:, :, :2 * oh, :2 * ow] = win.reshape(n, c, oh, ow, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, 2 * oh, 2 * ow)
    return gx


@lru_cache(maxsize=64)
def interp_matrix(n_in: int, n_out: int) -> np.ndarray:
    """Row i holds the half-pixel-centre bilinear weights of output sample i."""
    m = np.zeros((n_out, n_in))
    src = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
    src = np.clip(src, 0, n_in - 1)
    i0 = np.floor(src).astype(int)
    i1 = np.minimum(i0 + 1, n_in - 1)
    frac = src - i0
    rows = np.arange(n_out)
    np.add.at(m, (rows, i0), 1 - frac)
    np.add.at(m, (rows, i1), frac)
    m.setflags(write=False)
    return m


def bilinear_resize(x: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    _check4(x)
    if out_h < 1 or out_w < 1:
        raise ShapeError(f"target size must be positive, got {(out_h, out_w)}")
    ah = interp_matrix(x.shape[2], out_h).astype(x.dtype)
    aw = interp_matrix(x.shape[3], out_w).astype(x.dtype)
    return np.matmul(np.matmul(ah, x), aw.T)


def bilinear_resize_backward(grad_out, in_h, in_w):
    ah = interp_matrix(in_h, grad_out.shape[2]).astype(grad_out.dtype)
    aw = interp_matrix(in_w, grad_out.shape[3]).astype(grad_out.dtype)
    return np.matmul(np.matmul(ah.T, grad_out), aw)


def softmax_channels(x: np.ndarray) -> np.ndarray:
    _check4(x)
    if x.shape[1] < 1:
        raise ShapeError("softmax needs at least one channel")
    e = np.exp(x - x.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


def softmax_channels_backward(grad_out, s):
    return s * (grad_out - (grad_out * s).sum(axis=1, keepdims=True))
