"""Parameter-owning building blocks shared by the MMRFC block and the network."""
from __future__ import annotations

import numpy as np

from . import functional as F
from .autograd import ParamStore, Var
from .tensor import ConvParams

PRELU_INIT = 0.25


class Conv2d:
    """Convolution with "same" padding along each axis; registers ``<name>.weight``/``<name>.bias``."""

    def __init__(self, store: ParamStore, name: str, in_channels: int, out_channels: int, kernel,
                 stride=1, dilation=1, groups: int = 1, rng: np.random.Generator | None = None):
        self.name = name
        self.params = ConvParams.same(kernel, dilation=dilation, stride=stride, groups=groups)
        kh, kw = self.params.kernel
        fan_in = in_channels // groups * kh * kw
        rng = rng or np.random.default_rng(0)
        w = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(out_channels, in_channels // groups, kh, kw))
        self.weight = store.add(f"{name}.weight", w)
        self.bias = store.add(f"{name}.bias", np.zeros(out_channels))

    def __call__(self, x) -> Var:
        return F.conv2d(x, self.weight, self.bias, self.params)


class BatchNorm2d:
    def __init__(self, store: ParamStore, name: str, channels: int, momentum: float = 0.1, eps: float = 1e-5):
        self.gamma = store.add(f"{name}.gamma", np.ones(channels))
        self.beta = store.add(f"{name}.beta", np.zeros(channels))
        self.running_mean = store.add(f"{name}.running_mean", np.zeros(channels), trainable=False)
        self.running_var = store.add(f"{name}.running_var", np.ones(channels), trainable=False)
        self.momentum = momentum
        self.eps = eps

    def __call__(self, x, training: bool = False) -> Var:
        return F.batchnorm(x, self.gamma, self.beta, self.running_mean, self.running_var,
                           training, self.momentum, self.eps)


class PReLU:
    def __init__(self, store: ParamStore, name: str, channels: int, init: float = PRELU_INIT):
        self.slope = store.add(f"{name}.slope", np.full(channels, init))

    def __call__(self, x) -> Var:
        return F.prelu(x, self.slope)


class BnAct:
    """BatchNorm followed by PReLU, the post-convolution pair used throughout."""

    def __init__(self, store: ParamStore, name: str, channels: int):
        self.bn = BatchNorm2d(store, f"{name}.bn", channels)
        self.act = PReLU(store, f"{name}.act", channels)

    def __call__(self, x, training: bool = False) -> Var:
        return self.act(self.bn(x, training))


def is_conv_param(name: str) -> bool:
    """True for convolution weights and biases, the quantities the analytical counts cover."""
    return name.endswith(".weight") or name.endswith(".bias")
