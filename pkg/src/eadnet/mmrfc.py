"""Multi-scale multi-shape receptive field convolution (MMRFC) block.

Four branches each compress C -> C/8 with a pointwise convolution and then
apply a dilated 3x1 followed by a dilated 1x3 convolution (PReLU between).
Branch 1 uses full asymmetric convolutions at dilation (1, 1); branches 2-4
are depthwise at (dr, dr), (2dr, 4dr) and (4dr, 2dr), giving square, wide
and tall receptive-field rectangles.  The concatenated C/2 channels are
doubled by a 3x3 depthwise transform concatenated with its own input, and
a pointwise convolution fuses them back to C channels.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import functional as F
from .autograd import ParamStore, Var, as_var
from .layers import BnAct, Conv2d, PReLU

MAX_CHANNELS = 128
MAX_BASE_DILATION = 6


@dataclass(frozen=True)
class MmrfcConfig:
    channels: int
    dilation: int = 1

    def __post_init__(self):
        c, dr = self.channels, self.dilation
        if c < 8 or c % 8 or c > MAX_CHANNELS:
            raise ValueError(f"MMRFC channels must be a positive multiple of 8 no larger than {MAX_CHANNELS}, got {c}")
        if not 1 <= dr <= MAX_BASE_DILATION:
            raise ValueError(f"base dilation must lie in [1, {MAX_BASE_DILATION}], got {dr}")


@dataclass(frozen=True)
class BranchSpec:
    index: int
    d1: int  # dilation of the 3x1 convolution
    d2: int  # dilation of the 1x3 convolution
    depthwise: bool


def branch_specs(dr: int) -> list[BranchSpec]:
    return [
        BranchSpec(1, 1, 1, False),
        BranchSpec(2, dr, dr, True),
        BranchSpec(3, 2 * dr, 4 * dr, True),
        BranchSpec(4, 4 * dr, 2 * dr, True),
    ]


def branch_receptive_field(spec: BranchSpec) -> tuple[int, int]:
    """(height, width) covered by a dilated 3x1 followed by a dilated 1x3."""
    return 2 * spec.d1 + 1, 2 * spec.d2 + 1


class _Branch:
    def __init__(self, store, prefix, c, spec: BranchSpec, rng):
        cb = c // 8
        groups = cb if spec.depthwise else 1
        self.spec = spec
        self.pw = Conv2d(store, f"{prefix}.pw", c, cb, 1, rng=rng)
        self.pw_post = BnAct(store, f"{prefix}.pw", cb)
        self.conv3x1 = Conv2d(store, f"{prefix}.conv3x1", cb, cb, (3, 1), dilation=(spec.d1, 1), groups=groups, rng=rng)
        self.mid_act = PReLU(store, f"{prefix}.mid.act", cb)
        self.conv1x3 = Conv2d(store, f"{prefix}.conv1x3", cb, cb, (1, 3), dilation=(1, spec.d2), groups=groups, rng=rng)
        self.out_post = BnAct(store, f"{prefix}.out", cb)

    def __call__(self, x, training):
        y = self.pw_post(self.pw(x), training)
        y = self.mid_act(self.conv3x1(y))
        return self.out_post(self.conv1x3(y), training)


class MmrfcBlock:
    def __init__(self, config: MmrfcConfig, store: ParamStore, name_prefix: str, rng=None):
        rng = rng or np.random.default_rng(0)
        c = config.channels
        self.config = config
        self.name = name_prefix
        self.branches = [_Branch(store, f"{name_prefix}.b{s.index}", c, s, rng) for s in branch_specs(config.dilation)]
        self.transform = Conv2d(store, f"{name_prefix}.fuse.dw", c // 2, c // 2, 3, groups=c // 2, rng=rng)
        self.fuse = Conv2d(store, f"{name_prefix}.fuse.pw", c, c, 1, rng=rng)
        self.fuse_post = BnAct(store, f"{name_prefix}.fuse", c)

    def __call__(self, x, training: bool = False) -> Var:
        return self.forward(x, training)

    def forward(self, x, training: bool = False, return_branches: bool = False):
        x = as_var(x)
        if x.shape[1] != self.config.channels:
            raise ValueError(f"{self.name}: expected {self.config.channels} input channels, got {x.shape[1]}")
        outs = [b(x, training) for b in self.branches]
        merged = F.concat(outs)
        doubled = F.concat([merged, self.transform(merged)])
        y = self.fuse_post(self.fuse(doubled), training)
        return (y, outs) if return_branches else y


def build_mmrfc(config: MmrfcConfig, store: ParamStore, name_prefix: str, rng=None) -> MmrfcBlock:
    return MmrfcBlock(config, store, name_prefix, rng)


def mmrfc_forward(block: MmrfcBlock, x, training: bool = False) -> Var:
    return block.forward(x, training)
