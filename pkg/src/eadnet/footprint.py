"""Empirical receptive fields, for checking the analytic ones.

Two probes, both run with bias-free all-ones weights, identity batch norm
(inference mode, zero mean, unit variance) and positive activations so that
nothing cancels:

* impulse response: feed a unit impulse and take the bounding box of the
  nonzero outputs;
* dependency box: back-propagate from one centre output pixel and take the
  bounding box of the nonzero input gradient.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autograd import ParamStore, Var, no_grad
from .cost import receptive_field_report
from .graph import GraphSpec
from .mmrfc import MmrfcBlock, MmrfcConfig, branch_receptive_field, branch_specs
from .network import Model


def neutralise(store: ParamStore) -> None:
    """All-ones weights, zero biases, identity BN, unit PReLU slope; float64."""
    for p in store:
        if p.name.endswith(".weight"):
            val = np.ones(p.value.shape)
        elif p.name.endswith((".bias", ".beta", ".running_mean")):
            val = np.zeros(p.value.shape)
        else:  # gamma, running_var, slope
            val = np.ones(p.value.shape)
        p.value = val
        p.grad = np.zeros_like(val)


def bounding_box(mask: np.ndarray) -> tuple[int, int]:
    """(height, width) of the smallest box holding every True entry of a 2-D mask; (0, 0) if none."""
    rows, cols = np.nonzero(mask)
    if rows.size == 0:
        return 0, 0
    return int(rows.max() - rows.min() + 1), int(cols.max() - cols.min() + 1)


def branch_impulse_footprints(dilation: int, channels: int = 8) -> list[tuple[int, int]]:
    """Bounding boxes of each branch's pre-merge response to a centred unit impulse."""
    store = ParamStore()
    block = MmrfcBlock(MmrfcConfig(channels, dilation), store, "probe")
    neutralise(store)
    h, w = 8 * dilation + 3, 16 * dilation + 3
    size = max(h, w)
    x = np.zeros((1, channels, size, size))
    x[0, :, size // 2, size // 2] = 1.0
    with no_grad():
        _, branches = block.forward(Var(x), training=False, return_branches=True)
    return [bounding_box(np.any(b.value[0] != 0, axis=0)) for b in branches]


@dataclass(frozen=True)
class BranchCheck:
    dilation: int
    index: int
    analytic: tuple[int, int]
    empirical: tuple[int, int]

    @property
    def ok(self) -> bool:
        return self.analytic == self.empirical


def verify_branches(dilations=range(1, 7), channels: int = 8) -> list[BranchCheck]:
    out = []
    for dr in dilations:
        boxes = branch_impulse_footprints(dr, channels)
        for spec, box in zip(branch_specs(dr), boxes):
            out.append(BranchCheck(dr, spec.index, branch_receptive_field(spec), box))
    return out


def dependency_box(model: Model, layer: str, size: tuple[int, int]) -> tuple[int, int]:
    """Bounding box of input pixels that influence the centre pixel of ``layer`` (all channels).

    ``model`` should already be neutralised; the input is all ones of ``size``.
    """
    x = Var(np.ones((1, model.spec.input_channels, *size)), requires_grad=True)
    acts = model(x, training=False, return_all=True)
    y = acts[layer]
    seed = np.zeros(y.shape)
    seed[0, :, y.shape[2] // 2, y.shape[3] // 2] = 1.0
    y.backward(seed)
    return bounding_box(np.any(x.grad[0] != 0, axis=0))


def branch_dependency_boxes(model: Model, layer: str, size: tuple[int, int]) -> list[tuple[int, int]]:
    """Input-pixel dependency box of the centre pixel of each branch of MMRFC ``layer``."""
    block = model.block(layer)
    x = Var(np.ones((1, model.spec.input_channels, *size)), requires_grad=True)
    src = model.spec.layer(layer).inputs[0]
    feats = model(x, training=False, return_all=True)[src]
    _, branches = block.forward(feats, training=False, return_branches=True)
    boxes = []
    for b in branches:
        x.grad = None
        seed = np.zeros(b.shape)
        seed[0, :, b.shape[2] // 2, b.shape[3] // 2] = 1.0
        b.backward(seed)
        boxes.append(bounding_box(np.any(x.grad[0] != 0, axis=0)))
    return boxes


@dataclass(frozen=True)
class LayerCheck:
    name: str
    analytic: tuple[int, int]
    empirical: tuple[int, int] | None  # None when the probe would need too large an input

    @property
    def ok(self) -> bool:
        return self.empirical is None or self.analytic == self.empirical


def verify_layers(spec: GraphSpec, max_side: int = 512) -> list[LayerCheck]:
    """Compare the analytic per-layer receptive fields against dependency boxes.

    Each layer is probed on an input about twice its analytic receptive
    field, so the centre pixel's dependencies never touch the border; layers
    that would need more than ``max_side`` pixels are reported with
    ``empirical=None``.
    """
    rows = receptive_field_report(spec)
    model = Model(spec, seed=0)
    neutralise(model.store)
    step = model.downsample
    out = []
    for row in rows:
        need = [2 * r + 4 * step for r in row.rf]
        side = [-(-n // (2 * step)) * 2 * step for n in need]
        if max(side) > max_side:
            out.append(LayerCheck(row.name, row.rf, None))
            continue
        out.append(LayerCheck(row.name, row.rf, dependency_box(model, row.name, tuple(side))))
    return out


@dataclass(frozen=True)
class SpanCheck:
    layer: str
    index: int
    analytic: tuple[int, int]
    empirical: tuple[int, int] | None

    @property
    def ok(self) -> bool:
        return self.empirical is None or self.analytic == self.empirical


def verify_branch_spans(spec: GraphSpec, max_side: int = 512) -> list[SpanCheck]:
    """Image-pixel branch rectangles of every MMRFC layer against the real network.

    The dependency box of a branch's centre pixel is its image span widened by
    the receptive field of the layers feeding the block, less one pixel.
    """
    rows = {r.name: r for r in receptive_field_report(spec)}
    model = Model(spec, seed=0)
    neutralise(model.store)
    step = model.downsample
    out = []
    for layer in spec:
        if layer.kind != "mmrfc":
            continue
        src = rows[layer.inputs[0]].rf
        expect = [(b.image[0] + src[0] - 1, b.image[1] + src[1] - 1) for b in rows[layer.name].branches]
        need = max(2 * max(e) + 4 * step for e in expect)
        side = -(-need // (2 * step)) * 2 * step
        boxes = branch_dependency_boxes(model, layer.name, (side, side)) if side <= max_side else [None] * 4
        out += [SpanCheck(layer.name, i, e, b) for i, (e, b) in enumerate(zip(expect, boxes), 1)]
    return out

