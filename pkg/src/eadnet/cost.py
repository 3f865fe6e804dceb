"""Analytical parameter, FLOPs and receptive-field accounting.

FLOPs follow the convention ``params x output positions`` for every
convolution, i.e. one multiply-accumulate per weight per output pixel plus
the bias add.  ``macs`` (weights only, no bias) are kept alongside so the
conventional ``2 x MAC`` figure can be reported too.

Batch norm and PReLU scalars are tracked as ``params_aux`` and excluded from
``params``.  Concat and bilinear upsampling have no parameters; upsampling
costs 4 multiply-adds per output element.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from fractions import Fraction

from .graph import INPUT, GraphError, GraphSpec, LayerSpec
from .layers import is_conv_param
from .mmrfc import branch_receptive_field, branch_specs

UPSAMPLE_FLOPS_PER_OUTPUT = 4


def _check_channels(C: int) -> None:
    if C < 8 or C % 8:
        raise ValueError(f"C must be a positive multiple of 8, got {C}")


def mmrfc_branch_params(C: int, i: int) -> int:
    """Convolution parameters of branch ``i`` (1-4) of an MMRFC block with ``C`` input channels."""
    _check_channels(C)
    c8 = C // 8
    if i == 1:
        return (C + 1) * c8 + (3 * c8 + 1) * c8 * 2
    if i in (2, 3, 4):
        return (C + 1) * c8 + (3 + 1) * c8 * 2
    raise ValueError(f"branch index must be 1-4, got {i}")


def mmrfc_fusion_params(C: int) -> int:
    if C < 2 or C % 2:
        raise ValueError(f"C must be a positive even number, got {C}")
    return (3 * 3 + 1) * (C // 2) + (C + 1) * C


def mmrfc_total_params(C: int) -> int:
    return sum(mmrfc_branch_params(C, i) for i in range(1, 5)) + mmrfc_fusion_params(C)


def mmrfc_flops(C: int, W: int, H: int) -> int:
    if W < 1 or H < 1:
        raise ValueError("W and H must be positive")
    return mmrfc_total_params(C) * W * H


def plain_conv3x3_params(C: int) -> int:
    """A standard 3x3 convolution C -> C with bias."""
    return (3 * 3 * C + 1) * C


@dataclass(frozen=True)
class ConvShape:
    name: str
    kernel: tuple[int, int]
    in_channels: int
    out_channels: int
    groups: int
    out_hw: tuple[int, int]

    @property
    def weights(self) -> int:
        return self.kernel[0] * self.kernel[1] * (self.in_channels // self.groups) * self.out_channels

    @property
    def params(self) -> int:
        return self.weights + self.out_channels

    @property
    def flops(self) -> int:
        return self.params * self.out_hw[0] * self.out_hw[1]

    @property
    def macs(self) -> int:
        return self.weights * self.out_hw[0] * self.out_hw[1]


def _conv_out(n: int, k: int, stride: int, dilation: int) -> int:
    eff = (k - 1) * dilation + 1
    return (n + 2 * ((eff - 1) // 2) - eff) // stride + 1


def expand_layer(layer: LayerSpec, in_shapes: list[tuple[int, int, int]]):
    """Convolutions inside ``layer``, its output (c, h, w), aux parameter count and non-conv FLOPs."""
    k, a, name = layer.kind, layer.attrs, layer.name
    c, h, w = in_shapes[0]
    convs: list[ConvShape] = []

    def need_channels(expected):
        if c != expected:
            raise GraphError(f"layer {name!r} expects {expected} input channels, got {c}")

    if k == "conv":
        need_channels(a["in_channels"])
        s = a["stride"]
        oh = _conv_out(h, a["kernel_h"], s, a["dilation_h"])
        ow = _conv_out(w, a["kernel_w"], s, a["dilation_w"])
        convs.append(ConvShape(name, (a["kernel_h"], a["kernel_w"]), c, a["out_channels"], a["groups"], (oh, ow)))
        return convs, (a["out_channels"], oh, ow), 0, 0
    if k == "concat-conv":
        need_channels(a["in_channels"])
        cout = a["out_channels"]
        oh, ow = _conv_out(h, 3, 2, 1), _conv_out(w, 3, 2, 1)
        if (oh, ow) != (h // 2, w // 2):
            raise GraphError(f"layer {name!r}: odd input {h}x{w} cannot be split by conv and pool alike")
        convs.append(ConvShape(f"{name}.conv", (3, 3), c, cout - c, 1, (oh, ow)))
        return convs, (cout, oh, ow), 5 * cout, 0
    if k in ("seq-dw-conv", "dw-conv"):
        need_channels(a["channels"])
        for i in range(1, a["stages"] + 1):
            h, w = _conv_out(h, 3, 2, 1), _conv_out(w, 3, 2, 1)
            convs.append(ConvShape(f"{name}.dw{i}", (3, 3), c, c, c, (h, w)))
        return convs, (c, h, w), 5 * c * a["stages"], 0
    if k == "mmrfc":
        need_channels(a["channels"])
        cb = c // 8
        for b in branch_specs(a["dilation"]):
            g = cb if b.depthwise else 1
            convs += [ConvShape(f"{name}.b{b.index}.pw", (1, 1), c, cb, 1, (h, w)),
                      ConvShape(f"{name}.b{b.index}.conv3x1", (3, 1), cb, cb, g, (h, w)),
                      ConvShape(f"{name}.b{b.index}.conv1x3", (1, 3), cb, cb, g, (h, w))]
        convs += [ConvShape(f"{name}.fuse.dw", (3, 3), c // 2, c // 2, c // 2, (h, w)),
                  ConvShape(f"{name}.fuse.pw", (1, 1), c, c, 1, (h, w))]
        aux = 4 * 11 * cb + 5 * c
        return convs, (c, h, w), aux, 0
    if k == "concat":
        if len({s[1:] for s in in_shapes}) != 1:
            raise GraphError(f"layer {name!r} concatenates mismatched spatial dims {in_shapes}")
        return convs, (sum(s[0] for s in in_shapes), h, w), 0, 0
    if k == "pointwise-classifier":
        need_channels(a["in_channels"])
        convs.append(ConvShape(name, (1, 1), c, a["out_channels"], 1, (h, w)))
        return convs, (a["out_channels"], h, w), 0, 0
    if k == "bilinear-up":
        s = a["scale"]
        out = (c, h * s, w * s)
        return convs, out, 0, UPSAMPLE_FLOPS_PER_OUTPUT * c * h * s * w * s
    raise GraphError(f"unsupported layer kind {k!r}")


def _rf_growth(layer: LayerSpec) -> tuple[tuple[int, int], int]:
    """Per-axis receptive-field growth in units of the input jump, and the layer stride.

    For layers with parallel paths the growth is the maximum over paths.
    """
    k, a = layer.kind, layer.attrs
    if k == "conv":
        return ((a["kernel_h"] - 1) * a["dilation_h"], (a["kernel_w"] - 1) * a["dilation_w"]), a["stride"]
    if k == "concat-conv":
        return (2, 2), 2  # 3x3 conv path covers the 2x2 pool window
    if k in ("seq-dw-conv", "dw-conv"):
        # stage i of a stride-2 chain sits at jump 2**(i-1)
        g = sum(2 * 2 ** i for i in range(a["stages"]))
        return (g, g), 2 ** a["stages"]
    if k == "mmrfc":
        rects = [branch_receptive_field(b) for b in branch_specs(a["dilation"])]
        return (max(r[0] for r in rects) - 1 + 2, max(r[1] for r in rects) - 1 + 2), 1
    return (0, 0), 1


@dataclass
class LayerCost:
    name: str
    kind: str
    params: int
    params_aux: int
    flops: int
    macs: int
    out_shape: tuple[int, int, int]
    rf: tuple[int, int] | None


@dataclass
class CostReport:
    layers: list[LayerCost] = field(default_factory=list)

    @property
    def total_params(self) -> int:
        return sum(l.params for l in self.layers)

    @property
    def total_params_aux(self) -> int:
        return sum(l.params_aux for l in self.layers)

    @property
    def total_flops(self) -> int:
        return sum(l.flops for l in self.layers)

    @property
    def total_macs(self) -> int:
        return sum(l.macs for l in self.layers)

    def to_dict(self) -> dict:
        return {
            "layers": [{"name": l.name, "kind": l.kind, "params": l.params, "params_aux": l.params_aux,
                        "flops": l.flops, "macs": l.macs, "out_shape": list(l.out_shape),
                        "rf": None if l.rf is None else list(l.rf)} for l in self.layers],
            "total_params": self.total_params,
            "total_params_aux": self.total_params_aux,
            "total_flops": self.total_flops,
            "total_flops_2mac": 2 * self.total_macs,
        }

    def to_json(self, indent: int | None = 2) -> str:
        return json.dumps(self.to_dict(), indent=indent)

    @classmethod
    def from_dict(cls, d: dict) -> "CostReport":
        layers = []
        for l in d["layers"]:
            layers.append(LayerCost(l["name"], l["kind"], int(l["params"]), int(l["params_aux"]), int(l["flops"]),
                                    int(l["macs"]), tuple(l["out_shape"]), None if l["rf"] is None else tuple(l["rf"])))
        report = cls(layers)
        for key in ("total_params", "total_params_aux", "total_flops"):
            if getattr(report, key) != d[key]:
                raise ValueError(f"{key} = {d[key]} does not equal the sum of layer records")
        if d["total_flops_2mac"] != 2 * report.total_macs:
            raise ValueError("total_flops_2mac does not equal twice the summed layer MACs")
        return report

    @classmethod
    def from_json(cls, text: str) -> "CostReport":
        return cls.from_dict(json.loads(text))


@dataclass(frozen=True)
class _RfState:
    rf: tuple[int, int]
    jump: tuple[Fraction, Fraction]


def _compose_rf(layer: LayerSpec, ins: list[_RfState]) -> _RfState:
    rf = tuple(max(s.rf[i] for s in ins) for i in range(2))
    jump = tuple(max(s.jump[i] for s in ins) for i in range(2))
    if layer.kind == "bilinear-up":
        # each output sample blends two neighbouring inputs per axis
        s = layer["scale"]
        return _RfState(tuple(int(r + j) for r, j in zip(rf, jump)), tuple(j / s for j in jump))
    (gh, gw), stride = _rf_growth(layer)
    new_rf = (rf[0] + gh * jump[0], rf[1] + gw * jump[1])
    return _RfState(tuple(int(v) for v in new_rf), (jump[0] * stride, jump[1] * stride))


def analyze_graph(spec: GraphSpec, input_dims) -> CostReport:
    """Per-layer cost records for ``spec`` evaluated at ``input_dims`` = (H, W) or (n, c, H, W)."""
    if len(input_dims) == 4:
        _, c0, H, W = input_dims
    else:
        H, W = input_dims
        c0 = spec.input_channels
    shapes = {INPUT: (c0, H, W)}
    rfs = {INPUT: _RfState((1, 1), (Fraction(1), Fraction(1)))}
    report = CostReport()
    for layer in spec:
        try:
            in_shapes = [shapes[r] for r in layer.inputs]
        except KeyError as exc:
            raise GraphError(f"layer {layer.name!r} references unknown layer {exc}") from exc
        convs, out, aux, extra = expand_layer(layer, in_shapes)
        if min(out) < 1:
            raise GraphError(f"layer {layer.name!r} produces an empty output {out}")
        shapes[layer.name] = out
        rfs[layer.name] = _compose_rf(layer, [rfs[r] for r in layer.inputs])
        report.layers.append(LayerCost(
            layer.name, layer.kind,
            params=sum(cv.params for cv in convs),
            params_aux=aux,
            flops=sum(cv.flops for cv in convs) + extra,
            macs=sum(cv.macs for cv in convs) + extra,
            out_shape=out,
            rf=rfs[layer.name].rf,
        ))
    return report


@dataclass(frozen=True)
class BranchRf:
    index: int
    dilation: tuple[int, int]
    feature: tuple[int, int]
    image: tuple[int, int]


@dataclass(frozen=True)
class RfRow:
    name: str
    kind: str
    rf: tuple[int, int]
    jump: tuple[int, int]
    branches: tuple[BranchRf, ...] = ()


def receptive_field_report(spec: GraphSpec) -> list[RfRow]:
    """Composed receptive field of every layer in input pixels, plus MMRFC branch rectangles.

    Branch rectangles are given at feature level and as the image-pixel span
    ``jump * (extent - 1) + 1`` at the block's input stride.
    """
    rfs = {INPUT: _RfState((1, 1), (Fraction(1), Fraction(1)))}
    rows = []
    for layer in spec:
        ins = [rfs[r] for r in layer.inputs]
        state = _compose_rf(layer, ins)
        rfs[layer.name] = state
        branches = ()
        if layer.kind == "mmrfc":
            jh, jw = ins[0].jump
            branches = tuple(
                BranchRf(b.index, (b.d1, b.d2), rect, (int(jh * (rect[0] - 1) + 1), int(jw * (rect[1] - 1) + 1)))
                for b in branch_specs(layer["dilation"]) for rect in [branch_receptive_field(b)]
            )
        jump = tuple(int(j) if j.denominator == 1 else float(j) for j in state.jump)
        rows.append(RfRow(layer.name, layer.kind, state.rf, jump, branches))
    return rows


def conv_param_count(store) -> int:
    """Trainable convolution scalars registered in a store (the constructive side of the counts)."""
    return store.count(lambda p: is_conv_param(p.name))
