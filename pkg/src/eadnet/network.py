"""EADNet assembly: graph construction, execution and weight files.

Topology built by :func:`eadnet_graph`::

    input (3) -> cc1 (c1, 1/2) -> cc2 (c2, 1/4) -> n1 x MMRFC(c2) -> cc3 (c3, 1/8) -> n2 x MMRFC(c3)
    cc1 -> SeqDwConv (c1, 1/8)          stage-1 output -> DwConv (c2, 1/8)
    concat(deep c3, shallow c1, c2) -> pointwise classifier -> bilinear x8
"""
from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np

from . import functional as F
from .autograd import Param, ParamStore, Var, as_var, no_grad
from .graph import INPUT, GraphSpec, LayerSpec
from .layers import BnAct, Conv2d
from .mmrfc import MAX_BASE_DILATION, MAX_CHANNELS, MmrfcBlock, MmrfcConfig
from .serialize import WeightFormatError, read_tensors, write_tensors

STAGE2_SCHEDULE = (1, 1, 2, 2, 4, 4)
STAGE3_SCHEDULE = (1, 2, 4, 6, 1, 2, 4, 6, 6)
_RAMP = {2: (1, 1, 2, 2, 4, 4), 3: (1, 2, 4, 6)}


def default_schedule(n: int, stage: int) -> tuple[int, ...]:
    """Default dilation schedule of length ``n``; longer stacks repeat the stage's ramp."""
    base = STAGE2_SCHEDULE if stage == 2 else STAGE3_SCHEDULE
    sched = list(base[:n])
    while len(sched) < n:
        sched.extend(_RAMP[stage][: n - len(sched)])
    return tuple(sched)


@dataclass(frozen=True)
class EadnetConfig:
    num_classes: int = 19
    stage_channels: tuple[int, int, int] = (16, 64, 128)
    n1: int = 6
    n2: int = 9
    dr_schedule_stage2: tuple[int, ...] | None = None
    dr_schedule_stage3: tuple[int, ...] | None = None

    def __post_init__(self):
        if self.dr_schedule_stage2 is None:
            object.__setattr__(self, "dr_schedule_stage2", default_schedule(self.n1, 2))
        if self.dr_schedule_stage3 is None:
            object.__setattr__(self, "dr_schedule_stage3", default_schedule(self.n2, 3))
        object.__setattr__(self, "stage_channels", tuple(self.stage_channels))
        object.__setattr__(self, "dr_schedule_stage2", tuple(self.dr_schedule_stage2))
        object.__setattr__(self, "dr_schedule_stage3", tuple(self.dr_schedule_stage3))
        c1, c2, c3 = self.stage_channels
        if self.num_classes < 1:
            raise ValueError("num_classes must be positive")
        if not 3 < c1 < c2 < c3:
            raise ValueError(f"stage channels must satisfy 3 < c1 < c2 < c3, got {self.stage_channels}")
        if c3 > MAX_CHANNELS:
            raise ValueError(f"c3 must not exceed {MAX_CHANNELS}, got {c3}")
        if self.n1 < 0 or self.n2 < 0:
            raise ValueError("n1 and n2 must be non-negative")
        for n, sched, c, label in ((self.n1, self.dr_schedule_stage2, c2, "stage 2"),
                                   (self.n2, self.dr_schedule_stage3, c3, "stage 3")):
            if len(sched) != n:
                raise ValueError(f"{label} dilation schedule has {len(sched)} entries, expected {n}")
            if any(not 1 <= d <= MAX_BASE_DILATION for d in sched):
                raise ValueError(f"{label} dilation rates must lie in [1, {MAX_BASE_DILATION}], got {sched}")
            if n and c % 8:
                raise ValueError(f"{label} channels must be divisible by 8 for MMRFC blocks, got {c}")


def eadnet_graph(config: EadnetConfig = EadnetConfig()) -> GraphSpec:
    c1, c2, c3 = config.stage_channels
    L = LayerSpec
    layers = [
        L("cc1", "concat-conv", (INPUT,), dict(in_channels=3, out_channels=c1)),
        L("cc2", "concat-conv", ("cc1",), dict(in_channels=c1, out_channels=c2)),
    ]
    prev = "cc2"
    for i, dr in enumerate(config.dr_schedule_stage2, 1):
        layers.append(L(f"s1.mmrfc{i}", "mmrfc", (prev,), dict(channels=c2, dilation=dr)))
        prev = layers[-1].name
    stage1_out = prev
    layers.append(L("cc3", "concat-conv", (prev,), dict(in_channels=c2, out_channels=c3)))
    prev = "cc3"
    for i, dr in enumerate(config.dr_schedule_stage3, 1):
        layers.append(L(f"s2.mmrfc{i}", "mmrfc", (prev,), dict(channels=c3, dilation=dr)))
        prev = layers[-1].name
    layers += [
        L("seqdw", "seq-dw-conv", ("cc1",), dict(channels=c1, stages=2)),
        L("dw", "dw-conv", (stage1_out,), dict(channels=c2, stages=1)),
        L("cat", "concat", (prev, "seqdw", "dw")),
        L("classifier", "pointwise-classifier", ("cat",), dict(in_channels=c1 + c2 + c3, out_channels=config.num_classes)),
        L("up", "bilinear-up", ("classifier",), dict(scale=8)),
    ]
    return GraphSpec(layers)


class _ConcatConv:
    """3x3 stride-2 conv to (out - in) channels, concatenated with a 2x2 max-pool of the input."""

    def __init__(self, store, name, cin, cout, rng):
        if cout <= cin:
            raise ValueError(f"{name}: concat-conv needs out_channels > in_channels, got {cin} -> {cout}")
        self.conv = Conv2d(store, f"{name}.conv", cin, cout - cin, 3, stride=2, rng=rng)
        self.post = BnAct(store, name, cout)

    def __call__(self, xs, training):
        (x,) = xs
        return self.post(F.concat([self.conv(x), F.maxpool2x2(x)]), training)


class _DwStack:
    """``stages`` x (3x3 stride-2 depthwise conv, BN, PReLU)."""

    def __init__(self, store, name, channels, stages, rng):
        self.stages = [(Conv2d(store, f"{name}.dw{i}", channels, channels, 3, stride=2, groups=channels, rng=rng),
                        BnAct(store, f"{name}.dw{i}", channels)) for i in range(1, stages + 1)]

    def __call__(self, xs, training):
        (x,) = xs
        for conv, post in self.stages:
            x = post(conv(x), training)
        return x


class _Single:
    def __init__(self, fn):
        self.fn = fn

    def __call__(self, xs, training):
        if isinstance(self.fn, MmrfcBlock):
            return self.fn(xs[0], training)
        return self.fn(xs[0])


def _build_layer(layer: LayerSpec, store: ParamStore, rng):
    k, a, name = layer.kind, layer.attrs, layer.name
    if k == "conv":
        conv = Conv2d(store, name, a["in_channels"], a["out_channels"], (a["kernel_h"], a["kernel_w"]),
                      stride=a["stride"], dilation=(a["dilation_h"], a["dilation_w"]), groups=a["groups"], rng=rng)
        return _Single(conv)
    if k == "concat-conv":
        return _ConcatConv(store, name, a["in_channels"], a["out_channels"], rng)
    if k in ("seq-dw-conv", "dw-conv"):
        return _DwStack(store, name, a["channels"], a["stages"], rng)
    if k == "mmrfc":
        return _Single(MmrfcBlock(MmrfcConfig(a["channels"], a["dilation"]), store, name, rng))
    if k == "concat":
        return lambda xs, training: F.concat(xs)
    if k == "pointwise-classifier":
        return _Single(Conv2d(store, name, a["in_channels"], a["out_channels"], 1, rng=rng))
    if k == "bilinear-up":
        s = a["scale"]
        return _Single(lambda x: F.bilinear_resize(x, x.shape[2] * s, x.shape[3] * s))
    raise ValueError(f"unsupported layer kind {k!r}")


def _downsample_factor(spec: GraphSpec) -> int:
    """Largest cumulative stride reached anywhere in the graph."""
    stride = {INPUT: 1}
    for l in spec:
        s = max(stride[r] for r in l.inputs)
        if l.kind == "concat-conv":
            s *= 2
        elif l.kind in ("seq-dw-conv", "dw-conv"):
            s *= 2 ** l["stages"]
        elif l.kind == "conv":
            s *= l["stride"]
        stride[l.name] = s
    return max(stride.values())


class Model:
    """Executable network built from a :class:`GraphSpec`; parameters live in ``store``."""

    def __init__(self, spec: GraphSpec, store: ParamStore | None = None, seed: int = 0):
        self.spec = spec
        self.store = ParamStore() if store is None else store
        rng = np.random.default_rng(seed)
        self._layers = {l.name: _build_layer(l, self.store, rng) for l in spec}
        self.downsample = _downsample_factor(spec)

    def __call__(self, x, training: bool = False, return_all: bool = False):
        x = as_var(x)
        if x.value.ndim != 4 or x.shape[1] != self.spec.input_channels:
            raise ValueError(f"expected input (n, {self.spec.input_channels}, H, W), got {x.shape}")
        h, w = x.shape[2:]
        if h % self.downsample or w % self.downsample:
            raise ValueError(f"input height and width must be divisible by {self.downsample}, got {h}x{w}")
        acts: dict[str, Var] = {INPUT: x}
        for l in self.spec:
            acts[l.name] = self._layers[l.name]([acts[r] for r in l.inputs], training)
        return acts if return_all else acts[self.spec.output]

    def block(self, name: str) -> MmrfcBlock:
        """The MMRFC block behind layer ``name``."""
        fn = getattr(self._layers[name], "fn", None)
        if not isinstance(fn, MmrfcBlock):
            raise KeyError(f"layer {name!r} is not an MMRFC block")
        return fn

    def load_state(self, tensors) -> None:
        """Copy values from a name -> array mapping (or another store) into this model's store."""
        for p in self.store:
            src = tensors[p.name]
            p.assign(src.value if isinstance(src, Param) else src)


def build_eadnet(config: EadnetConfig = EadnetConfig(), store: ParamStore | None = None, seed: int = 0) -> Model:
    return Model(eadnet_graph(config), store, seed)


def forward(model: Model, x) -> np.ndarray:
    """Inference-mode logits (n, num_classes, H, W)."""
    with no_grad():
        return model(np.asarray(x, dtype=np.float32)).value


def predict(model: Model, x) -> np.ndarray:
    """Per-pixel argmax labels (n, H, W); ties resolve to the lowest class index."""
    return forward(model, x).argmax(axis=1)


def save_weights(store: ParamStore, path: str | os.PathLike) -> None:
    write_tensors(path, store.state_dict())


def _is_buffer(name: str) -> bool:
    return name.endswith(".running_mean") or name.endswith(".running_var")


def load_weights(path: str | os.PathLike, spec: GraphSpec | None = None) -> ParamStore:
    """Read an EADW file into a new store.

    With ``spec`` the file must contain exactly the parameters that spec
    registers, with matching dims; trainable flags come from the spec.
    """
    tensors = read_tensors(path)
    if spec is None:
        store = ParamStore()
        for name, arr in tensors.items():
            store.add(name, arr, trainable=not _is_buffer(name))
        return store

    template = Model(spec).store
    for p in template:
        if p.name not in tensors:
            raise WeightFormatError(f"missing parameter {p.name!r}")
        if tensors[p.name].shape != p.value.shape:
            raise WeightFormatError(f"parameter {p.name!r} has dims {tensors[p.name].shape}, expected {p.value.shape}")
    extra = [n for n in tensors if n not in template]
    if extra:
        raise WeightFormatError(f"unexpected parameter {extra[0]!r}")
    store = ParamStore()
    for p in template:
        store.add(p.name, tensors[p.name], p.trainable)
    return store


def load_model(path: str | os.PathLike, spec: GraphSpec) -> Model:
    model = Model(spec)
    model.load_state(load_weights(path, spec))
    return model
