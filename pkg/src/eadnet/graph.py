"""Declarative network description shared by the model builder and the cost model.

A :class:`GraphSpec` is an ordered list of :class:`LayerSpec`; each layer
names its inputs (earlier layers, or ``"input"`` for the image).  Specs
round-trip through an INI-style text file, one section per layer::

    [cc1]
    kind = concat-conv
    inputs = input
    in_channels = 3
    out_channels = 16
"""
from __future__ import annotations

import configparser
import io
from dataclasses import dataclass, field

INPUT = "input"

# kind -> required integer attributes
KINDS: dict[str, tuple[str, ...]] = {
    "conv": ("in_channels", "out_channels", "kernel_h", "kernel_w", "stride", "dilation_h", "dilation_w", "groups"),
    "concat-conv": ("in_channels", "out_channels"),
    "mmrfc": ("channels", "dilation"),
    "seq-dw-conv": ("channels", "stages"),
    "dw-conv": ("channels", "stages"),
    "concat": (),
    "pointwise-classifier": ("in_channels", "out_channels"),
    "bilinear-up": ("scale",),
}


class GraphError(ValueError):
    pass


@dataclass(frozen=True)
class LayerSpec:
    name: str
    kind: str
    inputs: tuple[str, ...]
    attrs: dict[str, int] = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise GraphError(f"layer {self.name!r}: unknown kind {self.kind!r}")
        missing = [k for k in KINDS[self.kind] if k not in self.attrs]
        if missing:
            raise GraphError(f"layer {self.name!r} ({self.kind}) is missing attributes {missing}")
        if not self.inputs:
            raise GraphError(f"layer {self.name!r} has no inputs")
        if self.kind != "concat" and len(self.inputs) != 1:
            raise GraphError(f"layer {self.name!r} ({self.kind}) takes exactly one input")

    def __getitem__(self, key: str) -> int:
        return self.attrs[key]


def conv_layer(name, inp, in_channels, out_channels, kernel=3, stride=1, dilation=1, groups=1) -> LayerSpec:
    kh, kw = (kernel, kernel) if isinstance(kernel, int) else kernel
    dh, dw = (dilation, dilation) if isinstance(dilation, int) else dilation
    return LayerSpec(name, "conv", (inp,), dict(
        in_channels=in_channels, out_channels=out_channels, kernel_h=kh, kernel_w=kw,
        stride=stride, dilation_h=dh, dilation_w=dw, groups=groups))


@dataclass
class GraphSpec:
    layers: list[LayerSpec]
    input_channels: int = 3

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        seen = {INPUT}
        consumed = set()
        for layer in self.layers:
            if layer.name in seen:
                raise GraphError(f"duplicate or reserved layer name {layer.name!r}")
            for ref in layer.inputs:
                if ref not in seen:
                    raise GraphError(f"layer {layer.name!r} references {ref!r}, which is not defined before it")
                consumed.add(ref)
            seen.add(layer.name)
        if self.layers:
            outputs = [l.name for l in self.layers if l.name not in consumed]
            if len(outputs) != 1:
                raise GraphError(f"graph must have exactly one output layer, found {outputs}")

    @property
    def output(self) -> str | None:
        """The one layer no other layer consumes."""
        consumed = {r for l in self.layers for r in l.inputs}
        sinks = [l.name for l in self.layers if l.name not in consumed]
        return sinks[0] if sinks else None

    def __iter__(self):
        return iter(self.layers)

    def __len__(self):
        return len(self.layers)

    def layer(self, name: str) -> LayerSpec:
        for l in self.layers:
            if l.name == name:
                return l
        raise KeyError(name)

    def to_text(self) -> str:
        cp = configparser.ConfigParser(interpolation=None)
        cp.optionxform = str
        cp["graph"] = {"input_channels": str(self.input_channels)}
        for l in self.layers:
            cp[l.name] = {"kind": l.kind, "inputs": ", ".join(l.inputs), **{k: str(v) for k, v in l.attrs.items()}}
        buf = io.StringIO()
        cp.write(buf)
        return buf.getvalue()

    @classmethod
    def from_text(cls, text: str) -> "GraphSpec":
        cp = configparser.ConfigParser(interpolation=None)
        cp.optionxform = str
        try:
            cp.read_string(text)
        except configparser.Error as exc:
            raise GraphError(f"malformed graph file: {exc}") from exc
        input_channels = cp.getint("graph", "input_channels", fallback=3)
        layers = []
        for name in cp.sections():
            if name == "graph":
                continue
            sec = dict(cp[name])
            try:
                kind = sec.pop("kind")
                inputs = tuple(s.strip() for s in sec.pop("inputs").split(",") if s.strip())
                attrs = {k: int(v) for k, v in sec.items()}
            except (KeyError, ValueError) as exc:
                raise GraphError(f"layer {name!r}: {exc}") from exc
            layers.append(LayerSpec(name, kind, inputs, attrs))
        return cls(layers, input_channels)
