"""Layer and network domain model.

Shapes are specified with pre-padded input extents (padding is baked into
Y/X), so all index arithmetic downstream is exact. Batch is fixed to 1.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Iterable


class Dim(enum.Enum):
    """Loop dimensions of a convolution: batch, output/input channels,
    input rows/cols, filter rows/cols."""

    N = "N"
    K = "K"
    C = "C"
    Y = "Y"
    X = "X"
    R = "R"
    S = "S"


class LayerKind(enum.Enum):
    Conv2D = "CONV2D"
    DepthwiseConv = "DWCONV"
    PointwiseConv = "PWCONV"
    FullyConnected = "FC"
    ResidualAdd = "ADD"


class LayerClass(enum.Enum):
    Early = "early"
    PointWise = "pointwise"
    FullyConnected = "fc"
    Residual = "residual"
    Late = "late"


class WorkloadError(ValueError):
    """Raised on malformed workload text or invalid layer shapes."""


@dataclass(frozen=True)
class LayerShape:
    name: str
    kind: LayerKind
    K: int
    C: int
    Y: int  # input rows, padding included
    X: int  # input cols, padding included
    R: int
    S: int
    strideY: int = 1
    strideX: int = 1

    def __post_init__(self) -> None:
        for f in ("K", "C", "Y", "X", "R", "S", "strideY", "strideX"):
            v = getattr(self, f)
            if not isinstance(v, int) or v < 1:
                raise WorkloadError(f"layer {self.name!r}: {f} must be >= 1, got {v}")
        if self.R > self.Y:
            raise WorkloadError(f"layer {self.name!r}: R exceeds Y ({self.R} > {self.Y})")
        if self.S > self.X:
            raise WorkloadError(f"layer {self.name!r}: S exceeds X ({self.S} > {self.X})")
        k = self.kind
        if k is LayerKind.PointwiseConv and (self.R != 1 or self.S != 1):
            raise WorkloadError(f"layer {self.name!r}: pointwise requires R = S = 1")
        if k is LayerKind.FullyConnected and (self.Y != self.R or self.X != self.S):
            raise WorkloadError(f"layer {self.name!r}: FC requires Y = R and X = S")
        if k is LayerKind.DepthwiseConv and self.K != self.C:
            raise WorkloadError(f"layer {self.name!r}: depthwise requires K = C")
        if k is LayerKind.ResidualAdd:
            if self.R != 1 or self.S != 1:
                raise WorkloadError(f"layer {self.name!r}: residual add requires R = S = 1")
            if self.K != self.C:
                raise WorkloadError(f"layer {self.name!r}: residual add requires K = C")
            if self.strideY != 1 or self.strideX != 1:
                raise WorkloadError(f"layer {self.name!r}: residual add requires stride 1")

    def extent(self, dim: Dim) -> int:
        if dim is Dim.N:
            return 1
        return getattr(self, dim.value)

    @property
    def weightless(self) -> bool:
        return self.kind is LayerKind.ResidualAdd

    @property
    def channel_fused(self) -> bool:
        """True when output and input channels are one shared axis."""
        return self.kind in (LayerKind.DepthwiseConv, LayerKind.ResidualAdd)


def output_dims(layer: LayerShape) -> tuple[int, int]:
    """Output rows/cols of a layer: floor((extent - window) / stride) + 1."""
    yout = (layer.Y - layer.R) // layer.strideY + 1
    xout = (layer.X - layer.S) // layer.strideX + 1
    return yout, xout


def macs(layer: LayerShape) -> int:
    """Multiply-accumulate count; residual adds count one op per element."""
    yout, xout = output_dims(layer)
    if layer.kind is LayerKind.ResidualAdd:
        return layer.C * layer.Y * layer.X
    if layer.kind is LayerKind.DepthwiseConv:
        return layer.C * yout * xout * layer.R * layer.S
    return layer.K * layer.C * yout * xout * layer.R * layer.S


@dataclass(frozen=True)
class NetworkModel:
    name: str
    layers: tuple[LayerShape, ...]

    def __post_init__(self) -> None:
        if not self.layers:
            raise WorkloadError(f"network {self.name!r} has no layers")
        seen: set[str] = set()
        for layer in self.layers:
            if layer.name in seen:
                raise WorkloadError(f"duplicate layer name {layer.name!r}")
            seen.add(layer.name)

    def layer(self, name: str) -> LayerShape:
        for l in self.layers:
            if l.name == name:
                return l
        raise KeyError(name)


def classify_layer(layer: LayerShape, index_in_network: int, network: NetworkModel) -> LayerClass:
    """Classify a layer for reporting. Rule order is fixed: residual, fully
    connected, pointwise, then channel depth (>= 512 channels is 'late')."""
    if layer.kind is LayerKind.ResidualAdd:
        return LayerClass.Residual
    if layer.kind is LayerKind.FullyConnected:
        return LayerClass.FullyConnected
    if layer.kind is LayerKind.PointwiseConv:
        return LayerClass.PointWise
    if max(layer.C, layer.K) >= 512:
        return LayerClass.Late
    return LayerClass.Early


_KIND_TOKENS = {k.value: k for k in LayerKind}


def parse_model(text: str, name: str = "network") -> NetworkModel:
    """Parse the line-based workload format.

    One layer per line: ``name kind K C Y X R S strideY strideX``;
    ``#`` starts a comment, blank lines are ignored.
    """
    layers: list[LayerShape] = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        fields = line.split()
        if len(fields) != 10:
            raise WorkloadError(f"line {lineno}: expected 10 fields, got {len(fields)}")
        lname, kind_tok = fields[0], fields[1].upper()
        if kind_tok not in _KIND_TOKENS:
            raise WorkloadError(f"line {lineno}: unknown layer kind {fields[1]!r}")
        try:
            nums = [int(f) for f in fields[2:]]
        except ValueError as exc:
            raise WorkloadError(f"line {lineno}: {exc}") from None
        try:
            layers.append(LayerShape(lname, _KIND_TOKENS[kind_tok], *nums))
        except WorkloadError as exc:
            raise WorkloadError(f"line {lineno}: {exc}") from None
    return NetworkModel(name, tuple(layers))


def render_model(model: NetworkModel) -> str:
    """Inverse of parse_model (up to comments/whitespace)."""
    lines = [f"# {model.name}"]
    for l in model.layers:
        lines.append(
            f"{l.name} {l.kind.value} {l.K} {l.C} {l.Y} {l.X} {l.R} {l.S} "
            f"{l.strideY} {l.strideX}"
        )
    return "\n".join(lines) + "\n"


def builtin_models() -> list[NetworkModel]:
    """The two bundled reference workloads."""
    from importlib import resources

    out = []
    for fname, mname in (("resnet50.net", "resnet50"), ("mobilenetv2.net", "mobilenetv2")):
        text = resources.files("nocperf.models").joinpath(fname).read_text("utf-8")
        out.append(parse_model(text, name=mname))
    return out
