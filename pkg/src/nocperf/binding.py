"""Resolution of a dataflow against a concrete layer.

This module defines the execution geometry both the analytical model and
the reference simulator share: directive positions, tile segments, output
ownership, the temporal odometer, and the folding of spatial work onto a
finite PE array. Everything downstream (traffic counting, delays) is
derived from it, but by two independent mechanisms.

Semantics, in brief:

* A directive on dimension D with resolved (size, offset) partitions D's
  index space into segments ``[p*offset, p*offset + size - 1]`` clamped to
  the extent. Position counts are chosen so every output origin is covered;
  trailing remainder segments are narrower, never padded.
* On sliding axes (Y, X) a segment "owns" the output origins whose full
  R/S window fits inside it and that no earlier segment owns. On plain
  axes ownership is the segment minus what earlier positions own. Owned
  sets of consecutive positions partition the index space, so every MAC is
  executed exactly once.
* When a dimension appears at both levels, the outer directive partitions
  the extent and the inner one iterates inside a partition.
* Depthwise and elementwise-add layers have a single channel axis; K and C
  directives both act on it. Spatial directives claim the axis first
  (outer level before inner), temporal directives then iterate within the
  claimed granule. This preserves each style's parallelism on layers
  without an independent K.
* Temporal directives with one position are constants; the rest form the
  odometer (outer level first, in directive order).
* Spatial positions per level are linearized in directive order. If they
  exceed the available PEs, the work folds into sequential passes of equal
  slot ranges; a physical PE then hosts one "slot" per pass.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property

from .dataflow import ClusterLevel, Dataflow, Directive, Retention, SizeExpr, lit
from .layers import Dim, LayerKind, LayerShape, output_dims


class BindError(ValueError):
    """Raised when a dataflow cannot be bound to a layer."""


def _ceil_div(a: int, b: int) -> int:
    return -(-a // b)


@dataclass(frozen=True)
class Interval:
    """Closed integer interval; empty when hi < lo."""

    lo: int
    hi: int

    @property
    def empty(self) -> bool:
        return self.hi < self.lo

    def __len__(self) -> int:
        return 0 if self.empty else self.hi - self.lo + 1

    def clip(self, lo: int, hi: int) -> "Interval":
        return Interval(max(self.lo, lo), min(self.hi, hi))

    def intersect(self, other: "Interval") -> "Interval":
        return Interval(max(self.lo, other.lo), min(self.hi, other.hi))


EMPTY = Interval(0, -1)


def position_count(extent: int, size: int, offset: int, window: int, stride: int) -> int:
    """Number of segments needed to cover every output origin of an axis."""
    size_c = min(size, extent)
    if size_c < window:
        raise BindError(
            f"segment size {size} never fits a window of {window}"
        )
    o_max = stride * ((extent - window) // stride)
    reach = size_c - window
    if o_max <= reach:
        return 1
    return _ceil_div(o_max - reach, offset) + 1


@dataclass(frozen=True)
class AxisNode:
    """One resolved directive acting on an axis, nested under `outer` ones."""

    axis: Dim
    spatial: bool
    size: int
    offset: int
    level: int
    index: int
    positions: int
    source_dim: Dim  # the dimension the directive was written against

    @property
    def key(self) -> tuple[int, int]:
        return (self.level, self.index)


@dataclass(frozen=True)
class AxisState:
    """Concrete segment and owned index range of one axis at one step."""

    seg: Interval    # input-space interval (plain axes: index interval)
    owned: Interval  # output origins (sliding axes) or data indices (plain)


def _fits(seg: Interval, window: int, stride: int, n_out: int) -> Interval:
    """Output origins whose full window lies inside `seg`."""
    if seg.empty or len(seg) < window:
        return EMPTY
    a = _ceil_div(seg.lo, stride)
    b = (seg.hi - window + 1) // stride
    return Interval(max(a, 0), min(b, n_out - 1))


class AxisChain:
    """All directives acting on one axis, outermost first."""

    def __init__(self, axis: Dim, extent: int, window: int, stride: int, n_out: int):
        self.axis = axis
        self.extent = extent
        self.window = window
        self.stride = stride
        self.n_out = n_out
        self.nodes: list[AxisNode] = []

    def append(self, node: AxisNode) -> None:
        self.nodes.append(node)

    def granule(self, depth: int) -> int:
        """Full segment width available to the node at `depth`."""
        width = self.extent
        for node in self.nodes[:depth]:
            width = min(node.size, width)
        return width

    def state(self, positions: dict[tuple[int, int], int]) -> AxisState:
        """Segment and owned range for this axis given node positions."""
        seg = Interval(0, self.extent - 1)
        owned = Interval(0, self.n_out - 1)
        for node in self.nodes:
            p = positions[node.key]
            lo = seg.lo + p * node.offset
            if lo > seg.hi:
                return AxisState(EMPTY, EMPTY)
            sub = Interval(lo, min(lo + node.size - 1, seg.hi))
            fit = _fits(sub, self.window, self.stride, self.n_out)
            if p > 0:
                prev = Interval(lo - node.offset, min(lo - node.offset + node.size - 1, seg.hi))
                prev_fit = _fits(prev, self.window, self.stride, self.n_out)
                first_own = (prev_fit.hi + 1) if not prev_fit.empty else fit.lo
                fit = Interval(max(fit.lo, first_own), fit.hi)
            owned = owned.intersect(fit)
            seg = sub
            if owned.empty:
                return AxisState(seg, EMPTY)
        return AxisState(seg, owned)


_AXIS_DIMS = (Dim.K, Dim.C, Dim.Y, Dim.X, Dim.R, Dim.S)


class BoundMapping:
    """A dataflow with sizes resolved against a layer, plus the odometer."""

    def __init__(self, dataflow: Dataflow, layer: LayerShape):
        self.layer = layer
        self.source = dataflow
        self.retention = dataflow.retention
        yout, xout = output_dims(layer)
        self.yout, self.xout = yout, xout
        fused = layer.channel_fused

        def axis_params(axis: Dim) -> tuple[int, int, int, int]:
            if axis is Dim.Y:
                return layer.Y, layer.R, layer.strideY, yout
            if axis is Dim.X:
                return layer.X, layer.S, layer.strideX, xout
            return layer.extent(axis), 1, 1, layer.extent(axis)

        self.chains: dict[Dim, AxisChain] = {
            axis: AxisChain(axis, *axis_params(axis)) for axis in _AXIS_DIMS
        }

        # Resolve directives to concrete sizes/offsets.
        resolved: list[tuple[int, int, Dim, bool, int, int]] = []
        n_levels = len(dataflow.levels)
        for li, level in enumerate(dataflow.levels):
            for di, d in enumerate(level.directives):
                axis = d.dim
                if axis is Dim.N:
                    continue  # batch is fixed to 1; directives on it are inert
                if fused and axis is Dim.K:
                    axis = Dim.C
                stride = (
                    layer.strideY if axis is Dim.Y else layer.strideX if axis is Dim.X else 1
                )
                size = d.size.resolve(layer.extent, stride)
                offset = d.offset.resolve(layer.extent, stride)
                if size < 1 or offset < 1:
                    raise BindError(
                        f"{dataflow.name}: directive on {d.dim.value} resolves to "
                        f"size {size}, offset {offset}"
                    )
                resolved.append((li, di, axis, d.spatial, size, offset))

        # Fused channel axis: spatial directives claim the axis before
        # temporal ones; everything else nests by (level, order).
        def chain_order(entry):
            li, di, axis, spatial, _, _ = entry
            return (0 if spatial else 1, li, di)

        per_axis: dict[Dim, list] = {axis: [] for axis in _AXIS_DIMS}
        for entry in resolved:
            per_axis[entry[2]].append(entry)
        for axis, entries in per_axis.items():
            if fused and axis is Dim.C:
                entries.sort(key=chain_order)
            spatial_levels_seen = [e[0] for e in entries if e[3]]
            if len(spatial_levels_seen) > 1 and not (fused and axis is Dim.C):
                raise BindError(
                    f"{dataflow.name}: dimension {axis.value} is spatial at two levels"
                )
            chain = self.chains[axis]
            for li, di, _, spatial, size, offset in entries:
                gran = chain.granule(len(chain.nodes))
                size_c = min(size, gran)
                try:
                    n = position_count(gran, size, offset, chain.window, chain.stride)
                except BindError as exc:
                    raise BindError(
                        f"{dataflow.name} on {layer.name}: {d_desc(li, di, axis)}: {exc}"
                    ) from None
                if n > 1:
                    if offset > size_c - chain.window + chain.stride:
                        raise BindError(
                            f"{dataflow.name} on {layer.name}: {d_desc(li, di, axis)}: "
                            f"offset {offset} skips coverage (size {size_c})"
                        )
                    if chain.stride > 1 and offset % chain.stride != 0:
                        raise BindError(
                            f"{dataflow.name} on {layer.name}: {d_desc(li, di, axis)}: "
                            f"offset {offset} not aligned to stride {chain.stride}"
                        )
                src = dataflow.levels[li].directives[di].dim
                chain.append(AxisNode(axis, spatial, size, offset, li, di, n, src))

        # Coverage of the layer's loop space.
        if layer.kind is LayerKind.ResidualAdd:
            required = {Dim.C, Dim.Y, Dim.X}
        elif fused:
            required = {Dim.C, Dim.Y, Dim.X, Dim.R, Dim.S}
        else:
            required = set(_AXIS_DIMS)
        for axis in required:
            if not self.chains[axis].nodes:
                raise BindError(f"{dataflow.name}: dimension {axis.value} is not mapped")

        # Temporal odometer digits (outer level first, directive order) and
        # spatial geometry per level. Single-level dataflows have only the
        # PE level.
        all_nodes = [n for chain in self.chains.values() for n in chain.nodes]
        all_nodes.sort(key=lambda n: n.key)
        self.temporal_nodes = [n for n in all_nodes if not n.spatial]
        self.digits = [n for n in self.temporal_nodes if n.positions > 1]
        outer_level = 0 if n_levels == 2 else -1
        inner_level = n_levels - 1
        self.spatial_outer = [n for n in all_nodes if n.spatial and n.level == outer_level]
        self.spatial_inner = [n for n in all_nodes if n.spatial and n.level == inner_level]
        self.units_outer = math.prod(n.positions for n in self.spatial_outer)
        self.units_inner = math.prod(n.positions for n in self.spatial_inner)

    @cached_property
    def total_steps(self) -> int:
        return math.prod(n.positions for n in self.digits)

    @property
    def steps_per_directive(self) -> list[tuple[Dim, bool, int, int]]:
        """(source dim, spatial, size, positions) per resolved directive."""
        out = []
        for chain in self.chains.values():
            for n in chain.nodes:
                out.append((n.source_dim, n.spatial, n.size, n.positions))
        return out

    @property
    def spatial_units_per_level(self) -> tuple[int, ...]:
        if self.source_levels == 1:
            return (self.units_inner,)
        return (self.units_outer, self.units_inner)

    @property
    def source_levels(self) -> int:
        return len(self.source.levels)

    @cached_property
    def dataflow(self) -> Dataflow:
        """The dataflow with sizes resolved to literals (re-bindable)."""
        node_by_key = {
            n.key: n for chain in self.chains.values() for n in chain.nodes
        }
        levels = []
        for li, level in enumerate(self.source.levels):
            dirs = []
            for di, d in enumerate(level.directives):
                node = node_by_key.get((li, di))
                if node is None:
                    continue  # inert batch directive
                dirs.append(Directive(node.axis, node.spatial, lit(node.size), lit(node.offset)))
            if dirs:
                levels.append(ClusterLevel(tuple(dirs)))
        return Dataflow(self.source.name, tuple(levels), self.retention)

    # ---- per-step geometry ----------------------------------------------

    def state_positions(
        self, digit_positions: tuple[int, ...], spatial_positions: dict[tuple[int, int], int]
    ) -> dict[tuple[int, int], int]:
        positions = {n.key: 0 for chain in self.chains.values() for n in chain.nodes}
        for node, p in zip(self.digits, digit_positions):
            positions[node.key] = p
        positions.update(spatial_positions)
        return positions

    def axis_states(self, positions: dict[tuple[int, int], int]) -> dict[Dim, AxisState]:
        return {axis: chain.state(positions) for axis, chain in self.chains.items()}

    def slot_macs(self, states: dict[Dim, AxisState]) -> int:
        """MAC count of one slot given its axis states."""
        if self.layer.kind is LayerKind.ResidualAdd:
            counts = (states[Dim.C].owned, states[Dim.Y].owned, states[Dim.X].owned)
        elif self.layer.kind is LayerKind.DepthwiseConv:
            counts = (
                states[Dim.C].owned,
                states[Dim.Y].owned,
                states[Dim.X].owned,
                states[Dim.R].owned,
                states[Dim.S].owned,
            )
        else:
            counts = tuple(states[a].owned for a in _AXIS_DIMS)
        total = 1
        for iv in counts:
            total *= len(iv)
        return total


def d_desc(level: int, index: int, axis: Dim) -> str:
    return f"level {level} directive {index} ({axis.value})"


def bind(dataflow: Dataflow, layer: LayerShape) -> BoundMapping:
    """Resolve a dataflow against a layer; raises BindError when invalid."""
    return BoundMapping(dataflow, layer)


# ---- folding of spatial work onto the PE array ---------------------------


@dataclass(frozen=True)
class Fold:
    cluster_size: int
    cluster_count: int
    passes_inner: int
    passes_outer: int

    @property
    def utilized_pes(self) -> int:
        return self.cluster_size * self.cluster_count

    @property
    def passes_per_step(self) -> int:
        return self.passes_inner * self.passes_outer


def fold(bound: BoundMapping, num_pes: int) -> Fold:
    if num_pes < 1:
        raise BindError("need at least one PE")
    cs = max(1, min(bound.units_inner, num_pes))
    cc = max(1, min(num_pes // cs, bound.units_outer))
    return Fold(
        cluster_size=cs,
        cluster_count=cc,
        passes_inner=_ceil_div(bound.units_inner, cs),
        passes_outer=_ceil_div(bound.units_outer, cc),
    )


def decompose_range(lo: int, hi_exclusive: int, radices: list[int]) -> list[list[tuple[int, int]]]:
    """Split a linear index range over a mixed-radix space into boxes.

    Returns per-box inclusive position ranges, one per radix (slowest
    first). At most 2*len(radices)-1 boxes.
    """
    if lo >= hi_exclusive:
        return []
    if not radices:
        return [[]]
    if len(radices) == 1:
        return [[(lo, hi_exclusive - 1)]]
    inner = math.prod(radices[1:])
    first_outer, first_off = divmod(lo, inner)
    last_outer, last_off = divmod(hi_exclusive - 1, inner)
    if first_outer == last_outer:
        return [
            [(first_outer, first_outer)] + sub
            for sub in decompose_range(first_off, last_off + 1, radices[1:])
        ]
    boxes: list[list[tuple[int, int]]] = []
    body_first, body_last = first_outer, last_outer
    if first_off != 0:
        boxes.extend(
            [(first_outer, first_outer)] + sub
            for sub in decompose_range(first_off, inner, radices[1:])
        )
        body_first += 1
    tail: list[list[tuple[int, int]]] = []
    if last_off != inner - 1:
        tail = [
            [(last_outer, last_outer)] + sub
            for sub in decompose_range(0, last_off + 1, radices[1:])
        ]
        body_last -= 1
    if body_first <= body_last:
        boxes.append([(body_first, body_last)] + [(0, r - 1) for r in radices[1:]])
    boxes.extend(tail)
    return boxes


def spatial_positions_of(nodes: list[AxisNode], linear: int) -> dict[tuple[int, int], int]:
    """Decode a linear unit index into per-node positions (slowest first)."""
    out: dict[tuple[int, int], int] = {}
    rem = linear
    for node in reversed(nodes):
        out[node.key] = rem % node.positions
        rem //= node.positions
    return out


def odometer_states(bound: BoundMapping):
    """Yield (step_index, positions_tuple, advancing_digit_index).

    The advancing digit is the outermost digit that changed; -1 for the
    first step.
    """
    radices = [n.positions for n in bound.digits]
    if not radices:
        yield 0, (), -1
        return
    positions = [0] * len(radices)
    step = 0
    yield step, tuple(positions), -1
    while True:
        i = len(radices) - 1
        while i >= 0 and positions[i] == radices[i] - 1:
            positions[i] = 0
            i -= 1
        if i < 0:
            return
        positions[i] += 1
        step += 1
        yield step, tuple(positions), i
