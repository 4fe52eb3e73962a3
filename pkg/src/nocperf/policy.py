"""Tensor coupling and retention policy.

These rules are part of the mapping semantics and are therefore shared
verbatim by the analytical model and the reference simulator; only the
*counting* of words differs between the two (closed forms vs. literal
index sets).

Policy summary:

* A step's "changed" axes are the advancing odometer digit's axis plus the
  axes of every digit inside it (those reset to position zero).
* With no retention every tile step distributes its full working set and
  emits one partial sum per touched output element per slot.
* With retention, a tensor whose coupled axes did not change stays
  resident (zero distribution). When only the advancing axis changed, the
  advancing directive slides with overlap, and retention allows halo
  credit, only the fresh slice is distributed. Any other change refetches
  in full.
* Resident outputs accumulate in place and flush (one word each) when a
  coupled output axis changes, and at the end of the layer. Flushed
  partials are reduced at the global buffer, never redistributed.
"""
from __future__ import annotations

import enum

from .binding import BoundMapping
from .dataflow import Retention
from .layers import Dim, LayerKind, LayerShape


class TensorKind(enum.Enum):
    Input = "input"
    Weight = "weight"
    Output = "output"


class ReuseClass(enum.Enum):
    Temporal = "temporal"
    Spatial = "spatial"
    SpatioTemporal = "spatio-temporal"
    NoReuse = "none"


def coupled_axes(layer: LayerShape, tensor: TensorKind) -> frozenset[Dim]:
    """Axes whose directives move this tensor's index set.

    R/S are coupled to the input (they shift the window) but not to the
    output. Fused-channel layers couple through C only.
    """
    fused = layer.channel_fused
    if tensor is TensorKind.Input:
        return frozenset({Dim.C, Dim.Y, Dim.X, Dim.R, Dim.S})
    if tensor is TensorKind.Weight:
        if layer.kind is LayerKind.ResidualAdd:
            return frozenset()
        if fused:
            return frozenset({Dim.C, Dim.R, Dim.S})
        return frozenset({Dim.K, Dim.C, Dim.R, Dim.S})
    if fused:
        return frozenset({Dim.C, Dim.Y, Dim.X})
    return frozenset({Dim.K, Dim.Y, Dim.X})


def input_words_per_element(layer: LayerShape) -> int:
    """Residual adds read two operand words per element position."""
    return 2 if layer.kind is LayerKind.ResidualAdd else 1


def changed_axes(bound: BoundMapping, advancing: int) -> frozenset[Dim]:
    """Axes whose segments differ from the previous step.

    `advancing` is the index into bound.digits; -1 means the first step
    (everything is new).
    """
    if advancing < 0:
        return frozenset(Dim)
    return frozenset(d.axis for d in bound.digits[advancing:])


class FreshMode(enum.Enum):
    ZERO = "zero"        # resident, nothing to distribute
    SLIDE = "slide"      # distribute the fresh slice only
    FULL = "full"        # distribute the whole working set


def fresh_mode(bound: BoundMapping, tensor: TensorKind, advancing: int) -> FreshMode:
    """Distribution mode for one tensor at a step entered by `advancing`."""
    if bound.retention is Retention.NONE:
        return FreshMode.FULL
    coupled = coupled_axes(bound.layer, tensor)
    changed = changed_axes(bound, advancing)
    if not (coupled & changed):
        return FreshMode.ZERO
    if (
        bound.retention is Retention.STATIONARY_HALO
        and tensor is not TensorKind.Output
        and advancing >= 0
        and slide_applies(bound, tensor, advancing)
    ):
        return FreshMode.SLIDE
    return FreshMode.FULL


def slide_applies(bound: BoundMapping, tensor: TensorKind, advancing: int) -> bool:
    """True when only the advancing axis moved and it slides with overlap."""
    node = bound.digits[advancing]
    coupled = coupled_axes(bound.layer, tensor)
    if node.axis not in coupled:
        return False
    for inner in bound.digits[advancing + 1 :]:
        if inner.axis in coupled or inner.axis is node.axis:
            return False
    chain = bound.chains[node.axis]
    # overlap between consecutive segments, in input index terms
    size_c = min(node.size, chain.granule(chain.nodes.index(node)))
    return node.offset < size_c


def output_resident(bound: BoundMapping) -> bool:
    """Whether output partials survive at least one odometer advance."""
    if bound.retention is Retention.NONE or not bound.digits:
        return False
    innermost = len(bound.digits) - 1
    coupled = coupled_axes(bound.layer, TensorKind.Output)
    return not (coupled & changed_axes(bound, innermost))


def tensor_resident(bound: BoundMapping, tensor: TensorKind) -> bool:
    """Whether this tensor occupies PE buffer space between steps."""
    if bound.retention is Retention.NONE or not bound.digits:
        return False
    innermost = len(bound.digits) - 1
    mode = fresh_mode(bound, tensor, innermost)
    if tensor is TensorKind.Output:
        return mode is FreshMode.ZERO
    return mode in (FreshMode.ZERO, FreshMode.SLIDE)
