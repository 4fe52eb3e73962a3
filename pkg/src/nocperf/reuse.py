"""Parallelism, per-step NoC traffic, and reuse classification.

The analytical engine never walks tile steps one by one. Steps fall into
equivalence classes: which odometer digit advanced, whether each digit
sits at a first / interior / clamped-last position, and which fold pass is
active. Within a class every step moves identical word counts, so the
engine evaluates one representative step per class with exact interval
arithmetic and multiplies by the class occurrence count. The brute-force
simulator in ``oracle`` validates the arithmetic at small scale; it shares
the binding geometry and the retention policy but none of the counting
done here.

Word counting uses strided index sets: a slot's touched input rows form an
arithmetic progression of equal-width windows, unions across consecutive
spatial positions stay in that form because ownership partitions the index
space, and ragged fold ranges reduce to at most a few boxes combined by
inclusion-exclusion.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

from .binding import (
    AxisNode,
    BindError,
    BoundMapping,
    Fold,
    decompose_range,
    fold as make_fold,
    position_count,
    spatial_positions_of,
)
from .dataflow import Retention
from .layers import Dim, LayerKind, macs as layer_macs
from .policy import (
    FreshMode,
    ReuseClass,
    TensorKind,
    changed_axes,
    coupled_axes,
    fresh_mode,
    input_words_per_element,
    output_resident,
    slide_applies,
    tensor_resident,
)

_INPUT = TensorKind.Input
_WEIGHT = TensorKind.Weight
_OUTPUT = TensorKind.Output

_ALL_AXES = (Dim.K, Dim.C, Dim.Y, Dim.X, Dim.R, Dim.S)


def _ceil_div(a: int, b: int) -> int:
    return -(-a // b)


# --------------------------------------------------------------------------
# Strided index sets: unions of `count` windows of `width` every `period`.
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class AP:
    start: int
    period: int
    width: int
    count: int

    @property
    def end(self) -> int:
        return self.start + (self.count - 1) * self.period + self.width - 1


def ap_make(start: int, period: int, width: int, count: int) -> AP | None:
    if count <= 0 or width <= 0:
        return None
    if count == 1:
        return AP(start, 1, width, 1)
    if width >= period:
        return AP(start, 1, (count - 1) * period + width, 1)
    return AP(start, period, width, count)


def ap_card(ap: AP | None) -> int:
    return 0 if ap is None else ap.width * ap.count


def ap_count_le(ap: AP | None, x: int) -> int:
    """|ap ∩ (-inf, x]|"""
    if ap is None or x < ap.start:
        return 0
    i = (x - ap.start) // ap.period
    if i >= ap.count:
        return ap.width * ap.count
    return i * ap.width + min(ap.width, x - ap.start - i * ap.period + 1)


def ap_count_in(ap: AP | None, lo: int, hi: int) -> int:
    if ap is None or hi < lo:
        return 0
    return ap_count_le(ap, hi) - ap_count_le(ap, lo - 1)


def ap_clip_ge(ap: AP | None, lo: int) -> list[AP]:
    """ap ∩ [lo, +inf) as a disjoint AP list (at most 2 entries)."""
    if ap is None or ap.end < lo:
        return []
    if lo <= ap.start:
        return [ap]
    i = (lo - ap.start) // ap.period
    off = lo - ap.start - i * ap.period
    out: list[AP] = []
    if off < ap.width and i < ap.count:
        first = ap_make(lo, 1, ap.width - off, 1)
        if first:
            out.append(first)
    if i + 1 < ap.count:
        rest = ap_make(ap.start + (i + 1) * ap.period, ap.period, ap.width, ap.count - i - 1)
        if rest:
            out.append(rest)
    return out


def _count_mod_in(lo: int, hi: int, period: int, phase: int, c: int, d: int) -> int:
    """Count x in [lo, hi] with (x - phase) mod period in [c, d]."""
    if hi < lo or d < c:
        return 0

    def upto(x: int) -> int:
        q, r = divmod(x - phase, period)
        return q * (d - c + 1) + max(0, min(r, d) - c + 1)

    return upto(hi) - upto(lo - 1)


def _residues(ap: AP, period: int, phase: int) -> list[tuple[int, int]]:
    c = (ap.start - phase) % period
    d = c + ap.width - 1
    if ap.width >= period:
        return [(0, period - 1)]
    if d < period:
        return [(c, d)]
    return [(c, period - 1), (0, d - period)]


def ap_intersect_count(a: AP | None, b: AP | None) -> int:
    if a is None or b is None:
        return 0
    lo, hi = max(a.start, b.start), min(a.end, b.end)
    if hi < lo:
        return 0
    if a.period == 1:
        return ap_count_in(b, lo, hi)
    if b.period == 1:
        return ap_count_in(a, lo, hi)
    if a.period != b.period:
        raise BindError("intersecting strided sets with different periods is unsupported")
    period = a.period
    total = 0
    for ca, da in _residues(a, period, a.start):
        for cb, db in _residues(b, period, a.start):
            total += _count_mod_in(lo, hi, period, a.start, max(ca, cb), min(da, db))
    return total


def aplist_card(aps: list[AP]) -> int:
    return sum(ap_card(ap) for ap in aps)


def aplist_intersect_count(a: list[AP], b: list[AP]) -> int:
    return sum(ap_intersect_count(x, y) for x in a for y in b)


def _aplist_intersection(a: list[AP], b: list[AP]) -> list[AP]:
    """Materialized intersection; only reached for 3+-way overlap terms,
    which involve tiny boundary boxes."""
    out: list[AP] = []
    for x in a:
        for y in b:
            lo, hi = max(x.start, y.start), min(x.end, y.end)
            if hi < lo:
                continue
            if x.period == 1 and y.period == 1:
                ap = ap_make(lo, 1, hi - lo + 1, 1)
                if ap:
                    out.append(ap)
                continue
            pts = _ap_points(x, lo, hi) & _ap_points(y, lo, hi)
            out.extend(_points_to_aps(pts))
    return out


def _ap_points(ap: AP, lo: int, hi: int) -> set[int]:
    pts = set()
    for i in range(ap.count):
        base = ap.start + i * ap.period
        if base > hi:
            break
        for k in range(ap.width):
            v = base + k
            if lo <= v <= hi:
                pts.add(v)
    return pts


def _points_to_aps(pts: set[int]) -> list[AP]:
    runs: list[list[int]] = []
    for p in sorted(pts):
        if runs and runs[-1][1] + 1 == p:
            runs[-1][1] = p
        else:
            runs.append([p, p])
    return [AP(a, 1, b - a + 1, 1) for a, b in runs]


# --------------------------------------------------------------------------
# Per-axis evaluation over a box of spatial positions.
# --------------------------------------------------------------------------


@dataclass
class AxisEval:
    """Owned-origin statistics of one axis across a box of positions."""

    lo: int = 0
    hi: int = -1          # union of owned origins/indices (contiguous)
    n_pos: int = 0        # non-empty varying positions (1 when fixed)
    cnt_samples: tuple[tuple[int, int], ...] = ()  # (multiplicity, owned count)
    empty: bool = True

    @property
    def span(self) -> int:
        return 0 if self.empty else self.hi - self.lo + 1

    @property
    def max_count(self) -> int:
        return max((c for _, c in self.cnt_samples), default=0)


def _axis_eval(bound: BoundMapping, axis: Dim, positions: dict, box: dict) -> AxisEval:
    chain = bound.chains[axis]
    varying: list[tuple[AxisNode, int, int]] = []
    pos = dict(positions)
    for node in chain.nodes:
        rng = box.get(node.key)
        if rng is None:
            continue
        a, b = rng
        if a == b:
            pos[node.key] = a
        else:
            varying.append((node, a, b))
    if len(varying) > 1:
        raise BindError(
            f"unsupported mapping: two directives vary spatially on axis {axis.value}"
        )
    if not varying:
        st = chain.state(pos)
        if st.owned.empty:
            return AxisEval()
        n = len(st.owned)
        return AxisEval(st.owned.lo, st.owned.hi, 1, ((1, n),), empty=False)

    node, a, b = varying[0]
    depth = chain.nodes.index(node)
    seg_lo, seg_hi = 0, chain.extent - 1
    for outer in chain.nodes[:depth]:
        p = pos[outer.key]
        lo = seg_lo + p * outer.offset
        if lo > seg_hi:
            return AxisEval()
        seg_lo, seg_hi = lo, min(lo + outer.size - 1, seg_hi)
    gran = seg_hi - seg_lo + 1
    try:
        n_eff = position_count(gran, node.size, node.offset, chain.window, chain.stride)
    except BindError:
        return AxisEval()
    b_eff = min(b, n_eff - 1)
    if b_eff < a:
        return AxisEval()

    def owned_at(p: int):
        st = chain.state({**pos, node.key: p})
        return st.owned

    first = owned_at(a)
    last = owned_at(b_eff) if b_eff != a else first
    if first.empty or last.empty:
        return AxisEval()
    samples: list[tuple[int, int]] = []
    specials = sorted({p for p in (0, n_eff - 1) if a <= p <= b_eff})
    interior = (b_eff - a + 1) - len(specials)
    for p in specials:
        samples.append((1, len(owned_at(p))))
    if interior > 0:
        p0 = a
        while p0 in (0, n_eff - 1):
            p0 += 1
        samples.append((interior, len(owned_at(p0))))
    return AxisEval(first.lo, last.hi, b_eff - a + 1, tuple(samples), empty=False)


def _merge_count(n: int, period: int, width: int) -> int:
    """Cardinality of n windows of `width` spaced `period` apart."""
    if n <= 0 or width <= 0:
        return 0
    return (n - 1) * min(period, width) + width


# --------------------------------------------------------------------------
# Tensor index sets over a box.
# --------------------------------------------------------------------------


@dataclass
class Component:
    """One independent axis of a tensor's index space over a box."""

    union: list[AP]
    sum_factor: int   # sum over varying positions of per-slot counts
    max_factor: int   # max per-slot count
    empty: bool = False


def _plain_component(ev: AxisEval) -> Component:
    if ev.empty:
        return Component([], 0, 0, empty=True)
    ap = ap_make(ev.lo, 1, ev.span, 1)
    return Component([ap] if ap else [], ev.span, ev.max_count)


@dataclass(frozen=True)
class SlideSpec:
    """Halo slide on one axis: only input indices past `keep_end` are fresh."""

    axis: Dim
    keep_end: int


def _sum_trailing_overlap(e0: int, pitch: int, n: int, t: int, w: int) -> int:
    """Sum over j<n of clamp(e0 + j*pitch - t + 1, 0, w)."""
    if n <= 0 or w <= 0:
        return 0
    j1 = min(max(0, _ceil_div(t - e0, pitch)), n)
    j2 = min(max(0, _ceil_div(t + w - 1 - e0, pitch)), n)
    ramp = 0
    if j2 > j1:
        first = e0 + j1 * pitch - t + 1
        last = e0 + (j2 - 1) * pitch - t + 1
        ramp = (first + last) * (j2 - j1) // 2
    return ramp + (n - j2) * w


def _window_component(
    orig: AxisEval, idx: AxisEval, stride: int, slide: SlideSpec | None
) -> Component:
    """Input rows/cols: origin positions x stride plus window indices."""
    if orig.empty or idx.empty:
        return Component([], 0, 0, empty=True)
    w = idx.span
    start = orig.lo * stride + idx.lo
    union_ap = ap_make(start, stride, w, orig.span)
    if slide is None:
        sum_f = 0
        for mi, ci in idx.cnt_samples:
            mm = min(stride, ci)
            sum_f += mi * (mm * (orig.span - orig.n_pos) + ci * orig.n_pos)
        max_f = _merge_count(orig.max_count, stride, idx.max_count)
        return Component([union_ap] if union_ap else [], sum_f, max_f)

    if idx.n_pos > 1:
        raise BindError("unsupported halo mapping: window axis varies spatially")
    union = ap_clip_ge(union_ap, slide.keep_end + 1)
    if orig.n_pos == 1:
        per_slot = aplist_card(union)
        return Component(union, per_slot, per_slot)
    if orig.max_count != 1 or any(c != 1 for _, c in orig.cnt_samples):
        raise BindError("unsupported halo mapping: multi-origin slots on the slide axis")
    sum_f = _sum_trailing_overlap(
        orig.lo * stride + idx.hi, stride, orig.span, slide.keep_end + 1, w
    )
    max_f = min(w, max(0, orig.hi * stride + idx.hi - slide.keep_end))
    return Component(union, sum_f, max_f)


@dataclass
class BoxSet:
    """A tensor's index set over one box of slots."""

    components: list[Component]
    word_factor: int = 1   # words per element (two operands for adds)
    other_fan: int = 1     # slot multiplicity from axes outside this tensor
    active: bool = True    # False when a non-tensor axis is empty

    @property
    def empty(self) -> bool:
        return not self.active or any(c.empty for c in self.components)

    @property
    def union_words(self) -> int:
        if self.empty:
            return 0
        out = self.word_factor
        for c in self.components:
            out *= aplist_card(c.union)
        return out

    @property
    def sum_words(self) -> int:
        if self.empty:
            return 0
        out = self.word_factor * self.other_fan
        for c in self.components:
            out *= c.sum_factor
        return out


def union_over_boxes(sets: list[BoxSet]) -> int:
    """Exact union cardinality by inclusion-exclusion (few boxes)."""
    live = [s for s in sets if not s.empty]
    if not live:
        return 0
    if len(live) == 1:
        return live[0].union_words
    if len(live) > 4:
        raise BindError("unsupported mapping: too many ragged fold boxes")
    total = 0
    n = len(live)
    for mask in range(1, 1 << n):
        chosen = [live[i] for i in range(n) if mask >> i & 1]
        if len(chosen) == 1:
            term = chosen[0].union_words
        else:
            term = chosen[0].word_factor
            for ci in range(len(chosen[0].components)):
                if len(chosen) == 2:
                    term *= aplist_intersect_count(
                        chosen[0].components[ci].union, chosen[1].components[ci].union
                    )
                else:
                    inter = chosen[0].components[ci].union
                    for other in chosen[1:]:
                        inter = _aplist_intersection(inter, other.components[ci].union)
                    term *= aplist_card(inter)
                if term == 0:
                    break
        total += term if bin(mask).count("1") % 2 == 1 else -term
    return total


# --------------------------------------------------------------------------
# Pass geometry: which slots are active in each fold pass.
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class PassBoxes:
    boxes: tuple[tuple[tuple[tuple[int, int], tuple[int, int]], ...], ...]

    def as_dicts(self) -> list[dict]:
        return [dict(box) for box in self.boxes]


def _pass_boxes(bound: BoundMapping, f: Fold, fo: int, fi: int) -> PassBoxes:
    vc_lo = fo * f.cluster_count
    vc_hi = min((fo + 1) * f.cluster_count, bound.units_outer)
    vu_lo = fi * f.cluster_size
    vu_hi = min((fi + 1) * f.cluster_size, bound.units_inner)
    outer_boxes = decompose_range(vc_lo, vc_hi, [n.positions for n in bound.spatial_outer])
    inner_boxes = decompose_range(vu_lo, vu_hi, [n.positions for n in bound.spatial_inner])
    if len(outer_boxes) > 1 and len(inner_boxes) > 1:
        raise BindError("unsupported mapping: ragged folds at both levels")
    combined = []
    for ob in outer_boxes:
        for ib in inner_boxes:
            box = tuple(
                (node.key, tuple(rng))
                for node, rng in list(zip(bound.spatial_outer, ob))
                + list(zip(bound.spatial_inner, ib))
            )
            combined.append(box)
    return PassBoxes(tuple(combined))


def full_box(bound: BoundMapping) -> dict:
    return {
        n.key: (0, n.positions - 1) for n in bound.spatial_outer + bound.spatial_inner
    }


def _slot_box(bound: BoundMapping, vc: int, vu: int) -> dict:
    box = {}
    for key, p in spatial_positions_of(bound.spatial_outer, vc).items():
        box[key] = (p, p)
    for key, p in spatial_positions_of(bound.spatial_inner, vu).items():
        box[key] = (p, p)
    return box


def _pass_signature(bound: BoundMapping, pb: PassBoxes) -> tuple:
    """Two passes with equal signatures move identical word counts."""
    nodes = {n.key: n for n in bound.spatial_outer + bound.spatial_inner}
    sig = []
    for box in pb.boxes:
        entry = []
        for key, (a, b) in box:
            node = nodes[key]
            entry.append((key, b - a + 1, a == 0, b == node.positions - 1))
        sig.append(tuple(entry))
    return tuple(sig)


# --------------------------------------------------------------------------
# Representative step evaluation.
# --------------------------------------------------------------------------

_TENSOR_AXES = {
    # component axes per layer family; "rows"/"cols" consume (Y,R)/(X,S)
    "conv": {
        _INPUT: {Dim.C, Dim.Y, Dim.X, Dim.R, Dim.S},
        _WEIGHT: {Dim.K, Dim.C, Dim.R, Dim.S},
        _OUTPUT: {Dim.K, Dim.Y, Dim.X},
    },
    "fused": {
        _INPUT: {Dim.C, Dim.Y, Dim.X, Dim.R, Dim.S},
        _WEIGHT: {Dim.C, Dim.R, Dim.S},
        _OUTPUT: {Dim.C, Dim.Y, Dim.X},
    },
}


class StepEval:
    """Evaluates word counts for one representative step state."""

    def __init__(self, bound: BoundMapping, digit_positions: tuple[int, ...]):
        self.bound = bound
        self.layer = bound.layer
        self.positions = bound.state_positions(digit_positions, {})
        self._cache: dict = {}

    def axis(self, axis: Dim, box: dict, box_key) -> AxisEval:
        key = (axis, box_key)
        out = self._cache.get(key)
        if out is None:
            out = _axis_eval(self.bound, axis, self.positions, box)
            self._cache[key] = out
        return out

    def mac_stats(self, box: dict, box_key) -> tuple[int, int, int]:
        """(total MACs, max per-slot MACs, active slots) over a box."""
        layer = self.layer
        if layer.kind is LayerKind.ResidualAdd:
            axes = (Dim.C, Dim.Y, Dim.X)
        elif layer.kind is LayerKind.DepthwiseConv:
            axes = (Dim.C, Dim.Y, Dim.X, Dim.R, Dim.S)
        else:
            axes = _ALL_AXES
        total, mx, slots = 1, 1, 1
        for axis in axes:
            ev = self.axis(axis, box, box_key)
            if ev.empty:
                return 0, 0, 0
            total *= ev.span
            mx *= ev.max_count
            slots *= ev.n_pos
        return total, mx, slots

    def tensor_set(
        self, tensor: TensorKind, box: dict, box_key, slide: SlideSpec | None = None
    ) -> BoxSet:
        layer = self.layer
        fused = layer.channel_fused
        family = "fused" if fused else "conv"
        own_axes = _TENSOR_AXES[family][tensor]
        if tensor is _WEIGHT and layer.kind is LayerKind.ResidualAdd:
            return BoxSet([Component([], 0, 0, empty=True)])
        comps: list[Component] = []
        factor = 1
        if tensor is _INPUT:
            factor = input_words_per_element(layer)
            comps.append(_plain_component(self.axis(Dim.C, box, box_key)))
            comps.append(
                _window_component(
                    self.axis(Dim.Y, box, box_key),
                    self.axis(Dim.R, box, box_key),
                    layer.strideY,
                    slide if slide and slide.axis is Dim.Y else None,
                )
            )
            comps.append(
                _window_component(
                    self.axis(Dim.X, box, box_key),
                    self.axis(Dim.S, box, box_key),
                    layer.strideX,
                    slide if slide and slide.axis is Dim.X else None,
                )
            )
        elif tensor is _WEIGHT:
            axes = (Dim.C, Dim.R, Dim.S) if fused else (Dim.K, Dim.C, Dim.R, Dim.S)
            for axis in axes:
                comps.append(_plain_component(self.axis(axis, box, box_key)))
        else:
            axes = (Dim.C, Dim.Y, Dim.X) if fused else (Dim.K, Dim.Y, Dim.X)
            for axis in axes:
                comps.append(_plain_component(self.axis(axis, box, box_key)))
        other_fan = 1
        active = True
        relevant = _ALL_AXES if not fused else (Dim.C, Dim.Y, Dim.X, Dim.R, Dim.S)
        for axis in relevant:
            if axis in own_axes:
                continue
            ev = self.axis(axis, box, box_key)
            if ev.empty:
                active = False
                break
            other_fan *= ev.n_pos
        return BoxSet(comps, factor, other_fan, active)

    def slide_keep_end(self, node: AxisNode) -> int:
        """Highest input index already on the array before this slide step."""
        fb = full_box(self.bound)
        fb_key = ("full",)
        axis = node.axis
        chain = self.bound.chains[axis]
        orig = self.axis(axis, fb, fb_key)
        if orig.empty:
            return -1
        idx_axis = Dim.R if axis is Dim.Y else Dim.S
        idx = self.axis(idx_axis, fb, fb_key)
        arr_end = orig.hi * chain.stride + (idx.hi if not idx.empty else 0)
        return arr_end - node.offset


@dataclass
class PassCounts:
    compute: int = 0
    macs: int = 0
    dist: dict = field(default_factory=lambda: {_INPUT: 0, _WEIGHT: 0})
    need_union: int = 0
    out_union: int = 0
    partials: int = 0
    active_slots: int = 0


def count_pass(
    step: StepEval,
    pb: PassBoxes,
    multicast: bool,
    modes: dict[TensorKind, FreshMode],
    slide: SlideSpec | None,
    want_partials: bool,
) -> PassCounts:
    pc = PassCounts()
    need_sets = {_INPUT: [], _WEIGHT: []}
    fresh_sets = {_INPUT: [], _WEIGHT: []}
    out_sets = []
    for raw in pb.boxes:
        box = dict(raw)
        box_key = raw
        total, mx, slots = step.mac_stats(box, box_key)
        if total == 0:
            continue
        pc.macs += total
        pc.compute = max(pc.compute, mx)
        pc.active_slots += slots
        for t in (_INPUT, _WEIGHT):
            need = step.tensor_set(t, box, box_key)
            need_sets[t].append(need)
            mode = modes[t]
            if mode is FreshMode.ZERO:
                continue
            if mode is FreshMode.SLIDE:
                fresh_sets[t].append(step.tensor_set(t, box, box_key, slide=slide))
            else:
                fresh_sets[t].append(need)
        out = step.tensor_set(_OUTPUT, box, box_key)
        out_sets.append(out)
        if want_partials:
            pc.partials += out.sum_words
    for t in (_INPUT, _WEIGHT):
        if fresh_sets[t]:
            if multicast:
                pc.dist[t] = union_over_boxes(fresh_sets[t])
            else:
                pc.dist[t] = sum(s.sum_words for s in fresh_sets[t])
    pc.need_union = union_over_boxes(need_sets[_INPUT]) + union_over_boxes(
        need_sets[_WEIGHT]
    )
    pc.out_union = union_over_boxes(out_sets)
    return pc


def _evict_words(dep_step: StepEval, pb: PassBoxes) -> int:
    """Output words flushed by the arriving pass's slots (sized at the
    previous occupancy)."""
    total = 0
    for raw in pb.boxes:
        total += dep_step.tensor_set(_OUTPUT, dict(raw), raw).sum_words
    return total


# --------------------------------------------------------------------------
# Event enumeration.
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class Event:
    """`count` tile steps whose compute overlaps a window of `window_words`."""

    count: int
    compute: int
    window_words: int
    dist_in: int = 0
    dist_wt: int = 0
    evict: int = 0
    partials: int = 0


@dataclass
class LayerProfile:
    """Bandwidth-independent characterization of one (layer, dataflow)."""

    bound: BoundMapping
    fold: Fold
    multicast: bool
    elem_bytes: int
    macs: int
    events: list[Event]
    fill_words: int
    drain_words: int
    compute_total: int
    dist_total: dict
    collected_total: int
    gb_tile_words: int
    pe_buffer_words: int

    @property
    def utilized_pes(self) -> int:
        return self.fold.utilized_pes

    @property
    def total_traffic_words(self) -> int:
        return self.dist_total[_INPUT] + self.dist_total[_WEIGHT] + self.collected_total


def _digit_granule(bound: BoundMapping, node: AxisNode) -> tuple[int, int, int]:
    chain = bound.chains[node.axis]
    gran = chain.granule(chain.nodes.index(node))
    return chain.window, chain.stride, gran


def _is_exact_tiled(bound: BoundMapping, node: AxisNode) -> bool:
    w, s, gran = _digit_granule(bound, node)
    size_c = min(node.size, gran)
    return node.offset == size_c - w + s


def _context_kinds(bound: BoundMapping, node: AxisNode) -> list[tuple[int, int]]:
    """(representative position, multiplicity) pairs for a context digit."""
    n = node.positions
    if n == 1:
        return [(0, 1)]
    if _is_exact_tiled(bound, node):
        return [(0, n - 1), (n - 1, 1)]
    out = [(0, 1)]
    if n > 2:
        out.append((1, n - 2))
    out.append((n - 1, 1))
    return out


def _advance_pairs(bound: BoundMapping, node: AxisNode) -> list[tuple[int, int, int]]:
    """(dep position, arr position, multiplicity) for the advancing digit."""
    n = node.positions
    if n < 2:
        return []
    if _is_exact_tiled(bound, node):
        pairs = []
        if n > 2:
            pairs.append((0, 1, n - 2))
        pairs.append((n - 2, n - 1, 1))
        return pairs
    pairs = [(0, 1, 1)]
    if n > 3:
        pairs.append((1, 2, n - 3))
    if n > 2:
        pairs.append((n - 2, n - 1, 1))
    return pairs


def build_profile(
    bound: BoundMapping, num_pes: int, multicast: bool, elem_bytes: int
) -> LayerProfile:
    """Enumerate step classes and produce the event table for one mapping."""
    f = make_fold(bound, num_pes)
    layer = bound.layer
    total_macs = layer_macs(layer)
    retention = bound.retention
    none_ret = retention is Retention.NONE

    # fold pass classes (independent of the temporal state)
    pass_list = [(fo, fi) for fo in range(f.passes_outer) for fi in range(f.passes_inner)]
    boxes_by_pass = {p: _pass_boxes(bound, f, *p) for p in pass_list}
    sig_by_pass = {p: _pass_signature(bound, boxes_by_pass[p]) for p in pass_list}
    pass_groups: dict = {}
    for p in pass_list:
        g = pass_groups.setdefault(sig_by_pass[p], [0, p])
        g[0] += 1
    pair_groups: dict = {}
    for i in range(len(pass_list) - 1):
        key = (sig_by_pass[pass_list[i]], sig_by_pass[pass_list[i + 1]])
        g = pair_groups.setdefault(key, [0, (pass_list[i], pass_list[i + 1])])
        g[0] += 1
    first_pass, last_pass = pass_list[0], pass_list[-1]

    digits = bound.digits
    n_digits = len(digits)

    # temporal transition classes: (count, advancing index, dep reps, arr reps)
    transitions: list[tuple[int, int, tuple[int, ...], tuple[int, ...]]] = [
        (1, -1, (), tuple(0 for _ in digits))
    ]
    for a, node in enumerate(digits):
        pairs = _advance_pairs(bound, node)
        if not pairs:
            continue
        outer_opts = [_context_kinds(bound, digits[j]) for j in range(a)]

        def emit(j: int, mult: int, prefix: list[int]):
            if j == a:
                for dep_p, arr_p, m in pairs:
                    dep = prefix + [dep_p] + [digits[k].positions - 1 for k in range(a + 1, n_digits)]
                    arr = prefix + [arr_p] + [0] * (n_digits - a - 1)
                    transitions.append((mult * m, a, tuple(dep), tuple(arr)))
                return
            for p, m in outer_opts[j]:
                emit(j + 1, mult * m, prefix + [p])

        emit(0, 1, [])

    assert sum(c for c, *_ in transitions) == bound.total_steps

    events: list[Event] = []
    fill_words = 0
    compute_total = 0
    dist_total = {_INPUT: 0, _WEIGHT: 0}
    collected_total = 0
    gb_tile_words = 0
    macs_check = 0
    out_coupled = coupled_axes(layer, _OUTPUT)

    group_items = list(pass_groups.items())
    pair_items = list(pair_groups.items())

    for count, adv, dep_reps, arr_reps in transitions:
        arr_step = StepEval(bound, arr_reps)
        modes = {
            _INPUT: fresh_mode(bound, _INPUT, adv),
            _WEIGHT: fresh_mode(bound, _WEIGHT, adv),
        }
        slide = None
        if FreshMode.SLIDE in modes.values():
            node = digits[adv]
            slide = SlideSpec(node.axis, arr_step.slide_keep_end(node))
        dep_step = StepEval(bound, dep_reps) if adv >= 0 else None
        do_evict = (
            not none_ret and adv >= 0 and bool(out_coupled & changed_axes(bound, adv))
        )

        arr_pc_by_sig = {
            sig: count_pass(arr_step, boxes_by_pass[rep], multicast, modes, slide, none_ret)
            for sig, (cnt, rep) in group_items
        }
        evict_by_sig = {
            sig: (_evict_words(dep_step, boxes_by_pass[rep]) if do_evict else 0)
            for sig, (cnt, rep) in group_items
        }

        for sig, (cnt, rep) in group_items:
            pc = arr_pc_by_sig[sig]
            macs_check += count * cnt * pc.macs
            compute_total += count * cnt * pc.compute
            for t in (_INPUT, _WEIGHT):
                dist_total[t] += count * cnt * pc.dist[t]
            collected_total += count * cnt * (pc.partials + evict_by_sig[sig])
            gb_tile_words = max(gb_tile_words, pc.need_union + pc.out_union)

        first_pc = arr_pc_by_sig[sig_by_pass[first_pass]]
        first_inflow = (
            first_pc.dist[_INPUT] + first_pc.dist[_WEIGHT] + evict_by_sig[sig_by_pass[first_pass]]
        )
        if adv < 0:
            fill_words = first_inflow
        else:
            dep_last = count_pass(
                dep_step,
                boxes_by_pass[last_pass],
                multicast,
                {_INPUT: FreshMode.ZERO, _WEIGHT: FreshMode.ZERO},
                None,
                none_ret,
            )
            events.append(
                Event(
                    count,
                    dep_last.compute,
                    first_inflow + dep_last.partials,
                    first_pc.dist[_INPUT],
                    first_pc.dist[_WEIGHT],
                    evict_by_sig[sig_by_pass[first_pass]],
                    dep_last.partials,
                )
            )
        for (sig_cur, sig_nxt), (cnt, (p_cur, p_nxt)) in pair_items:
            cur = arr_pc_by_sig[sig_cur]
            nxt = arr_pc_by_sig[sig_nxt]
            ev = evict_by_sig[sig_nxt]
            win = nxt.dist[_INPUT] + nxt.dist[_WEIGHT] + ev + cur.partials
            events.append(
                Event(
                    count * cnt,
                    cur.compute,
                    win,
                    nxt.dist[_INPUT],
                    nxt.dist[_WEIGHT],
                    ev,
                    cur.partials,
                )
            )

    assert macs_check == total_macs, (
        f"work conservation failed: counted {macs_check}, layer has {total_macs}"
    )

    # final state: the very last pass has no successor
    final_reps = tuple(n.positions - 1 for n in digits)
    final_step = StepEval(bound, final_reps)
    final_pc = count_pass(
        final_step,
        boxes_by_pass[last_pass],
        multicast,
        {_INPUT: FreshMode.ZERO, _WEIGHT: FreshMode.ZERO},
        None,
        none_ret,
    )
    events.append(Event(1, final_pc.compute, final_pc.partials, 0, 0, 0, final_pc.partials))

    drain_words = 0
    if not none_ret:
        out = final_step.tensor_set(_OUTPUT, full_box(bound), ("full",))
        drain_words = out.sum_words
        collected_total += drain_words

    return LayerProfile(
        bound=bound,
        fold=f,
        multicast=multicast,
        elem_bytes=elem_bytes,
        macs=total_macs,
        events=events,
        fill_words=fill_words,
        drain_words=drain_words,
        compute_total=compute_total,
        dist_total=dist_total,
        collected_total=collected_total,
        gb_tile_words=gb_tile_words,
        pe_buffer_words=_pe_buffer_words(bound, f),
    )


def _pe_buffer_words(bound: BoundMapping, f: Fold) -> int:
    """Per-PE buffer need in words (before the double-buffer factor).

    Physical PE 0 hosts the largest slots, one per fold pass. Resident
    tensors occupy their slot across steps; the active slot adds its
    transient working set.
    """
    step = StepEval(bound, tuple(0 for _ in bound.digits))
    resident = {t: tensor_resident(bound, t) for t in (_INPUT, _WEIGHT)}
    out_in_pe = bound.retention is not Retention.NONE
    multi_step = bound.total_steps >= 2

    res_sizes: list[int] = []
    trans_sizes: list[int] = []
    for ro in range(f.passes_outer):
        vc = ro * f.cluster_count
        if vc >= bound.units_outer:
            continue
        for ri in range(f.passes_inner):
            vu = ri * f.cluster_size
            if vu >= bound.units_inner:
                continue
            box = _slot_box(bound, vc, vu)
            box_key = tuple(sorted(box.items()))
            res = trans = 0
            for t in (_INPUT, _WEIGHT):
                words = step.tensor_set(t, box, box_key).sum_words
                if resident[t]:
                    res += words
                else:
                    trans += words
            out_words = step.tensor_set(_OUTPUT, box, box_key).sum_words
            if out_in_pe:
                res += out_words
            else:
                trans += out_words
            res_sizes.append(res)
            trans_sizes.append(trans)
    if not res_sizes:
        return 0
    if multi_step:
        return sum(res_sizes) + max(trans_sizes)
    best = prefix = 0
    for res, trans in zip(res_sizes, trans_sizes):
        prefix += res
        best = max(best, prefix + trans)
    return best


# --------------------------------------------------------------------------
# Public, spec-facing helpers.
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class Parallelism:
    cluster_count: int
    cluster_size: int
    utilized_pes: int
    per_pe_work_per_step: int


def parallelism(bound: BoundMapping, num_pes: int) -> Parallelism:
    f = make_fold(bound, num_pes)
    step = StepEval(bound, tuple(0 for _ in bound.digits))
    work = 0
    for raw in _pass_boxes(bound, f, 0, 0).boxes:
        _, mx, _ = step.mac_stats(dict(raw), raw)
        work = max(work, mx)
    return Parallelism(f.cluster_count, f.cluster_size, f.utilized_pes, work)


class Phase:
    """Tile phases for spot traffic queries."""

    FIRST = "first"
    LAST = "last"

    @staticmethod
    def steady(axis: Dim) -> tuple[str, Dim]:
        return ("steady", axis)


@dataclass(frozen=True)
class TileTraffic:
    distributed: dict
    collected: int
    phase: object


def tile_traffic(bound: BoundMapping, num_pes: int, multicast: bool, phase) -> TileTraffic:
    """Word movement of one representative tile step in the given phase."""
    f = make_fold(bound, num_pes)
    first = _pass_boxes(bound, f, 0, 0)
    none_ret = bound.retention is Retention.NONE
    if phase == Phase.FIRST:
        step = StepEval(bound, tuple(0 for _ in bound.digits))
        modes = {_INPUT: FreshMode.FULL, _WEIGHT: FreshMode.FULL}
        pc = count_pass(step, first, multicast, modes, None, False)
        return TileTraffic(dict(pc.dist), 0, phase)
    if phase == Phase.LAST:
        reps = tuple(n.positions - 1 for n in bound.digits)
        step = StepEval(bound, reps)
        if none_ret:
            last = _pass_boxes(bound, f, f.passes_outer - 1, f.passes_inner - 1)
            pc = count_pass(
                step, last, multicast, {_INPUT: FreshMode.ZERO, _WEIGHT: FreshMode.ZERO},
                None, True,
            )
            return TileTraffic({_INPUT: 0, _WEIGHT: 0}, pc.partials, phase)
        out = step.tensor_set(_OUTPUT, full_box(bound), ("full",))
        return TileTraffic({_INPUT: 0, _WEIGHT: 0}, out.sum_words, phase)
    _, axis = phase
    adv = next(
        (i for i, n in enumerate(bound.digits) if n.axis is axis and n.positions >= 2),
        None,
    )
    if adv is None:
        raise BindError(f"axis {axis.value} has no temporal steps in this mapping")
    node = bound.digits[adv]
    reps = [0] * len(bound.digits)
    reps[adv] = 1
    step = StepEval(bound, tuple(reps))
    modes = {
        _INPUT: fresh_mode(bound, _INPUT, adv),
        _WEIGHT: fresh_mode(bound, _WEIGHT, adv),
    }
    slide = None
    if FreshMode.SLIDE in modes.values():
        slide = SlideSpec(node.axis, step.slide_keep_end(node))
    pc = count_pass(step, first, multicast, modes, slide, none_ret)
    collected = pc.partials
    if not none_ret and (coupled_axes(bound.layer, _OUTPUT) & changed_axes(bound, adv)):
        dep = StepEval(bound, tuple(0 for _ in bound.digits))
        collected = _evict_words(dep, first)
    return TileTraffic(dict(pc.dist), collected, phase)


def reuse_class(bound: BoundMapping, tensor: TensorKind, num_pes: int = 256) -> ReuseClass:
    """Dominant reuse mechanism of one tensor under this mapping."""
    if tensor is not TensorKind.Output:
        f = make_fold(bound, num_pes)
        step = StepEval(bound, tuple(0 for _ in bound.digits))
        pb = _pass_boxes(bound, f, 0, 0)
        modes = {_INPUT: FreshMode.FULL, _WEIGHT: FreshMode.FULL}
        pc_on = count_pass(step, pb, True, modes, None, False)
        pc_off = count_pass(step, pb, False, modes, None, False)
        if pc_off.dist[tensor] > pc_on.dist[tensor] > 0:
            return ReuseClass.Spatial
        if (
            bound.retention is Retention.STATIONARY_HALO
            and bound.digits
            and slide_applies(bound, tensor, len(bound.digits) - 1)
        ):
            return ReuseClass.SpatioTemporal
        if tensor_resident(bound, tensor) and bound.total_steps >= 2:
            return ReuseClass.Temporal
        return ReuseClass.NoReuse
    if output_resident(bound) and bound.total_steps >= 2:
        return ReuseClass.Temporal
    return ReuseClass.NoReuse
