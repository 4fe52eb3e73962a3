"""Brute-force reference simulator.

Executes a bound mapping literally: walks the odometer step by step and
every fold pass within it, materializes each slot's MAC tuples, derives
the index sets those MACs touch, applies the retention policy with real
set arithmetic, and counts every NoC word and compute cycle. It shares the
binding geometry and the retention policy with the analytical model but
none of its closed-form counting, so agreement on randomized instances is
meaningful evidence.

Intended for small instances only (the default caps refuse big ones).
"""
from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field

from .binding import (
    BoundMapping,
    bind,
    fold as make_fold,
    odometer_states,
    spatial_positions_of,
)
from .dataflow import Dataflow, Retention
from .layers import Dim, LayerKind, LayerShape, macs as layer_macs
from .perf import HardwareConfig, LayerAnalysis
from .policy import (
    FreshMode,
    TensorKind,
    changed_axes,
    fresh_mode,
    input_words_per_element,
    tensor_resident,
)

_INPUT = TensorKind.Input
_WEIGHT = TensorKind.Weight
_OUTPUT = TensorKind.Output


class OracleError(ValueError):
    pass


@dataclass
class PassRecord:
    step: int
    fo: int
    fi: int
    compute: int = 0
    dist: dict = field(default_factory=lambda: {_INPUT: 0, _WEIGHT: 0})
    evict_in: int = 0      # output words flushed as this pass's slots arrive
    partials: int = 0      # per-pass partial sums (no-retention mappings)
    active_slots: int = 0


@dataclass
class SimResult:
    total_cycles: int
    fill_cycles: int
    drain_cycles: int
    steady_cycles: int
    distributed: dict
    collected: int
    per_step: list[PassRecord]
    per_pe_macs: dict
    macs_executed: int
    utilized_pes: int
    gb_tile_words: int
    pe_buffer_words: int
    compute_total: int


def _slot_mac_tuples(bound: BoundMapping, states) -> list[tuple]:
    layer = bound.layer
    k = states[Dim.K].owned
    c = states[Dim.C].owned
    y = states[Dim.Y].owned
    x = states[Dim.X].owned
    r = states[Dim.R].owned
    s = states[Dim.S].owned
    out: list[tuple] = []
    if layer.kind is LayerKind.ResidualAdd:
        for ci in range(c.lo, c.hi + 1):
            for yi in range(y.lo, y.hi + 1):
                for xi in range(x.lo, x.hi + 1):
                    out.append((ci, ci, yi, xi, 0, 0))
        return out
    if layer.kind is LayerKind.DepthwiseConv:
        for ci in range(c.lo, c.hi + 1):
            for yi in range(y.lo, y.hi + 1):
                for xi in range(x.lo, x.hi + 1):
                    for ri in range(r.lo, r.hi + 1):
                        for si in range(s.lo, s.hi + 1):
                            out.append((ci, ci, yi, xi, ri, si))
        return out
    for ki in range(k.lo, k.hi + 1):
        for ci in range(c.lo, c.hi + 1):
            for yi in range(y.lo, y.hi + 1):
                for xi in range(x.lo, x.hi + 1):
                    for ri in range(r.lo, r.hi + 1):
                        for si in range(s.lo, s.hi + 1):
                            out.append((ki, ci, yi, xi, ri, si))
    return out


def _need_sets(layer: LayerShape, mac_tuples: list[tuple]) -> dict:
    ins: set = set()
    wts: set = set()
    outs: set = set()
    sy, sx = layer.strideY, layer.strideX
    fused = layer.channel_fused
    for (ki, ci, yi, xi, ri, si) in mac_tuples:
        ins.add((ci, yi * sy + ri, xi * sx + si))
        outs.add((ci if fused else ki, yi, xi))
        if layer.kind is not LayerKind.ResidualAdd:
            if fused:
                wts.add((ci, ri, si))
            else:
                wts.add((ki, ci, ri, si))
    return {_INPUT: ins, _WEIGHT: wts, _OUTPUT: outs}


def simulate(
    layer: LayerShape,
    dataflow: Dataflow,
    hw: HardwareConfig,
    max_dim: int = 16,
    max_pes: int = 64,
) -> SimResult:
    for d in (layer.K, layer.C, layer.Y, layer.X, layer.R, layer.S):
        if d > max_dim:
            raise OracleError(f"layer dimension {d} exceeds the oracle cap {max_dim}")
    if hw.num_pes > max_pes:
        raise OracleError(f"{hw.num_pes} PEs exceed the oracle cap {max_pes}")

    bound = bind(dataflow, layer)
    f = make_fold(bound, hw.num_pes)
    retention = bound.retention
    none_ret = retention is Retention.NONE
    in_factor = input_words_per_element(layer)
    elem = hw.element_bytes
    bw = hw.noc_bandwidth
    resident = {t: tensor_resident(bound, t) for t in (_INPUT, _WEIGHT)}

    retained: dict = {_INPUT: {}, _WEIGHT: {}}
    resident_out: dict = {}
    per_pe_macs: Counter = Counter()
    mac_counter: Counter = Counter()
    records: list[PassRecord] = []
    dist_total = {_INPUT: 0, _WEIGHT: 0}
    collected = 0
    gb_tile_words = 0
    pe_buffer_words = 0
    utilized = 0

    def pe_of(vc: int, vu: int) -> int:
        return (vc % f.cluster_count) * f.cluster_size + (vu % f.cluster_size)

    for step_idx, digit_positions, adv in odometer_states(bound):
        modes = {
            _INPUT: fresh_mode(bound, _INPUT, adv),
            _WEIGHT: fresh_mode(bound, _WEIGHT, adv),
        }
        out_evicts = not none_ret and fresh_mode(bound, _OUTPUT, adv) is not FreshMode.ZERO
        prev_union = {}
        for t in (_INPUT, _WEIGHT):
            if modes[t] is FreshMode.SLIDE:
                u: set = set()
                for s_ in retained[t].values():
                    u |= s_
                prev_union[t] = u

        for fo in range(f.passes_outer):
            for fi in range(f.passes_inner):
                rec = PassRecord(step_idx, fo, fi)
                dist_sets = {_INPUT: [], _WEIGHT: []}
                need_union = {_INPUT: set(), _WEIGHT: set()}
                out_union: set = set()
                vc_hi = min((fo + 1) * f.cluster_count, bound.units_outer)
                vu_hi = min((fi + 1) * f.cluster_size, bound.units_inner)
                for vc in range(fo * f.cluster_count, vc_hi):
                    for vu in range(fi * f.cluster_size, vu_hi):
                        spos = spatial_positions_of(bound.spatial_outer, vc)
                        spos.update(spatial_positions_of(bound.spatial_inner, vu))
                        positions = bound.state_positions(digit_positions, spos)
                        states = bound.axis_states(positions)
                        tuples = _slot_mac_tuples(bound, states)
                        slot = (vc, vu)
                        if tuples:
                            rec.active_slots += 1
                            rec.compute = max(rec.compute, len(tuples))
                            per_pe_macs[pe_of(vc, vu)] += len(tuples)
                            mac_counter.update(tuples)
                        needs = _need_sets(layer, tuples)
                        for t in (_INPUT, _WEIGHT):
                            need = needs[t]
                            need_union[t] |= need
                            mode = modes[t]
                            if mode is FreshMode.ZERO:
                                held = retained[t].get(slot, set())
                                assert held == need, "retention policy violated"
                                fresh: set = set()
                            elif mode is FreshMode.SLIDE:
                                fresh = need - prev_union[t]
                            else:
                                fresh = need
                            dist_sets[t].append(fresh)
                            retained[t][slot] = set(need) if resident[t] else set()
                        out_set = needs[_OUTPUT]
                        out_union |= out_set
                        if none_ret:
                            rec.partials += len(out_set)
                        else:
                            if out_evicts:
                                rec.evict_in += len(resident_out.get(slot, ()))
                                resident_out[slot] = set(out_set)
                            elif out_set:
                                held_out = resident_out.get(slot, set())
                                assert held_out == out_set, "output residency violated"

                for t, factor in ((_INPUT, in_factor), (_WEIGHT, 1)):
                    if hw.multicast:
                        u: set = set()
                        for s_ in dist_sets[t]:
                            u |= s_
                        rec.dist[t] = factor * len(u)
                    else:
                        rec.dist[t] = factor * sum(len(s_) for s_ in dist_sets[t])
                    dist_total[t] += rec.dist[t]
                collected += rec.evict_in + rec.partials
                utilized = max(utilized, rec.active_slots)
                gb_tile_words = max(
                    gb_tile_words,
                    in_factor * len(need_union[_INPUT])
                    + len(need_union[_WEIGHT])
                    + len(out_union),
                )
                # per-PE buffer high water after this pass's slots updated
                pe_words: Counter = Counter()
                for t in (_INPUT, _WEIGHT):
                    if resident[t]:
                        for (vc, vu), s_ in retained[t].items():
                            pe_words[pe_of(vc, vu)] += len(s_) * (
                                in_factor if t is _INPUT else 1
                            )
                for (vc, vu), s_ in resident_out.items():
                    pe_words[pe_of(vc, vu)] += len(s_)
                for vc in range(fo * f.cluster_count, vc_hi):
                    for vu in range(fi * f.cluster_size, vu_hi):
                        spos = spatial_positions_of(bound.spatial_outer, vc)
                        spos.update(spatial_positions_of(bound.spatial_inner, vu))
                        positions = bound.state_positions(digit_positions, spos)
                        states = bound.axis_states(positions)
                        needs = _need_sets(layer, _slot_mac_tuples(bound, states))
                        trans = 0
                        if not resident[_INPUT]:
                            trans += in_factor * len(needs[_INPUT])
                        if not resident[_WEIGHT]:
                            trans += len(needs[_WEIGHT])
                        if none_ret:
                            trans += len(needs[_OUTPUT])
                        pe_words[pe_of(vc, vu)] += trans
                if pe_words:
                    pe_buffer_words = max(pe_buffer_words, max(pe_words.values()))
                records.append(rec)

    # conservation: every MAC exactly once
    expected = layer_macs(layer)
    executed = sum(mac_counter.values())
    if executed != expected or any(v != 1 for v in mac_counter.values()):
        raise OracleError(
            f"work conservation violated: {executed} of {expected} MACs, "
            f"max multiplicity {max(mac_counter.values(), default=0)}"
        )

    flush = sum(len(s_) for s_ in resident_out.values())
    collected += flush

    def cd(words: int) -> int:
        return -(-words * elem // bw)

    fill = cd(records[0].dist[_INPUT] + records[0].dist[_WEIGHT] + records[0].evict_in)
    steady = 0
    for i, rec in enumerate(records):
        if i + 1 < len(records):
            nxt = records[i + 1]
            window = nxt.dist[_INPUT] + nxt.dist[_WEIGHT] + nxt.evict_in + rec.partials
        else:
            window = rec.partials
        steady += max(rec.compute, cd(window))
    drain = cd(flush)

    return SimResult(
        total_cycles=fill + steady + drain,
        fill_cycles=fill,
        drain_cycles=drain,
        steady_cycles=steady,
        distributed=dist_total,
        collected=collected,
        per_step=records,
        per_pe_macs=dict(per_pe_macs),
        macs_executed=executed,
        utilized_pes=utilized,
        gb_tile_words=gb_tile_words,
        pe_buffer_words=pe_buffer_words,
        compute_total=sum(r.compute for r in records),
    )


@dataclass
class ComparisonReport:
    passed: bool
    mismatches: list[str]

    def __str__(self) -> str:
        if self.passed:
            return "analytical model matches the reference simulation"
        return "; ".join(self.mismatches)


def compare(analysis: LayerAnalysis, sim: SimResult, element_bytes: int = 1) -> ComparisonReport:
    """Exact comparison of the analytical results against a simulation."""
    mismatches: list[str] = []

    def check(name: str, got, want):
        if got != want:
            mismatches.append(f"{name}: analytical {got} != simulated {want}")

    check("fill cycles (phase First)", analysis.fill_cycles, sim.fill_cycles)
    check("drain cycles (phase Last)", analysis.drain_cycles, sim.drain_cycles)
    check("steady cycles", analysis.steady_cycles, sim.steady_cycles)
    check("total cycles", analysis.total_cycles, sim.total_cycles)
    check("compute cycles", analysis.compute_delay_total, sim.compute_total)
    for t in (_INPUT, _WEIGHT):
        check(f"distributed {t.value} words", analysis.distributed_words[t], sim.distributed[t])
    check("collected words", analysis.collected_words, sim.collected)
    check("utilized PEs", analysis.utilized_pes, sim.utilized_pes)
    check(
        "global buffer bytes",
        analysis.buffer_global_bytes,
        2 * element_bytes * sim.gb_tile_words,
    )
    check("PE buffer bytes", analysis.buffer_pe_bytes, 2 * element_bytes * sim.pe_buffer_words)
    return ComparisonReport(not mismatches, mismatches)
