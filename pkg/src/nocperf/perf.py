"""Delays, throughput-vs-bandwidth, bandwidth requirements, buffers.

Delay model: tile steps are double buffered, so a step's cost is
max(compute, communication), where the communication window carries the
next step's distribution, output words flushed into that step, and the
partial sums the current step streams out. One pipeline-fill term (the
first distribution) and one drain term (the final flush) bracket the
steady sequence.

Reported throughput is the steady-state rate macs / steady-cycles; with
that definition throughput(B) is non-decreasing and exactly reaches the
roofline for every bandwidth at or above the peak requirement. Total
cycles (latency) additionally include the fill and drain terms.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from functools import lru_cache

from .binding import BindError, BoundMapping, bind
from .dataflow import Dataflow
from .layers import LayerShape
from .policy import TensorKind
from .reuse import LayerProfile, build_profile


class AnalysisError(ValueError):
    """Raised when a mapping cannot be analyzed on the given hardware."""


class BufferOverflowError(AnalysisError):
    def __init__(self, which: str, required: int, available: int):
        super().__init__(
            f"{which} buffer overflow: needs {required} bytes, {available} available"
        )
        self.which = which
        self.required = required
        self.available = available


@dataclass(frozen=True)
class HardwareConfig:
    num_pes: int = 256
    noc_bandwidth: int = 64          # bytes per cycle
    multicast: bool = True
    global_buffer_bytes: int = 256 * 1024
    pe_buffer_bytes: int = 64 * 1024
    element_bytes: int = 1
    clock_ghz: float = 1.0

    def __post_init__(self) -> None:
        for f in ("num_pes", "noc_bandwidth", "global_buffer_bytes",
                  "pe_buffer_bytes", "element_bytes"):
            if getattr(self, f) < 1:
                raise AnalysisError(f"{f} must be >= 1")


class BoundBy(Enum):
    Compute = "compute"
    Communication = "communication"


def comm_delay(traffic_words: int, hw: HardwareConfig) -> int:
    """Cycles to move `traffic_words` over the NoC (ceil of bytes/bandwidth)."""
    if traffic_words < 0:
        raise AnalysisError("negative traffic")
    return -(-traffic_words * hw.element_bytes // hw.noc_bandwidth)


def tile_delay(compute_cycles: int, comm_cycles: int) -> int:
    """Double buffering overlaps the next distribution with current compute."""
    return max(compute_cycles, comm_cycles)


@dataclass(frozen=True)
class LayerAnalysis:
    layer: LayerShape
    dataflow: str
    macs: int
    roofline_throughput: float       # MACs/cycle at unconstrained bandwidth
    throughput: float                # MACs/cycle at the configured bandwidth
    compute_delay_total: int
    comm_delay_total: int
    steady_cycles: int
    fill_cycles: int
    drain_cycles: int
    total_cycles: int
    peak_bandwidth: int | None       # None: unreachable roofline (unbounded)
    avg_bandwidth: float
    utilized_pes: int
    buffer_global_bytes: int
    buffer_pe_bytes: int
    bound: BoundBy
    distributed_words: dict
    collected_words: int

    @property
    def latency_s(self) -> float:
        return self.total_cycles / 1e9  # at 1 GHz; scale by clock for others


@lru_cache(maxsize=4096)
def _cached_profile(
    layer: LayerShape, dataflow: Dataflow, num_pes: int, multicast: bool, elem: int
) -> LayerProfile:
    bound = bind(dataflow, layer)
    return build_profile(bound, num_pes, multicast, elem)


def layer_profile(layer: LayerShape, dataflow: Dataflow, hw: HardwareConfig) -> LayerProfile:
    return _cached_profile(layer, dataflow, hw.num_pes, hw.multicast, hw.element_bytes)


def _steady_cycles(profile: LayerProfile, bandwidth: int, elem: int) -> tuple[int, int, bool]:
    steady = 0
    comm = 0
    comm_bound = False
    for ev in profile.events:
        cd = -(-ev.window_words * elem // bandwidth)
        steady += ev.count * max(ev.compute, cd)
        comm += ev.count * cd
        if cd > ev.compute:
            comm_bound = True
    return steady, comm, comm_bound


def peak_bandwidth_of(profile: LayerProfile) -> int | None:
    """Smallest integer bandwidth making every steady step compute-bound."""
    peak = 1
    elem = profile.elem_bytes
    for ev in profile.events:
        if ev.window_words == 0:
            continue
        if ev.compute == 0:
            return None
        peak = max(peak, -(-ev.window_words * elem // ev.compute))
    return peak


def evaluate_profile(profile: LayerProfile, hw: HardwareConfig) -> LayerAnalysis:
    elem = hw.element_bytes
    bw = hw.noc_bandwidth
    steady, comm_steady, comm_bound = _steady_cycles(profile, bw, elem)
    fill = -(-profile.fill_words * elem // bw)
    drain = -(-profile.drain_words * elem // bw)
    total = fill + steady + drain
    window_bytes = sum(ev.count * ev.window_words for ev in profile.events) * elem
    gb_bytes = 2 * elem * profile.gb_tile_words
    pe_bytes = 2 * elem * profile.pe_buffer_words
    if gb_bytes > hw.global_buffer_bytes:
        raise BufferOverflowError("global", gb_bytes, hw.global_buffer_bytes)
    if pe_bytes > hw.pe_buffer_bytes:
        raise BufferOverflowError("PE", pe_bytes, hw.pe_buffer_bytes)
    return LayerAnalysis(
        layer=profile.bound.layer,
        dataflow=profile.bound.source.name,
        macs=profile.macs,
        roofline_throughput=profile.macs / profile.compute_total,
        throughput=profile.macs / steady,
        compute_delay_total=profile.compute_total,
        comm_delay_total=fill + comm_steady + drain,
        steady_cycles=steady,
        fill_cycles=fill,
        drain_cycles=drain,
        total_cycles=total,
        peak_bandwidth=peak_bandwidth_of(profile),
        avg_bandwidth=window_bytes / steady if steady else 0.0,
        utilized_pes=profile.utilized_pes,
        buffer_global_bytes=gb_bytes,
        buffer_pe_bytes=pe_bytes,
        bound=BoundBy.Communication if comm_bound else BoundBy.Compute,
        distributed_words={
            TensorKind.Input: profile.dist_total[TensorKind.Input],
            TensorKind.Weight: profile.dist_total[TensorKind.Weight],
        },
        collected_words=profile.collected_total,
    )


def analyze_layer(layer: LayerShape, dataflow: Dataflow, hw: HardwareConfig) -> LayerAnalysis:
    """Full analysis of one (layer, dataflow) point at one bandwidth."""
    return evaluate_profile(layer_profile(layer, dataflow, hw), hw)


def peak_bandwidth(layer: LayerShape, dataflow: Dataflow, hw: HardwareConfig) -> int | None:
    return peak_bandwidth_of(layer_profile(layer, dataflow, hw))


def avg_bandwidth(layer: LayerShape, dataflow: Dataflow, hw: HardwareConfig) -> float:
    return analyze_layer(layer, dataflow, hw).avg_bandwidth


def buffer_requirement(bound: BoundMapping, hw: HardwareConfig) -> tuple[int, int]:
    """(global bytes, per-PE bytes) needed by this mapping, double buffered."""
    profile = _cached_profile(
        bound.layer, bound.source, hw.num_pes, hw.multicast, hw.element_bytes
    )
    return 2 * hw.element_bytes * profile.gb_tile_words, 2 * hw.element_bytes * profile.pe_buffer_words


def throughput_curve(
    layer: LayerShape, dataflow: Dataflow, hw: HardwareConfig, bandwidths: list[int]
) -> list[tuple[int, float]]:
    profile = layer_profile(layer, dataflow, hw)
    out = []
    for bw in bandwidths:
        steady, _, _ = _steady_cycles(profile, bw, hw.element_bytes)
        out.append((bw, profile.macs / steady))
    return out
