"""Loop-mapping description language.

A dataflow is an ordered list of temporal/spatial directives per cluster
level (outer level first, at most two levels). Directive sizes and offsets
may reference layer dimensions symbolically; they are resolved against a
concrete layer by ``binding.bind``.

Size/offset expression forms:
  ``8``      literal count
  ``|R|``    extent of dimension R in the target layer
  ``7+|S|``  constant plus extent; the constant counts window positions, so
             it scales with the directive dimension's stride at resolution
  ``s``      the directive dimension's stride (1 for non-sliding dims)
  ``8s``     literal scaled by the directive dimension's stride
"""
from __future__ import annotations

import enum
import re
from dataclasses import dataclass

from .layers import Dim


class Retention(enum.Enum):
    """What a PE may keep in its local buffer between tile steps."""

    NONE = "none"
    STATIONARY = "stationary"
    STATIONARY_HALO = "halo"


class DataflowError(ValueError):
    """Raised on malformed dataflow text or structural violations."""


@dataclass(frozen=True)
class SizeExpr:
    """const (optionally stride-scaled) plus an optional dimension extent."""

    const: int = 0
    ref: Dim | None = None
    stride_scaled: bool = False

    def __post_init__(self) -> None:
        if self.const < 0:
            raise DataflowError(f"negative constant in size expression: {self.const}")
        if self.const == 0 and self.ref is None:
            raise DataflowError("size expression must be positive")

    @property
    def is_literal(self) -> bool:
        return self.ref is None and not self.stride_scaled

    def resolve(self, extent_of, stride: int) -> int:
        value = self.const * (stride if self.stride_scaled else 1)
        if self.ref is not None:
            value += extent_of(self.ref)
        return value

    def render(self) -> str:
        if self.ref is None:
            if not self.stride_scaled:
                return str(self.const)
            return "s" if self.const == 1 else f"{self.const}s"
        if self.const == 0:
            return f"|{self.ref.value}|"
        return f"{self.const}+|{self.ref.value}|"


def lit(n: int) -> SizeExpr:
    return SizeExpr(const=n)


def ref(d: Dim) -> SizeExpr:
    return SizeExpr(ref=d)


def ref_plus(d: Dim, c: int) -> SizeExpr:
    return SizeExpr(const=c, ref=d, stride_scaled=True)


def stride_times(n: int) -> SizeExpr:
    return SizeExpr(const=n, stride_scaled=True)


_EXPR_RE = re.compile(r"^(?:(\d+)\+)?\|([NKCYXRS])\|$|^(\d+)$|^(\d*)s$")


def parse_size_expr(token: str) -> SizeExpr:
    m = _EXPR_RE.match(token)
    if not m:
        raise DataflowError(f"bad size/offset expression {token!r}")
    plus_const, dim_tok, plain, stride_const = m.groups()
    if dim_tok is not None:
        d = Dim(dim_tok)
        if plus_const is None:
            return ref(d)
        return ref_plus(d, int(plus_const))
    if plain is not None:
        return lit(int(plain))
    return stride_times(int(stride_const) if stride_const else 1)


@dataclass(frozen=True)
class Directive:
    dim: Dim
    spatial: bool
    size: SizeExpr
    offset: SizeExpr

    def __post_init__(self) -> None:
        if self.size.is_literal and self.offset.is_literal:
            if self.offset.const > self.size.const:
                raise DataflowError(
                    f"directive on {self.dim.value}: offset {self.offset.const} exceeds "
                    f"size {self.size.const} (would skip data)"
                )

    def render(self) -> str:
        kind = "spatial" if self.spatial else "temporal"
        return f"{kind} {self.dim.value} {self.size.render()} {self.offset.render()}"


@dataclass(frozen=True)
class ClusterLevel:
    directives: tuple[Directive, ...]

    def __post_init__(self) -> None:
        if not self.directives:
            raise DataflowError("cluster level has no directives")
        seen: set[Dim] = set()
        for d in self.directives:
            if d.dim in seen:
                raise DataflowError(f"dimension {d.dim.value} appears twice in one level")
            seen.add(d.dim)


@dataclass(frozen=True)
class Dataflow:
    name: str
    levels: tuple[ClusterLevel, ...]
    retention: Retention

    def __post_init__(self) -> None:
        if not 1 <= len(self.levels) <= 2:
            raise DataflowError(f"dataflow {self.name!r}: need 1 or 2 levels, got {len(self.levels)}")

    def render(self) -> str:
        lines = [f"dataflow {self.name} retention={self.retention.value}"]
        for level in self.levels:
            lines.append("level")
            lines.extend(d.render() for d in level.directives)
        return "\n".join(lines) + "\n"


def parse_dataflow(text: str) -> Dataflow:
    """Parse the dataflow text format (see module docstring and README)."""
    name: str | None = None
    retention = Retention.NONE
    levels: list[list[Directive]] = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        fields = line.split()
        if fields[0] == "dataflow":
            if name is not None:
                raise DataflowError(f"line {lineno}: duplicate dataflow header")
            if len(fields) < 2:
                raise DataflowError(f"line {lineno}: dataflow header needs a name")
            name = fields[1]
            for opt in fields[2:]:
                if opt.startswith("retention="):
                    try:
                        retention = Retention(opt.split("=", 1)[1])
                    except ValueError:
                        raise DataflowError(f"line {lineno}: unknown retention {opt!r}") from None
                else:
                    raise DataflowError(f"line {lineno}: unknown option {opt!r}")
        elif fields[0] == "level":
            if len(fields) != 1:
                raise DataflowError(f"line {lineno}: 'level' takes no arguments")
            if len(levels) >= 2:
                raise DataflowError(f"line {lineno}: more than 2 cluster levels")
            levels.append([])
        elif fields[0] in ("temporal", "spatial"):
            if name is None:
                raise DataflowError(f"line {lineno}: directive before dataflow header")
            if len(fields) != 4:
                raise DataflowError(f"line {lineno}: expected 'temporal|spatial DIM size offset'")
            try:
                dim = Dim(fields[1].upper())
            except ValueError:
                raise DataflowError(f"line {lineno}: unknown dimension {fields[1]!r}") from None
            try:
                size = parse_size_expr(fields[2])
                offset = parse_size_expr(fields[3])
                directive = Directive(dim, fields[0] == "spatial", size, offset)
            except DataflowError as exc:
                raise DataflowError(f"line {lineno}: {exc}") from None
            if not levels:
                levels.append([])
            levels[-1].append(directive)
        else:
            raise DataflowError(f"line {lineno}: unrecognized line {line!r}")
    if name is None:
        raise DataflowError("missing dataflow header")
    if not levels or not any(levels):
        raise DataflowError(f"dataflow {name!r} has no directives")
    return Dataflow(name, tuple(ClusterLevel(tuple(ds)) for ds in levels if ds), retention)


def _t(dim: Dim, size: SizeExpr, offset: SizeExpr) -> Directive:
    return Directive(dim, False, size, offset)


def _s(dim: Dim, size: SizeExpr, offset: SizeExpr) -> Directive:
    return Directive(dim, True, size, offset)


def builtin_dataflows() -> list[Dataflow]:
    """The five characterized mapping styles.

    nlr         unicast everything, parallel over input channels, no reuse
    ws          weights pinned per PE, parallel over output columns
    shidiannao  outputs grouped 8 wide per cluster, one output row per
                cluster, input halo forwarded between column groups
    eyeriss     one output row per cluster, columns and filter columns
                parallel inside, 2x2 channel tile stepped per PE
    nvdla       output channels across clusters, 64 input channels per
                cluster one per PE, weights pinned
    """
    K, C, Y, X, R, S = Dim.K, Dim.C, Dim.Y, Dim.X, Dim.R, Dim.S
    one = lit(1)
    nlr = Dataflow(
        "nlr",
        (
            ClusterLevel(
                (
                    _t(K, one, one),
                    _t(Y, ref(R), stride_times(1)),
                    _t(X, ref(S), stride_times(1)),
                    _t(R, ref(R), ref(R)),
                    _t(S, ref(S), ref(S)),
                    _s(C, one, one),
                )
            ),
        ),
        Retention.NONE,
    )
    ws = Dataflow(
        "ws",
        (
            ClusterLevel(
                (
                    _t(K, one, one),
                    _t(C, one, one),
                    _t(R, ref(R), ref(R)),
                    _t(S, ref(S), ref(S)),
                    _t(Y, ref(R), stride_times(1)),
                    _s(X, ref(S), stride_times(1)),
                )
            ),
        ),
        Retention.STATIONARY,
    )
    shidiannao = Dataflow(
        "shidiannao",
        (
            ClusterLevel(
                (
                    _t(K, one, one),
                    _t(C, one, one),
                    _t(R, ref(R), ref(R)),
                    _t(S, ref(S), ref(S)),
                    _s(Y, ref(R), stride_times(1)),
                    _t(X, ref_plus(S, 7), stride_times(8)),
                )
            ),
            ClusterLevel((_s(X, ref(S), stride_times(1)),)),
        ),
        Retention.STATIONARY_HALO,
    )
    eyeriss = Dataflow(
        "eyeriss",
        (
            ClusterLevel(
                (
                    _t(K, lit(2), lit(2)),
                    _t(C, lit(2), lit(2)),
                    _s(Y, ref(R), stride_times(1)),
                )
            ),
            ClusterLevel(
                (
                    _s(X, ref(S), stride_times(1)),
                    _s(S, one, one),
                    _t(R, ref(R), ref(R)),
                )
            ),
        ),
        Retention.STATIONARY,
    )
    nvdla = Dataflow(
        "nvdla",
        (
            ClusterLevel((_s(K, one, one), _t(C, lit(64), lit(64)))),
            ClusterLevel(
                (
                    _s(C, one, one),
                    _t(Y, ref(R), stride_times(1)),
                    _t(X, ref(S), stride_times(1)),
                    _t(R, ref(R), ref(R)),
                    _t(S, ref(S), ref(S)),
                )
            ),
        ),
        Retention.STATIONARY,
    )
    return [nlr, ws, shidiannao, eyeriss, nvdla]


def builtin_dataflow(name: str) -> Dataflow:
    for df in builtin_dataflows():
        if df.name == name:
            return df
    raise KeyError(name)
