"""Ground-truth network traces: generation, lookup and the text file format.

A trace is a piecewise schedule of bottleneck capacity and loss parameters.
Five generated families mirror the first-stage evaluation scenarios; their
parameter ranges come from data/trace_families.json (see config.py).

Trace file format (space separated, ``#`` starts a comment):

    family seed
    duration_ms capacity_bps loss_kind [loss_params...]
    ...

loss_kind is ``none``, ``bernoulli p`` or ``gilbert p_enter mean_burst_len``.
"""

from __future__ import annotations

from bisect import bisect_right
from dataclasses import dataclass, field
from enum import Enum
from itertools import accumulate
from pathlib import Path
from typing import Optional

import numpy as np

from .config import FamilyRange, load_family_ranges
from .errors import TraceError
from .utils import atomic_write_text, make_rng


class TraceFamily(str, Enum):
    LOW_BW = "low_bw"
    HIGH_BW = "high_bw"
    FLUCTUATING_BW = "fluctuating_bw"
    BURST_LOSS = "burst_loss"
    FLUCTUATING_BURST_LOSS = "fluctuating_burst_loss"
    CUSTOM = "custom"  # hand-built traces; never produced by generate()


GENERATED_FAMILIES = [f for f in TraceFamily if f is not TraceFamily.CUSTOM]

LOSS_KINDS = {"none": 0, "bernoulli": 1, "gilbert": 2}


@dataclass(frozen=True, slots=True)
class LossSpec:
    """Loss model parameters. Gilbert: (p_enter, mean_burst_len)."""

    kind: str = "none"
    params: tuple[float, ...] = ()

    def __post_init__(self):
        validate_loss(self)

    def stationary_rate(self) -> float:
        if self.kind == "bernoulli":
            return self.params[0]
        if self.kind == "gilbert":
            p_enter, mean_burst = self.params
            p_exit = 1.0 / mean_burst
            return p_enter / (p_enter + p_exit)
        return 0.0


def validate_loss(loss: LossSpec) -> None:
    if loss.kind not in LOSS_KINDS:
        raise TraceError(f"unknown loss kind: {loss.kind}")
    if len(loss.params) != LOSS_KINDS[loss.kind]:
        raise TraceError(f"loss kind {loss.kind} takes {LOSS_KINDS[loss.kind]} parameter(s)")
    if loss.kind == "bernoulli" and not (0.0 <= loss.params[0] <= 1.0):
        raise TraceError("bernoulli p must be within [0, 1]")
    if loss.kind == "gilbert":
        p_enter, mean_burst = loss.params
        if not (0.0 <= p_enter <= 1.0):
            raise TraceError("gilbert p_enter must be within [0, 1]")
        if not mean_burst >= 1.0:
            raise TraceError("gilbert mean_burst_len must be >= 1")


@dataclass(frozen=True, slots=True)
class TraceSegment:
    duration_ms: float
    capacity_bps: float
    loss: LossSpec = LossSpec()

    def __post_init__(self):
        if not (np.isfinite(self.duration_ms) and self.duration_ms > 0):
            raise TraceError(f"segment duration must be > 0 (got {self.duration_ms})")
        if not (np.isfinite(self.capacity_bps) and self.capacity_bps > 0):
            raise TraceError(f"segment capacity must be > 0 (got {self.capacity_bps})")


@dataclass(frozen=True, slots=True)
class Trace:
    segments: tuple[TraceSegment, ...]
    family: TraceFamily
    seed: int
    ends: tuple[float, ...] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if not self.segments:
            raise TraceError("no segments")
        object.__setattr__(self, "segments", tuple(self.segments))
        object.__setattr__(self, "family", TraceFamily(self.family))
        object.__setattr__(self, "ends", tuple(accumulate(s.duration_ms for s in self.segments)))

    @property
    def total_duration_ms(self) -> float:
        return self.ends[-1]


def fixed_trace(capacity_bps: float, duration_ms: float, loss: LossSpec | None = None, seed: int = 0) -> Trace:
    """Single-segment hand-built trace (tests, quick experiments)."""
    return Trace((TraceSegment(duration_ms, capacity_bps, loss or LossSpec()),), TraceFamily.CUSTOM, seed)


# -------------------------------- Generation --------------------------------
def _segment_durations(rng: np.random.Generator, total_ms: float, bounds: tuple[float, float]) -> list[float]:
    """Segment lengths summing to total_ms, each within bounds.

    A call shorter than the lower bound is a single segment. A short tail is
    merged into the previous segment, or shared evenly with it when the merge
    would exceed the upper bound.
    """
    lo, hi = bounds
    out: list[float] = []
    remaining = total_ms
    while remaining > 0:
        d = min(float(rng.uniform(lo, hi)), remaining)
        out.append(d)
        remaining -= d
    if len(out) > 1 and out[-1] < lo:
        tail = out.pop()
        merged = out.pop() + tail
        if merged <= hi or hi < 2 * lo:
            out.append(merged)
        else:
            out += [merged / 2, merged / 2]
    return out


def _gilbert(rng: np.random.Generator, fr: FamilyRange) -> LossSpec:
    assert fr.p_enter is not None and fr.mean_burst is not None
    return LossSpec("gilbert", (float(rng.uniform(*fr.p_enter)), float(rng.uniform(*fr.mean_burst))))


def generate(
    family: TraceFamily | str,
    seed: int,
    duration_ms: float,
    ranges: Optional[dict[str, FamilyRange]] = None,
) -> Trace:
    """Generate a trace for one scenario family; deterministic per (family, seed, duration)."""
    try:
        fam = TraceFamily(family)
    except ValueError:
        raise TraceError(f"unknown trace family: {family}") from None
    if fam is TraceFamily.CUSTOM:
        raise TraceError("custom traces are hand-built, not generated")
    if not duration_ms > 0:
        raise TraceError("duration_ms must be > 0")
    if ranges is None:
        _, ranges = load_family_ranges()
    if fam.value not in ranges:
        raise TraceError(f"no parameter ranges configured for family {fam.value}")
    fr = ranges[fam.value]
    rng = make_rng(seed, "trace", GENERATED_FAMILIES.index(fam))

    segments: list[TraceSegment] = []
    if fam in (TraceFamily.LOW_BW, TraceFamily.HIGH_BW):
        segments.append(TraceSegment(duration_ms, float(rng.uniform(*fr.capacity_bps))))
    elif fam is TraceFamily.BURST_LOSS:
        capacity = float(rng.uniform(*fr.capacity_bps))
        segments.append(TraceSegment(duration_ms, capacity, _gilbert(rng, fr)))
    else:
        if fr.segment_ms is None:
            raise TraceError(f"family {fam.value} needs segment_ms")
        for d in _segment_durations(rng, duration_ms, fr.segment_ms):
            capacity = float(rng.uniform(*fr.capacity_bps))
            loss = _gilbert(rng, fr) if fam is TraceFamily.FLUCTUATING_BURST_LOSS else LossSpec()
            segments.append(TraceSegment(d, capacity, loss))
    return Trace(tuple(segments), fam, int(seed))


# ---------------------------------- Lookup ----------------------------------
def segment_index(trace: Trace, t_ms: float) -> int:
    if not (0.0 <= t_ms < trace.total_duration_ms):
        raise TraceError(f"t={t_ms} ms outside trace [0, {trace.total_duration_ms})")
    return bisect_right(trace.ends, t_ms)


def segment_start(trace: Trace, index: int) -> float:
    return trace.ends[index - 1] if index > 0 else 0.0


def capacity_at(trace: Trace, t_ms: float) -> float:
    """Capacity of the segment containing t_ms (right-continuous at boundaries)."""
    return trace.segments[segment_index(trace, t_ms)].capacity_bps


def loss_at(trace: Trace, t_ms: float) -> LossSpec:
    return trace.segments[segment_index(trace, t_ms)].loss


def loss_rate_at(trace: Trace, t_ms: float) -> float:
    return loss_at(trace, t_ms).stationary_rate()


# -------------------------------- File format -------------------------------
def format_trace(trace: Trace) -> str:
    lines = [
        f"{trace.family.value} {trace.seed}",
        "# duration_ms capacity_bps loss_kind loss_params...",
    ]
    for seg in trace.segments:
        parts = [repr(float(seg.duration_ms)), repr(float(seg.capacity_bps)), seg.loss.kind]
        parts.extend(repr(float(p)) for p in seg.loss.params)
        lines.append(" ".join(parts))
    return "\n".join(lines) + "\n"


def write_trace(trace: Trace, path: Path) -> None:
    atomic_write_text(Path(path), format_trace(trace))


def _number(token: str, lineno: int, what: str) -> float:
    try:
        val = float(token)
    except ValueError:
        raise TraceError(f"line {lineno}: {what} is not a number: {token!r}") from None
    if not np.isfinite(val):
        raise TraceError(f"line {lineno}: {what} must be finite")
    return val


def parse_trace(text: str) -> Trace:
    header: tuple[str, int] | None = None
    segments: list[TraceSegment] = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        tokens = line.split()
        if header is None:
            if len(tokens) != 2:
                raise TraceError(f"line {lineno}: header must be 'family seed'")
            try:
                header = (TraceFamily(tokens[0]).value, int(tokens[1]))
            except ValueError:
                raise TraceError(f"line {lineno}: bad header {line!r}") from None
            continue
        if len(tokens) < 3:
            raise TraceError(f"line {lineno}: expected 'duration_ms capacity_bps loss_kind ...'")
        duration = _number(tokens[0], lineno, "duration_ms")
        capacity = _number(tokens[1], lineno, "capacity_bps")
        if duration <= 0:
            raise TraceError(f"line {lineno}: duration_ms must be > 0")
        if capacity <= 0:
            raise TraceError(f"line {lineno}: capacity_bps must be > 0")
        params = tuple(_number(t, lineno, "loss parameter") for t in tokens[3:])
        try:
            loss = LossSpec(tokens[2], params)
        except TraceError as e:
            raise TraceError(f"line {lineno}: {e}") from None
        segments.append(TraceSegment(duration, capacity, loss))
    if header is None or not segments:
        raise TraceError("no segments")
    return Trace(tuple(segments), TraceFamily(header[0]), header[1])


def read_trace(path: Path) -> Trace:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as e:
        raise TraceError(f"cannot read trace {path}: {e}") from e
    try:
        return parse_trace(text)
    except TraceError as e:
        raise TraceError(f"{path}: {e}") from None


__all__ = [
    "TraceFamily",
    "GENERATED_FAMILIES",
    "LossSpec",
    "TraceSegment",
    "Trace",
    "fixed_trace",
    "generate",
    "segment_index",
    "segment_start",
    "capacity_at",
    "loss_at",
    "loss_rate_at",
    "format_trace",
    "parse_trace",
    "write_trace",
    "read_trace",
]
