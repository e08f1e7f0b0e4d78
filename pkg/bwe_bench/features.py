"""Receiver-side monitor-interval (MI) statistics and the 150-dim observation.

Fifteen features are computed per MI from delivered packets. The observation
stacks them for the 5 most recent short MIs (60 ms) and the 5 most recent long
MIs (600 ms). For feature f (1-based) the short values sit at indices
(f-1)*10 .. f*10-6 and the long values at f*10-5 .. f*10-1, most recent first.

Long MIs are aligned: a 600 ms MI is the union of the 10 short MIs ending at
the same boundary, recomputed from raw samples (not averaged).

Loss accounting: a sequence gap is counted as provisional loss in the MI where
the gap was detected; a missing packet that shows up within the reordering
window reverses its provisional loss.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import TYPE_CHECKING, Iterable, Sequence

import numpy as np

from .config import FeatureConfig
from .errors import SchemaError

if TYPE_CHECKING:  # pragma: no cover
	from .netemu import Packet

__all__ = [
	"FEATURE_NAMES",
	"N_FEATURES",
	"SLOTS",
	"OBS_DIM",
	"MIStats",
	"Observation",
	"ReceiverState",
	"on_packet",
	"mi_features",
	"assemble",
	"observe",
	"short_indices",
	"latest_short_mi",
	"long_indices",
	"write_mi_csv",
]

FEATURE_NAMES = [
	"receiving_rate_bps",
	"packet_count",
	"byte_count",
	"queuing_delay_ms",
	"delay_ms",
	"min_seen_delay_ms",
	"delay_ratio",
	"delay_avg_min_diff_ms",
	"mean_interarrival_ms",
	"jitter_ms",
	"loss_ratio",
	"avg_loss_burst_len",
	"p_video",
	"p_audio",
	"p_probe",
]
N_FEATURES = len(FEATURE_NAMES)
SLOTS = 5
OBS_DIM = N_FEATURES * 2 * SLOTS


@dataclass(slots=True)
class MIStats:
	receiving_rate_bps: float = 0.0
	packet_count: float = 0.0
	byte_count: float = 0.0
	queuing_delay_ms: float = 0.0
	delay_ms: float = 0.0
	min_seen_delay_ms: float = 0.0
	delay_ratio: float = 0.0
	delay_avg_min_diff_ms: float = 0.0
	mean_interarrival_ms: float = 0.0
	jitter_ms: float = 0.0
	loss_ratio: float = 0.0
	avg_loss_burst_len: float = 0.0
	p_video: float = 0.0
	p_audio: float = 0.0
	p_probe: float = 0.0

	def as_vector(self) -> np.ndarray:
		return np.array([getattr(self, n) for n in FEATURE_NAMES], dtype=np.float64)

	@staticmethod
	def from_vector(values: Sequence[float]) -> "MIStats":
		if len(values) != N_FEATURES:
			raise SchemaError(f"MIStats needs {N_FEATURES} values, got {len(values)}")
		return MIStats(**{n: float(v) for n, v in zip(FEATURE_NAMES, values)})


@dataclass(slots=True)
class Observation:
	values: np.ndarray
	step: int = 0

	def __post_init__(self):
		self.values = np.asarray(self.values, dtype=np.float64)
		if self.values.shape != (OBS_DIM,):
			raise SchemaError(f"observation must have length {OBS_DIM}, got shape {self.values.shape}")
		if not np.all(np.isfinite(self.values)):
			raise SchemaError(f"observation {self.step} has non-finite entries")


def short_indices(feature: int) -> range:
	"""Indices of the 5 short-MI values for 1-based feature number."""
	return range((feature - 1) * 10, feature * 10 - 5)


def long_indices(feature: int) -> range:
	return range(feature * 10 - 5, feature * 10)


def latest_short_mi(obs: Observation) -> MIStats:
	"""Decode the most recent short MI back out of an observation."""
	return MIStats.from_vector(obs.values[[(f - 1) * 10 for f in range(1, N_FEATURES + 1)]])


def assemble(shorts: Sequence[MIStats], longs: Sequence[MIStats], step: int = 0) -> Observation:
	if len(shorts) != SLOTS or len(longs) != SLOTS:
		raise SchemaError(f"assemble needs {SLOTS} short and {SLOTS} long MIs, got {len(shorts)}/{len(longs)}")
	values = np.zeros(OBS_DIM, dtype=np.float64)
	short_mat = np.stack([s.as_vector() for s in shorts])  # (slot, feature)
	long_mat = np.stack([s.as_vector() for s in longs])
	for j in range(N_FEATURES):
		values[j * 10:j * 10 + SLOTS] = short_mat[:, j]
		values[j * 10 + SLOTS:(j + 1) * 10] = long_mat[:, j]
	return Observation(values, step)


# ------------------------------ Receiver state ------------------------------
@dataclass(slots=True)
class _Bucket:
	delays: list[float] = field(default_factory=list)
	sizes: list[int] = field(default_factory=list)
	kinds: list[str] = field(default_factory=list)
	interarrivals: list[float] = field(default_factory=list)
	lost: int = 0
	loss_bursts: int = 0


@dataclass(slots=True)
class ReceiverState:
	"""Single-owner receiver bookkeeping for one call leg."""

	config: FeatureConfig = field(default_factory=FeatureConfig)
	min_seen_delay_ms: float = math.inf
	last_arrival_ts: float | None = None
	highest_seq_seen: int | None = None
	# seq -> (detected_at_ms, bucket index, burst id)
	pending_losses: dict[int, tuple[float, int, int]] = field(default_factory=dict)
	burst_remaining: dict[int, int] = field(default_factory=dict)
	buckets: dict[int, _Bucket] = field(default_factory=dict)
	_next_burst: int = 0

	@property
	def history_len(self) -> int:
		per_long = int(round(self.config.long_mi_ms / self.config.short_mi_ms))
		return per_long * SLOTS

	def bucket_index(self, t_ms: float) -> int:
		return int(math.floor(t_ms / self.config.short_mi_ms))

	def _bucket(self, idx: int) -> _Bucket:
		b = self.buckets.get(idx)
		if b is None:
			b = self.buckets[idx] = _Bucket()
			stale = [k for k in self.buckets if k <= idx - self.history_len]
			for k in stale:
				del self.buckets[k]
		return b

	def expire_losses(self, now_ms: float) -> None:
		"""Forget provisional losses that can no longer be reversed at now_ms."""
		window = self.config.reorder_window_ms
		pending = self.pending_losses
		while pending:
			seq, (detected_at, _, _) = next(iter(pending.items()))
			if now_ms - detected_at <= window:
				break
			del pending[seq]
		# pending entries are in detection order, so burst ids below the oldest one are settled
		oldest = next(iter(pending.values()))[2] if pending else self._next_burst
		for burst in [b for b in self.burst_remaining if b < oldest]:
			del self.burst_remaining[burst]


def on_packet(state: ReceiverState, p: "Packet") -> ReceiverState:
	"""Record one delivered packet (packets must be fed in arrival order)."""
	if p.recv_ts_ms is None:
		raise SchemaError(f"packet {p.seq} was not delivered")
	recv = p.recv_ts_ms
	state.expire_losses(recv)
	idx = state.bucket_index(recv)
	bucket = state._bucket(idx)

	delay = recv - p.send_ts_ms
	bucket.delays.append(delay)
	bucket.sizes.append(int(p.size_bytes))
	bucket.kinds.append(str(p.media_kind.value if hasattr(p.media_kind, "value") else p.media_kind))
	if delay < state.min_seen_delay_ms:
		state.min_seen_delay_ms = delay
	if state.last_arrival_ts is not None:
		bucket.interarrivals.append(recv - state.last_arrival_ts)
	state.last_arrival_ts = recv

	highest = state.highest_seq_seen
	if highest is None or p.seq > highest:
		if highest is not None and p.seq > highest + 1:
			gap = p.seq - highest - 1
			burst = state._next_burst
			state._next_burst += 1
			state.burst_remaining[burst] = gap
			bucket.lost += gap
			bucket.loss_bursts += 1
			for s in range(highest + 1, p.seq):
				state.pending_losses[s] = (recv, idx, burst)
		state.highest_seq_seen = p.seq
	elif p.seq in state.pending_losses:
		detected_at, b_idx, burst = state.pending_losses.pop(p.seq)
		if recv - detected_at <= state.config.reorder_window_ms:
			origin = state.buckets.get(b_idx)
			if origin is not None:
				origin.lost -= 1
				state.burst_remaining[burst] -= 1
				if state.burst_remaining[burst] == 0:
					origin.loss_bursts -= 1
	return state


def _empty_stats(state: ReceiverState) -> MIStats:
	if state.config.empty_mi == "zeros":
		return MIStats()
	carried = state.min_seen_delay_ms if math.isfinite(state.min_seen_delay_ms) else 0.0
	return MIStats(delay_ms=-state.config.base_delay_ms, min_seen_delay_ms=carried)


def mi_features(state: ReceiverState, interval: tuple[float, float]) -> MIStats:
	"""Compute the 15 features over [t0, t1) (aligned to short-MI boundaries).

	The running minimum delay used for features 4 and 6 is the one current at
	call time, so call this at the interval end before later packets arrive.
	"""
	t0, t1 = interval
	length = t1 - t0
	if length <= 0:
		raise SchemaError(f"empty interval {interval}")
	first = int(round(t0 / state.config.short_mi_ms))
	last = int(round(t1 / state.config.short_mi_ms))
	parts = [state.buckets[i] for i in range(first, last) if i in state.buckets]

	delays = [d for b in parts for d in b.delays]
	n = len(delays)
	if n == 0:
		return _empty_stats(state)
	byte_count = sum(s for b in parts for s in b.sizes)
	kinds = [k for b in parts for k in b.kinds]
	interarrivals = np.array([x for b in parts for x in b.interarrivals], dtype=np.float64)
	lost = sum(b.lost for b in parts)
	bursts = sum(b.loss_bursts for b in parts)

	d = np.array(delays, dtype=np.float64)
	mean_d = float(d.mean())
	min_d = float(d.min())
	return MIStats(
		receiving_rate_bps=byte_count * 8000.0 / length,
		packet_count=float(n),
		byte_count=float(byte_count),
		queuing_delay_ms=mean_d - state.min_seen_delay_ms,
		delay_ms=mean_d - state.config.base_delay_ms,
		min_seen_delay_ms=state.min_seen_delay_ms,
		delay_ratio=mean_d / min_d if min_d > 0 else 0.0,
		delay_avg_min_diff_ms=mean_d - min_d,
		mean_interarrival_ms=float(interarrivals.mean()) if interarrivals.size else 0.0,
		jitter_ms=float(interarrivals.std()) if interarrivals.size else 0.0,
		loss_ratio=lost / (lost + n),
		avg_loss_burst_len=lost / bursts if bursts > 0 else 0.0,
		p_video=kinds.count("video") / n,
		p_audio=kinds.count("audio") / n,
		p_probe=kinds.count("probe") / n,
	)


def observe(state: ReceiverState, now_ms: float, step: int = 0) -> Observation:
	"""Assemble the observation from the MIs ending at ``now_ms``."""
	s, l = state.config.short_mi_ms, state.config.long_mi_ms
	shorts = [_window(state, now_ms - (k + 1) * s, now_ms - k * s) for k in range(SLOTS)]
	longs = [_window(state, now_ms - (k + 1) * l, now_ms - k * l) for k in range(SLOTS)]
	return assemble(shorts, longs, step)


def _window(state: ReceiverState, t0: float, t1: float) -> MIStats:
	if t1 <= 0:
		return _empty_stats(state)
	return mi_features(state, (t0, t1))


def write_mi_csv(rows: Iterable[MIStats], path: Path) -> None:
	"""Debug dump: one row per short MI, one column per feature."""
	path = Path(path)
	path.parent.mkdir(parents=True, exist_ok=True)
	with path.open("w", newline="", encoding="utf-8") as fh:
		writer = csv.writer(fh)
		writer.writerow(FEATURE_NAMES)
		for row in rows:
			writer.writerow([repr(float(v)) for v in row.as_vector()])
