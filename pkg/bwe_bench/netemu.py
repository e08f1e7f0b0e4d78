"""Deterministic single-bottleneck call emulator.

One call leg: a media source (audio, video, probes) sends through a drop-tail
link whose capacity and loss follow a Trace; the receiver turns arrivals into
monitor-interval features; every 60 ms the estimator picks the next target
rate, applied immediately to the source.

Event order inside each MI is fixed: for each sent packet drain the link up to
its send time, then enqueue it; drain to the MI end; deliver arrivals that land
before the boundary; close the MI. One virtual clock in ms (float64).

RNG: the loss process and video frame-size jitter use independent substreams
of the call seed (see utils.make_rng).
"""

from __future__ import annotations

import heapq
import math
from collections import deque
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional, Protocol

import numpy as np

from .config import (
	FeatureConfig,
	LinkConfig,
	MediaSourceConfig,
	ProxyRewardConfig,
	validate_feature_config,
	validate_link_config,
	validate_media_config,
)
from .dataio import CallTrajectory, NetworkOutcome, Step
from .errors import EmulationError
from .evalx import proxy_rewards
from .features import MIStats, Observation, ReceiverState, mi_features, observe, on_packet, write_mi_csv
from .traces import LossSpec, Trace, loss_rate_at, segment_index
from .utils import debug_log, make_rng

__all__ = [
	"MediaKind",
	"Packet",
	"LinkDecision",
	"LossModel",
	"BernoulliLoss",
	"GilbertLoss",
	"make_loss_model",
	"LinkState",
	"make_link",
	"enqueue",
	"drain",
	"MediaSource",
	"generate_media",
	"Estimator",
	"run_call",
]


class MediaKind(str, Enum):
	AUDIO = "audio"
	VIDEO = "video"
	PROBE = "probe"


@dataclass(slots=True)
class Packet:
	seq: int
	media_kind: MediaKind
	size_bytes: int
	send_ts_ms: float
	recv_ts_ms: Optional[float] = None


class LinkDecision(str, Enum):
	QUEUED = "queued"
	DROPPED_TAIL = "dropped_tail"
	DROPPED_LOSS = "dropped_loss"


# -------------------------------- Loss models -------------------------------
class LossModel:
	"""Lossless base model; subclasses decide per arriving packet."""

	def drop(self, rng: np.random.Generator) -> bool:
		return False


class BernoulliLoss(LossModel):
	def __init__(self, p: float):
		self.p = p

	def drop(self, rng: np.random.Generator) -> bool:
		return bool(rng.random() < self.p)


class GilbertLoss(LossModel):
	"""Two-state chain: every packet in the bad state is lost.

	Good -> bad with p_enter per packet; bad -> good with 1/mean_burst_len, so
	burst lengths are geometric with the configured mean.
	"""

	def __init__(self, p_enter: float, mean_burst_len: float):
		self.p_enter = p_enter
		self.p_exit = 1.0 / mean_burst_len
		self.bad = False

	def drop(self, rng: np.random.Generator) -> bool:
		u = rng.random()
		if self.bad:
			if u < self.p_exit:
				self.bad = False
		elif u < self.p_enter:
			self.bad = True
		return self.bad


def make_loss_model(spec: LossSpec) -> LossModel:
	if spec.kind == "bernoulli":
		return BernoulliLoss(spec.params[0])
	if spec.kind == "gilbert":
		return GilbertLoss(*spec.params)
	return LossModel()


# ----------------------------------- Link -----------------------------------
@dataclass(slots=True)
class LinkState:
	capacity_bps: float
	propagation_delay_ms: float
	max_queue_ms: float
	loss_model: LossModel = field(default_factory=LossModel)
	rng: np.random.Generator = field(default_factory=lambda: np.random.default_rng(0))
	trace: Optional[Trace] = None
	queue: deque = field(default_factory=deque)  # (Packet, arrival_ms)
	queued_bytes: int = 0
	next_free_ms: float = 0.0
	last_drain_ms: float = 0.0
	dropped_tail: int = 0
	dropped_loss: int = 0
	_segment: int = -1

	def queue_limit_bytes(self) -> float:
		return self.capacity_bps * self.max_queue_ms / 8000.0

	def sync(self, now_ms: float) -> None:
		"""Pick up capacity/loss of the trace segment containing now_ms."""
		if self.trace is None:
			return
		idx = _segment_clamped(self.trace, now_ms)
		if idx == self._segment:
			return
		seg = self.trace.segments[idx]
		shrinking = seg.capacity_bps < self.capacity_bps
		self.capacity_bps = seg.capacity_bps
		if self._segment < 0 or self.trace.segments[self._segment].loss != seg.loss:
			self.loss_model = make_loss_model(seg.loss)
		self._segment = idx
		if shrinking:
			self._trim_to_limit()

	def _trim_to_limit(self) -> None:
		limit = self.queue_limit_bytes()
		while len(self.queue) > 1 and self.queued_bytes > limit:
			p, _ = self.queue.pop()
			self.queued_bytes -= p.size_bytes
			self.dropped_tail += 1

	def finish_time(self, start_ms: float, bits: float) -> float:
		"""Completion time of a transmission starting at start_ms (capacity integrated over the trace)."""
		if self.trace is None:
			return start_ms + bits * 1000.0 / self.capacity_bps
		segs, ends = self.trace.segments, self.trace.ends
		idx = _segment_clamped(self.trace, start_ms)
		t = start_ms
		remaining = bits
		while True:
			cap = segs[idx].capacity_bps
			seg_end = ends[idx] if idx < len(segs) - 1 else math.inf
			avail = (seg_end - t) * cap / 1000.0
			if avail >= remaining:
				return t + remaining * 1000.0 / cap
			remaining -= avail
			t = seg_end
			idx += 1


def _segment_clamped(trace: Trace, t_ms: float) -> int:
	if t_ms >= trace.total_duration_ms:
		return len(trace.segments) - 1
	return segment_index(trace, max(0.0, t_ms))


def make_link(trace: Trace, cfg: LinkConfig, rng: np.random.Generator) -> LinkState:
	link = LinkState(
		capacity_bps=trace.segments[0].capacity_bps,
		propagation_delay_ms=cfg.propagation_delay_ms,
		max_queue_ms=cfg.max_queue_ms,
		rng=rng,
		trace=trace,
	)
	link.sync(0.0)
	return link


def enqueue(link: LinkState, p: Packet, now_ms: float) -> LinkDecision:
	"""Offer a packet to the link at now_ms (>= its send time).

	The loss draw happens first so the loss process advances once per offered
	packet; surviving packets are then subject to the drop-tail bound. An empty
	queue always accepts one packet, so links whose byte limit is below one
	MTU (capacity under about 20 kbps at 500 ms) still carry traffic.
	"""
	link.sync(now_ms)
	if link.loss_model.drop(link.rng):
		link.dropped_loss += 1
		return LinkDecision.DROPPED_LOSS
	if link.queue and link.queued_bytes + p.size_bytes > link.queue_limit_bytes():
		link.dropped_tail += 1
		return LinkDecision.DROPPED_TAIL
	link.queue.append((p, now_ms))
	link.queued_bytes += p.size_bytes
	return LinkDecision.QUEUED


def drain(link: LinkState, until_ms: float) -> list[tuple[Packet, float]]:
	"""Serialize head-of-line packets whose transmission completes by until_ms."""
	out: list[tuple[Packet, float]] = []
	while link.queue:
		p, arrival = link.queue[0]
		start = max(link.next_free_ms, arrival)
		if start >= until_ms:
			break
		finish = link.finish_time(start, p.size_bytes * 8.0)
		if finish > until_ms:
			break
		link.queue.popleft()
		link.queued_bytes -= p.size_bytes
		link.next_free_ms = finish
		recv = finish + link.propagation_delay_ms
		p.recv_ts_ms = recv
		out.append((p, recv))
	link.last_drain_ms = max(link.last_drain_ms, until_ms)
	return out


# ------------------------------- Media source -------------------------------
_KIND_ORDER = {MediaKind.AUDIO: 0, MediaKind.VIDEO: 1, MediaKind.PROBE: 2}


@dataclass(slots=True)
class MediaSource:
	"""Stateful sender; fractional byte budgets carry over between windows."""

	cfg: MediaSourceConfig
	rng: np.random.Generator = field(default_factory=lambda: np.random.default_rng(0))
	next_seq: int = 0
	audio_credit: float = 0.0
	video_credit: float = 0.0
	probe_credit: float = 0.0
	audio_index: int = 0
	frame_index: int = 0
	last_clamped: bool = False

	def generate(self, target_bps: float, t0: float, t1: float) -> list[Packet]:
		cfg = self.cfg
		window = t1 - t0
		self.last_clamped = target_bps < cfg.audio_bps
		if self.last_clamped:
			debug_log(f"target {target_bps:.0f} bps below audio floor, sending audio only")
		residual = max(0.0, target_bps - cfg.audio_bps)
		probe_bps = min(cfg.probe_fraction * target_bps, residual)
		video_bps = residual - probe_bps

		# a fresh source asked for a later window starts its clocks there
		while self.audio_index * cfg.audio_ptime_ms < t0:
			self.audio_index += 1
		while self.frame_index * cfg.video_frame_interval_ms < t0:
			self.frame_index += 1

		out: list[tuple[float, MediaKind, int]] = []

		# audio: constant rate, one packet per ptime
		while self.audio_index * cfg.audio_ptime_ms < t1:
			ts = self.audio_index * cfg.audio_ptime_ms
			self.audio_credit += cfg.audio_bps * cfg.audio_ptime_ms / 8000.0
			size = int(self.audio_credit)
			self.audio_credit -= size
			if size > 0:
				out.append((ts, MediaKind.AUDIO, size))
			self.audio_index += 1

		# video: window budget split over the frames starting in the window
		self.video_credit += video_bps * window / 8000.0
		frames: list[float] = []
		while self.frame_index * cfg.video_frame_interval_ms < t1:
			frames.append(self.frame_index * cfg.video_frame_interval_ms)
			self.frame_index += 1
		if frames and self.video_credit > 0:
			weights = np.ones(len(frames))
			if cfg.video_size_jitter > 0:
				weights = np.clip(1.0 + cfg.video_size_jitter * self.rng.standard_normal(len(frames)), 0.1, None)
			shares = self.video_credit * weights / weights.sum()
			# bytes a frame cannot send roll into the next frame of the window
			carry = 0.0
			for start, share in zip(frames, shares):
				budget = float(share) + carry
				sizes = _packetize(budget, cfg.video_packet_mtu_bytes, cfg.min_video_packet_bytes)
				carry = budget - sum(sizes)
				span = min(cfg.video_frame_interval_ms, t1 - start)
				for i, size in enumerate(sizes):
					out.append((start + i * span / len(sizes), MediaKind.VIDEO, size))
			self.video_credit = carry

		# probes: fixed-size packets spread evenly over the window
		self.probe_credit += probe_bps * window / 8000.0
		n_probe = int(self.probe_credit // cfg.probe_packet_bytes)
		self.probe_credit -= n_probe * cfg.probe_packet_bytes
		for i in range(n_probe):
			out.append((t0 + (i + 0.5) * window / n_probe, MediaKind.PROBE, cfg.probe_packet_bytes))

		out.sort(key=lambda x: (x[0], _KIND_ORDER[x[1]]))
		packets = []
		for ts, kind, size in out:
			packets.append(Packet(self.next_seq, kind, size, ts))
			self.next_seq += 1
		return packets


def _packetize(nbytes: float, mtu: int, min_packet: int) -> list[int]:
	full = int(nbytes // mtu)
	sizes = [mtu] * full
	rest = int(nbytes - full * mtu)
	if rest >= min_packet:
		sizes.append(rest)
	return sizes


def generate_media(
	cfg: MediaSourceConfig,
	target_bps: float,
	window: tuple[float, float],
	source: Optional[MediaSource] = None,
) -> list[Packet]:
	"""Packets sent in [t0, t1) at target_bps (a fresh source unless one is given)."""
	validate_media_config(cfg)
	if source is None:
		source = MediaSource(cfg)
	return source.generate(target_bps, *window)


# ------------------------------- Call emulation ------------------------------
class Estimator(Protocol):
	"""Bandwidth estimator: observation in, bits-per-second out."""

	def reset(self) -> None:
		...

	def estimate(self, obs: Observation) -> float:
		...


def _outcome(mi: MIStats, base_delay_ms: float) -> NetworkOutcome:
	return NetworkOutcome(
		receiving_rate_bps=mi.receiving_rate_bps,
		delay_ms=mi.delay_ms + base_delay_ms if mi.packet_count > 0 else 0.0,
		queuing_delay_ms=mi.queuing_delay_ms,
		loss_ratio=mi.loss_ratio,
	)


def run_call(
	trace: Trace,
	policy: Estimator,
	cfg: MediaSourceConfig,
	duration_ms: float,
	seed: int,
	*,
	link_cfg: Optional[LinkConfig] = None,
	feature_cfg: Optional[FeatureConfig] = None,
	reward_cfg: Optional[ProxyRewardConfig] = None,
	call_id: str = "call",
	policy_id: str = "policy",
	mi_dump_path=None,
) -> CallTrajectory:
	"""Emulate one call leg and return its trajectory (one step per short MI).

	A non-finite or non-positive estimate aborts the call: the trajectory keeps
	the steps completed so far and ``error`` records the reason.
	"""

	link_cfg = link_cfg or LinkConfig()
	feature_cfg = feature_cfg or FeatureConfig()
	validate_media_config(cfg)
	validate_link_config(link_cfg)
	validate_feature_config(feature_cfg)
	if duration_ms < feature_cfg.long_mi_ms:
		raise EmulationError(f"duration_ms must be >= {feature_cfg.long_mi_ms:g} (one long MI)")
	if trace.total_duration_ms < duration_ms - 1e-6:
		raise EmulationError(f"trace lasts {trace.total_duration_ms:g} ms, call needs {duration_ms:g} ms")

	mi_len = feature_cfg.short_mi_ms
	n_steps = int(duration_ms // mi_len)
	link = make_link(trace, link_cfg, make_rng(seed, "loss"))
	source = MediaSource(cfg, make_rng(seed, "video_jitter"))
	receiver = ReceiverState(config=feature_cfg)
	inflight: list[tuple[float, int, Packet]] = []
	policy.reset()

	traj = CallTrajectory(call_id=call_id, policy_id=policy_id, family=trace.family.value)
	dumped: list[MIStats] = []
	for n in range(n_steps):
		t0 = n * mi_len
		t1 = t0 + mi_len
		obs = observe(receiver, t0, step=n)
		action = float(policy.estimate(obs))
		if not (math.isfinite(action) and action > 0):
			traj.error = f"step {n}: estimator returned {action!r}"
			debug_log("call aborted:", call_id, traj.error)
			break

		for p in source.generate(action, t0, t1):
			for q, recv in drain(link, p.send_ts_ms):
				heapq.heappush(inflight, (recv, q.seq, q))
			enqueue(link, p, p.send_ts_ms)
		for q, recv in drain(link, t1):
			heapq.heappush(inflight, (recv, q.seq, q))
		while inflight and inflight[0][0] < t1:
			on_packet(receiver, heapq.heappop(inflight)[2])

		latest = mi_features(receiver, (t0, t1))
		if mi_dump_path is not None:
			dumped.append(latest)
		traj.steps.append(
			Step(
				observation=obs.values,
				bandwidth_prediction_bps=action,
				true_capacity_bps=trace.segments[_segment_clamped(trace, t0)].capacity_bps,
				true_loss_rate=loss_rate_at(trace, t0),
				outcome=_outcome(latest, feature_cfg.base_delay_ms),
			)
		)

	for step, (r_audio, r_video) in zip(traj.steps, proxy_rewards(traj, reward_cfg)):
		step.r_audio = r_audio
		step.r_video = r_video
	if mi_dump_path is not None:
		write_mi_csv(dumped, mi_dump_path)
	debug_log(
		f"call {call_id}: steps={len(traj.steps)} sent={source.next_seq} "
		f"tail_drops={link.dropped_tail} loss_drops={link.dropped_loss}"
	)
	return traj
