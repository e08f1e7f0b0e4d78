"""Call-trajectory files, dataset manifests and the trainer's minibatch feed.

 - CallTrajectory / Step models (one step per 60 ms MI)
 - Strict reader: every array validated, NaN/Inf rejected, errors name the field path
 - Atomic writer with stable key order (byte-identical output for equal input)
 - Dataset manifest listing call files with their behavior-policy tag
 - Transition building (terminal step: done=True, next_obs = own obs)
 - Seeded epoch-wise minibatch stream
 - Key-mapping shim for files from the public challenge repository

Call file format (JSON, keys sorted):
{
  "call_id": str, "policy_id": str, "family": str (optional),
  "error": str (optional, aborted calls),
  "observations": [[150 floats], ...],
  "bandwidth_predictions": [bps, ...],
  "audio_quality_reward": [0..5, ...],
  "video_quality_reward": [0..5, ...],
  "true_capacity": [bps, ...]            (optional, all steps or none),
  "true_loss_rate": [0..1, ...]          (optional, all steps or none),
  "network_outcomes": {                  (optional, all steps or none)
	  "receiving_rate": [...], "delay": [...],
	  "queuing_delay": [...], "loss_ratio": [...]
  }
}

Manifest (manifest.json in the dataset directory):
{"calls": [{"file": "calls/<id>.json", "call_id": str, "policy_id": str}]}
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Iterator, Mapping, Optional, Sequence

import numpy as np

from .errors import SchemaError
from .features import OBS_DIM
from .utils import atomic_write_text, debug_log, make_rng

__all__ = [
	"NetworkOutcome",
	"Step",
	"CallTrajectory",
	"CHALLENGE_KEY_MAP",
	"call_to_dict",
	"call_from_dict",
	"read_call",
	"write_call",
	"from_challenge",
	"write_manifest",
	"read_manifest",
	"read_dataset",
	"TransitionBatch",
	"build_transitions",
	"batches",
]

MANIFEST_NAME = "manifest.json"
MOS_MAX = 5.0

OUTCOME_KEYS = {
	"receiving_rate": "receiving_rate_bps",
	"delay": "delay_ms",
	"queuing_delay": "queuing_delay_ms",
	"loss_ratio": "loss_ratio",
}

# challenge key -> workbench key
CHALLENGE_KEY_MAP: dict[str, str] = {
	"observations": "observations",
	"bandwidth_predictions": "bandwidth_predictions",
	"audio_quality": "audio_quality_reward",
	"video_quality": "video_quality_reward",
	"capacity": "true_capacity",
	"loss_rate": "true_loss_rate",
}


@dataclass(slots=True)
class NetworkOutcome:
	"""What the receiver measured over the MI that followed an action."""

	receiving_rate_bps: float
	delay_ms: float
	queuing_delay_ms: float
	loss_ratio: float


@dataclass(slots=True)
class Step:
	observation: np.ndarray
	bandwidth_prediction_bps: float
	r_audio: float = 0.0
	r_video: float = 0.0
	true_capacity_bps: Optional[float] = None
	true_loss_rate: Optional[float] = None
	outcome: Optional[NetworkOutcome] = None


@dataclass(slots=True)
class CallTrajectory:
	call_id: str
	policy_id: str
	steps: list[Step] = field(default_factory=list)
	family: Optional[str] = None
	error: Optional[str] = None

	def __len__(self) -> int:
		return len(self.steps)

	@property
	def has_ground_truth(self) -> bool:
		return bool(self.steps) and all(s.true_capacity_bps is not None for s in self.steps)

	@property
	def has_outcomes(self) -> bool:
		return bool(self.steps) and all(s.outcome is not None for s in self.steps)


# ------------------------------- Serialization -------------------------------
def _all_or_none(traj: CallTrajectory, attr: str) -> bool:
	present = [getattr(s, attr) is not None for s in traj.steps]
	if any(present) and not all(present):
		raise SchemaError(f"call {traj.call_id}: {attr} present for some steps only")
	return bool(present) and all(present)


def call_to_dict(traj: CallTrajectory) -> dict[str, Any]:
	out: dict[str, Any] = {
		"call_id": traj.call_id,
		"policy_id": traj.policy_id,
		"observations": [np.asarray(s.observation, dtype=np.float64).tolist() for s in traj.steps],
		"bandwidth_predictions": [float(s.bandwidth_prediction_bps) for s in traj.steps],
		"audio_quality_reward": [float(s.r_audio) for s in traj.steps],
		"video_quality_reward": [float(s.r_video) for s in traj.steps],
	}
	if traj.family is not None:
		out["family"] = traj.family
	if traj.error is not None:
		out["error"] = traj.error
	if _all_or_none(traj, "true_capacity_bps"):
		out["true_capacity"] = [float(s.true_capacity_bps) for s in traj.steps]
	if _all_or_none(traj, "true_loss_rate"):
		out["true_loss_rate"] = [float(s.true_loss_rate) for s in traj.steps]
	if _all_or_none(traj, "outcome"):
		out["network_outcomes"] = {
			key: [float(getattr(s.outcome, attr)) for s in traj.steps] for key, attr in OUTCOME_KEYS.items()
		}
	return out


def _number(val: Any, where: str) -> float:
	if isinstance(val, bool) or not isinstance(val, (int, float)):
		raise SchemaError(f"{where}: expected a number, got {type(val).__name__}")
	x = float(val)
	if not math.isfinite(x):
		raise SchemaError(f"{where}: non-finite value")
	return x


def _array(raw: Mapping[str, Any], key: str, n: Optional[int], where: str) -> list[float]:
	vals = raw.get(key)
	if not isinstance(vals, list):
		raise SchemaError(f"{where}.{key}: expected an array")
	if n is not None and len(vals) != n:
		raise SchemaError(f"{where}.{key}: length {len(vals)} does not match {n} observations")
	return [_number(v, f"{where}.{key}[{i}]") for i, v in enumerate(vals)]


def _check_range(vals: Sequence[float], lo: float, hi: float, where: str) -> None:
	for i, v in enumerate(vals):
		if not (lo <= v <= hi):
			raise SchemaError(f"{where}[{i}]: {v} outside [{lo:g}, {hi:g}]")


def call_from_dict(raw: Any, source: str = "<call>") -> CallTrajectory:
	"""Validate a decoded call file; every violation raises SchemaError with a field path."""
	if not isinstance(raw, dict):
		raise SchemaError(f"{source}: top level must be an object")
	for key in ("call_id", "policy_id"):
		if not isinstance(raw.get(key), str):
			raise SchemaError(f"{source}.{key}: expected a string")

	obs_raw = raw.get("observations")
	if not isinstance(obs_raw, list) or not obs_raw:
		raise SchemaError(f"{source}.observations: expected a non-empty array")
	observations: list[np.ndarray] = []
	for i, row in enumerate(obs_raw):
		where = f"{source}.observations[{i}]"
		if not isinstance(row, list):
			raise SchemaError(f"{where}: expected an array")
		if len(row) != OBS_DIM:
			raise SchemaError(f"{where}: step {i} has {len(row)} values, expected {OBS_DIM}")
		observations.append(np.array([_number(v, f"{where}[{j}]") for j, v in enumerate(row)], dtype=np.float64))
	n = len(observations)

	preds = _array(raw, "bandwidth_predictions", n, source)
	for i, p in enumerate(preds):
		if p <= 0:
			raise SchemaError(f"{source}.bandwidth_predictions[{i}]: must be > 0")
	audio = _array(raw, "audio_quality_reward", n, source)
	video = _array(raw, "video_quality_reward", n, source)
	_check_range(audio, 0.0, MOS_MAX, f"{source}.audio_quality_reward")
	_check_range(video, 0.0, MOS_MAX, f"{source}.video_quality_reward")

	capacity: list[Optional[float]] = [None] * n
	if "true_capacity" in raw:
		capacity = list(_array(raw, "true_capacity", n, source))
		for i, c in enumerate(capacity):
			if c <= 0:
				raise SchemaError(f"{source}.true_capacity[{i}]: must be > 0")
	loss: list[Optional[float]] = [None] * n
	if "true_loss_rate" in raw:
		loss = list(_array(raw, "true_loss_rate", n, source))
		_check_range(loss, 0.0, 1.0, f"{source}.true_loss_rate")

	outcomes: list[Optional[NetworkOutcome]] = [None] * n
	if "network_outcomes" in raw:
		block = raw["network_outcomes"]
		if not isinstance(block, dict):
			raise SchemaError(f"{source}.network_outcomes: expected an object")
		cols = {attr: _array(block, key, n, f"{source}.network_outcomes") for key, attr in OUTCOME_KEYS.items()}
		_check_range(cols["loss_ratio"], 0.0, 1.0, f"{source}.network_outcomes.loss_ratio")
		outcomes = [NetworkOutcome(**{a: cols[a][i] for a in cols}) for i in range(n)]

	for opt in ("family", "error"):
		if opt in raw and not isinstance(raw[opt], str):
			raise SchemaError(f"{source}.{opt}: expected a string")

	steps = [
		Step(
			observation=observations[i],
			bandwidth_prediction_bps=preds[i],
			r_audio=audio[i],
			r_video=video[i],
			true_capacity_bps=capacity[i],
			true_loss_rate=loss[i],
			outcome=outcomes[i],
		)
		for i in range(n)
	]
	return CallTrajectory(raw["call_id"], raw["policy_id"], steps, raw.get("family"), raw.get("error"))


def _reject_constant(token: str) -> Any:
	raise SchemaError(f"non-finite literal {token} not allowed")


def _load_json(path: Path) -> Any:
	try:
		text = Path(path).read_text(encoding="utf-8")
	except OSError as e:
		raise SchemaError(f"cannot read {path}: {e}") from e
	try:
		return json.loads(text, parse_constant=_reject_constant)
	except json.JSONDecodeError as e:
		raise SchemaError(f"{path}: invalid JSON ({e})") from e
	except SchemaError as e:
		raise SchemaError(f"{path}: {e}") from None


def read_call(path: Path) -> CallTrajectory:
	return call_from_dict(_load_json(path), str(path))


def write_call(traj: CallTrajectory, path: Path) -> None:
	text = json.dumps(call_to_dict(traj), sort_keys=True, allow_nan=False, separators=(",", ":"))
	try:
		atomic_write_text(Path(path), text + "\n")
	except OSError as e:
		raise SchemaError(f"cannot write {path}: {e}") from e


def from_challenge(raw: Mapping[str, Any], call_id: str, policy_id: str) -> CallTrajectory:
	"""Rename challenge-repository keys, then validate like any call file."""
	mapped: dict[str, Any] = {"call_id": call_id, "policy_id": policy_id}
	for src, dst in CHALLENGE_KEY_MAP.items():
		if src in raw:
			mapped[dst] = raw[src]
		elif dst in raw:
			mapped[dst] = raw[dst]
	return call_from_dict(mapped, call_id)


# --------------------------------- Manifest ----------------------------------
def write_manifest(dataset_dir: Path, entries: Sequence[Mapping[str, str]]) -> Path:
	path = Path(dataset_dir) / MANIFEST_NAME
	body = {"calls": sorted((dict(e) for e in entries), key=lambda e: e["file"])}
	atomic_write_text(path, json.dumps(body, indent=2, sort_keys=True) + "\n")
	return path


def read_manifest(dataset_dir: Path) -> list[dict[str, str]]:
	raw = _load_json(Path(dataset_dir) / MANIFEST_NAME)
	calls = raw.get("calls") if isinstance(raw, dict) else None
	if not isinstance(calls, list):
		raise SchemaError(f"{dataset_dir}/{MANIFEST_NAME}: 'calls' must be an array")
	for i, entry in enumerate(calls):
		if not isinstance(entry, dict) or not isinstance(entry.get("file"), str):
			raise SchemaError(f"{MANIFEST_NAME}.calls[{i}]: entry needs a 'file' string")
	return calls


def read_dataset(dataset_dir: Path) -> list[CallTrajectory]:
	"""Load every call listed in the manifest (or every *.json under calls/ without one)."""
	root = Path(dataset_dir)
	if (root / MANIFEST_NAME).exists():
		files = [root / e["file"] for e in read_manifest(root)]
	else:
		base = root / "calls" if (root / "calls").is_dir() else root
		files = sorted(p for p in base.glob("*.json") if p.name != MANIFEST_NAME)
	if not files:
		raise SchemaError(f"dataset {root} contains no call files")
	calls = [read_call(p) for p in files]
	debug_log(f"dataset {root}: {len(calls)} calls, {sum(len(c) for c in calls)} steps")
	return calls


# -------------------------------- Transitions --------------------------------
@dataclass(slots=True)
class TransitionBatch:
	obs: np.ndarray  # (B, 150)
	action: np.ndarray  # (B,) normalized
	reward: np.ndarray  # (B,)
	next_obs: np.ndarray  # (B, 150)
	done: np.ndarray  # (B,) bool

	def __post_init__(self):
		b = self.obs.shape[0]
		for name in ("action", "reward", "next_obs", "done"):
			if getattr(self, name).shape[0] != b:
				raise SchemaError(f"transition field {name} has batch size {getattr(self, name).shape[0]}, expected {b}")

	def __len__(self) -> int:
		return int(self.obs.shape[0])

	def take(self, idx: np.ndarray) -> "TransitionBatch":
		return TransitionBatch(self.obs[idx], self.action[idx], self.reward[idx], self.next_obs[idx], self.done[idx])


def build_transitions(
	dataset: Sequence[CallTrajectory],
	reward_fn: Callable[[float, float], float],
	action_fn: Callable[[np.ndarray], np.ndarray],
) -> TransitionBatch:
	"""Flatten legs into transitions; legs never link into each other.

	reward_fn composes (r_audio, r_video); action_fn maps bps to the normalized
	action space.
	"""
	if not dataset:
		raise SchemaError("empty dataset")
	bad = [t.call_id for t in dataset if not t.steps or not all(np.all(np.isfinite(s.observation)) for s in t.steps)]
	if bad:
		raise SchemaError(f"calls with no steps or non-finite features: {', '.join(bad)}")

	obs, action, reward, next_obs, done = [], [], [], [], []
	for traj in dataset:
		o = np.stack([np.asarray(s.observation, dtype=np.float64) for s in traj.steps])
		if o.shape[1] != OBS_DIM:
			raise SchemaError(f"call {traj.call_id}: observations have width {o.shape[1]}")
		nxt = np.concatenate([o[1:], o[-1:]], axis=0)
		d = np.zeros(len(traj.steps), dtype=bool)
		d[-1] = True
		obs.append(o)
		next_obs.append(nxt)
		done.append(d)
		action.append(action_fn(np.array([s.bandwidth_prediction_bps for s in traj.steps], dtype=np.float64)))
		reward.append(np.array([reward_fn(s.r_audio, s.r_video) for s in traj.steps], dtype=np.float64))
	return TransitionBatch(
		np.concatenate(obs),
		np.concatenate(action),
		np.concatenate(reward),
		np.concatenate(next_obs),
		np.concatenate(done),
	)


def batches(data: TransitionBatch, batch_size: int, seed: int) -> Iterator[TransitionBatch]:
	"""Endless stream: each epoch is one seeded permutation cut into batches.

	The last batch of an epoch holds the remainder (may be smaller).
	Sizes are checked on the call, before any batch is drawn.
	"""
	n = len(data)
	if batch_size < 1:
		raise SchemaError("batch_size must be >= 1")
	if batch_size > n:
		raise SchemaError(f"batch_size {batch_size} exceeds transition count {n}")
	return _batch_stream(data, batch_size, seed)


def _batch_stream(data: TransitionBatch, batch_size: int, seed: int) -> Iterator[TransitionBatch]:
	n = len(data)
	rng = make_rng(seed, "batches")
	while True:
		perm = rng.permutation(n)
		for start in range(0, n, batch_size):
			yield data.take(perm[start:start + batch_size])
