"""Estimators, the normalized action transform and the weight file format.

Action transform (normalized â in [-1, 1] to bits per second):

	a = exp(((â + 1) / 2) * ln(800) + ln(0.01)) * 1e6      (10 kbps .. 8 Mbps)

Neural policy: standardize the observation with the stored training-split
statistics, two tanh layers, then a 2-unit head: mean = tanh(z0),
std = max(softplus(z1), std_floor).

Weight file (.bwe), little endian:

	b"BWEW" | u32 version (=1) | u32 header_len | header JSON (utf-8) | tensors

The header lists layer shapes/activations, the std floor and the tensor
order; tensors are row-major float32 in that order.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .errors import PolicyError, WeightsError
from .features import OBS_DIM, MIStats, Observation, latest_short_mi
from .nn import ACTIVATIONS, Dense, Mlp
from .traces import Trace, capacity_at
from .utils import atomic_write_bytes, debug_log, make_rng, warn_log

__all__ = [
	"MIN_BPS",
	"MAX_BPS",
	"to_bps",
	"from_bps",
	"normalize_actions",
	"ModelWeights",
	"mlp_forward",
	"HeuristicState",
	"heuristic_estimate",
	"HeuristicEstimator",
	"ConstantEstimator",
	"OracleEstimator",
	"NoisyEstimator",
	"NeuralEstimator",
	"PolicySpec",
	"parse_policy_spec",
	"save_weights",
	"load_weights",
]

_LN_RANGE = math.log(800.0)
_LN_FLOOR = math.log(0.01)
MIN_BPS = 10_000.0
MAX_BPS = 8_000_000.0


def to_bps(a_hat: float) -> float:
	a_hat = float(a_hat)
	if not math.isfinite(a_hat):
		raise PolicyError(f"normalized action must be finite (got {a_hat})")
	if a_hat < -1.0 or a_hat > 1.0:
		warn_log(f"normalized action {a_hat:.4f} clamped to [-1, 1]")
		a_hat = min(1.0, max(-1.0, a_hat))
	return math.exp((a_hat + 1.0) / 2.0 * _LN_RANGE + _LN_FLOOR) * 1e6


def from_bps(a_bps: float) -> float:
	a_bps = float(a_bps)
	if not (a_bps > 0):
		raise PolicyError(f"bandwidth must be > 0 (got {a_bps})")
	a_hat = 2.0 * (math.log(a_bps / 1e6) - _LN_FLOOR) / _LN_RANGE - 1.0
	return min(1.0, max(-1.0, a_hat))


def normalize_actions(bps: np.ndarray) -> np.ndarray:
	"""Vectorized from_bps for dataset arrays (one warning per clamped batch)."""
	bps = np.asarray(bps, dtype=np.float64)
	if np.any(~(bps > 0)):
		raise PolicyError("dataset actions must be > 0")
	a_hat = 2.0 * (np.log(bps / 1e6) - _LN_FLOOR) / _LN_RANGE - 1.0
	outside = int(np.count_nonzero(np.abs(a_hat) > 1.0 + 1e-12))
	if outside:
		debug_log(f"{outside} dataset actions outside [10 kbps, 8 Mbps] clamped")
	return np.clip(a_hat, -1.0, 1.0)


# --------------------------------- Neural net --------------------------------
@dataclass(slots=True)
class ModelWeights:
	norm_mean: np.ndarray
	norm_std: np.ndarray
	net: Mlp  # hidden layers + 2-unit identity head
	std_floor: float = 1e-3

	def __post_init__(self):
		validate_weights(self)

	@property
	def layers(self) -> list[Dense]:
		return self.net.layers[:-1]

	@property
	def head(self) -> Dense:
		return self.net.layers[-1]

	def standardize(self, x: np.ndarray) -> np.ndarray:
		return ((x - self.norm_mean) / self.norm_std).astype(self.net.dtype, copy=False)


def validate_weights(w: ModelWeights) -> None:
	if w.norm_mean.shape != (OBS_DIM,) or w.norm_std.shape != (OBS_DIM,):
		raise WeightsError(f"normalization vectors must have length {OBS_DIM}")
	if not np.all(w.norm_std > 0):
		raise WeightsError("norm_std entries must be > 0")
	if not w.net.layers:
		raise WeightsError("network has no layers")
	prev = OBS_DIM
	for i, layer in enumerate(w.net.layers):
		if layer.W.ndim != 2 or layer.W.shape[0] != prev or layer.b.shape != (layer.W.shape[1],):
			raise WeightsError(f"layer {i}: inconsistent shapes {layer.W.shape}/{layer.b.shape} (input {prev})")
		if layer.activation not in ACTIVATIONS:
			raise WeightsError(f"layer {i}: unknown activation {layer.activation}")
		prev = layer.W.shape[1]
	if prev != 2 or w.head.activation != "identity":
		raise WeightsError("head must be an identity layer with 2 outputs (mean, std)")
	for arr in (w.norm_mean, w.norm_std, *w.net.params()):
		if not np.all(np.isfinite(arr)):
			raise WeightsError("non-finite parameter")
	if not w.std_floor > 0:
		raise WeightsError("std_floor must be > 0")


def softplus(z: np.ndarray) -> np.ndarray:
	return np.logaddexp(0.0, z)


def head_outputs(z: np.ndarray, std_floor: float) -> tuple[np.ndarray, np.ndarray]:
	"""Map raw head outputs (..., 2) to (mean, std)."""
	return np.tanh(z[..., 0]), np.maximum(softplus(z[..., 1]), std_floor)


def mlp_forward(w: ModelWeights, o: Observation | np.ndarray) -> tuple[float, float]:
	x = o.values if isinstance(o, Observation) else np.asarray(o, dtype=np.float64)
	if x.shape != (OBS_DIM,):
		raise PolicyError(f"observation must have length {OBS_DIM}, got {x.shape}")
	z = w.net(w.standardize(x)[None, :])[0]
	mean, std = head_outputs(z, w.std_floor)
	return float(mean), float(std)


# --------------------------------- Estimators --------------------------------
@dataclass(slots=True)
class HeuristicState:
	rate_bps: float = 300_000.0
	qd_threshold_ms: float = 25.0
	increase: float = 1.05
	rr_gain: float = 1.02
	decrease: float = 0.85


def heuristic_estimate(state: HeuristicState, mi: MIStats) -> float:
	"""Delay + rate rule on the latest short MI; updates state.rate_bps."""
	rr = mi.receiving_rate_bps
	if rr > 0:
		if mi.queuing_delay_ms > state.qd_threshold_ms:
			state.rate_bps = state.decrease * rr
		else:
			state.rate_bps = max(state.rate_bps * state.increase, state.rr_gain * rr)
	state.rate_bps = min(MAX_BPS, max(MIN_BPS, state.rate_bps))
	return state.rate_bps


class HeuristicEstimator:
	def __init__(self, start_bps: float = 300_000.0):
		self.start_bps = start_bps
		self.state = HeuristicState(rate_bps=start_bps)

	def reset(self) -> None:
		self.state = HeuristicState(rate_bps=self.start_bps)

	def estimate(self, obs: Observation) -> float:
		return heuristic_estimate(self.state, latest_short_mi(obs))


class ConstantEstimator:
	def __init__(self, bps: float):
		if not (math.isfinite(bps) and bps > 0):
			raise PolicyError(f"constant rate must be finite and > 0 (got {bps})")
		self.bps = float(bps)

	def reset(self) -> None:
		pass

	def estimate(self, obs: Observation) -> float:
		return self.bps


class OracleEstimator:
	"""Reports the true capacity at the step's start time."""

	def __init__(self, trace: Trace, short_mi_ms: float = 60.0):
		self.trace = trace
		self.short_mi_ms = short_mi_ms

	def reset(self) -> None:
		pass

	def estimate(self, obs: Observation) -> float:
		t = obs.step * self.short_mi_ms
		if t >= self.trace.total_duration_ms:
			return self.trace.segments[-1].capacity_bps
		return capacity_at(self.trace, t)


class NoisyEstimator:
	"""Gaussian perturbation of a base estimator in normalized action space."""

	def __init__(self, base, sigma: float, seed: int = 0):
		if not (sigma >= 0 and math.isfinite(sigma)):
			raise PolicyError(f"noise sigma must be finite and >= 0 (got {sigma})")
		self.base = base
		self.sigma = sigma
		self.seed = seed
		self.rng = make_rng(seed, "behavior_noise")

	def reset(self) -> None:
		self.base.reset()
		self.rng = make_rng(self.seed, "behavior_noise")

	def estimate(self, obs: Observation) -> float:
		a_hat = from_bps(self.base.estimate(obs)) + self.sigma * float(self.rng.standard_normal())
		return to_bps(min(1.0, max(-1.0, a_hat)))


class NeuralEstimator:
	"""Trained policy; deterministic mode uses the mean, sampling mode draws â ~ N(mean, std)."""

	def __init__(self, weights: ModelWeights, deterministic: bool = True, seed: int = 0):
		self.weights = weights
		self.deterministic = deterministic
		self.seed = seed
		self.rng = make_rng(seed, "sampling")

	def reset(self) -> None:
		self.rng = make_rng(self.seed, "sampling")

	def estimate(self, obs: Observation) -> float:
		mean, std = mlp_forward(self.weights, obs)
		if self.deterministic:
			return to_bps(mean)
		return to_bps(min(1.0, max(-1.0, mean + std * float(self.rng.standard_normal()))))


@dataclass(slots=True)
class PolicySpec:
	"""Parsed --policy value; build() makes a fresh estimator per call."""

	kind: str
	param: Optional[float] = None
	path: Optional[str] = None
	weights: Optional[ModelWeights] = field(default=None, repr=False)

	@property
	def label(self) -> str:
		if self.kind == "weights":
			return f"weights:{Path(self.path).stem}"
		if self.param is not None:
			return f"{self.kind}:{self.param:g}"
		return self.kind

	def build(self, trace: Optional[Trace] = None, seed: int = 0, short_mi_ms: float = 60.0):
		if self.kind == "heuristic":
			base = HeuristicEstimator()
			return base if not self.param else NoisyEstimator(base, self.param, seed)
		if self.kind == "constant":
			return ConstantEstimator(self.param)
		if self.kind == "oracle":
			if trace is None:
				raise PolicyError("oracle policy needs the call's trace")
			return OracleEstimator(trace, short_mi_ms)
		return NeuralEstimator(self.weights)


def parse_policy_spec(spec: str) -> PolicySpec:
	"""Parse ``heuristic[:sigma]``, ``constant:<bps>``, ``oracle`` or ``weights:<path>``."""
	kind, _, arg = spec.strip().partition(":")
	if kind == "oracle" and not arg:
		return PolicySpec("oracle")
	if kind == "heuristic":
		return PolicySpec("heuristic", _float_arg(spec, arg) if arg else None)
	if kind == "constant":
		bps = _float_arg(spec, arg)
		ConstantEstimator(bps)
		return PolicySpec("constant", bps)
	if kind == "weights" and arg:
		return PolicySpec("weights", path=arg, weights=load_weights(Path(arg)))
	raise PolicyError(f"bad policy spec {spec!r} (heuristic[:sigma] | constant:<bps> | oracle | weights:<path>)")


def _float_arg(spec: str, arg: str) -> float:
	try:
		val = float(arg)
	except ValueError:
		raise PolicyError(f"bad number in policy spec {spec!r}") from None
	if not math.isfinite(val) or val < 0:
		raise PolicyError(f"policy spec {spec!r} needs a finite non-negative number")
	return val


# -------------------------------- Weight files -------------------------------
MAGIC = b"BWEW"
VERSION = 1
_PREFIX = struct.Struct("<4sII")


def _tensors(w: ModelWeights) -> list[tuple[str, np.ndarray]]:
	out = [("norm_mean", w.norm_mean), ("norm_std", w.norm_std)]
	for i, layer in enumerate(w.net.layers):
		out += [(f"layer{i}.W", layer.W), (f"layer{i}.b", layer.b)]
	return out


def save_weights(w: ModelWeights, path: Path) -> None:
	validate_weights(w)
	header = {
		"version": VERSION,
		"obs_dim": OBS_DIM,
		"std_floor": w.std_floor,
		"layers": [
			{"in": int(d.W.shape[0]), "out": int(d.W.shape[1]), "activation": d.activation} for d in w.net.layers
		],
		"tensors": [name for name, _ in _tensors(w)],
	}
	head = json.dumps(header, sort_keys=True).encode("utf-8")
	body = b"".join(np.ascontiguousarray(arr, dtype="<f4").tobytes() for _, arr in _tensors(w))
	atomic_write_bytes(Path(path), _PREFIX.pack(MAGIC, VERSION, len(head)) + head + body)


def _read_block(data: bytes, offset: int, shape: Sequence[int], what: str) -> tuple[np.ndarray, int]:
	count = int(np.prod(shape))
	end = offset + 4 * count
	if end > len(data):
		raise WeightsError(f"truncated weight file while reading {what}")
	arr = np.frombuffer(data, dtype="<f4", count=count, offset=offset).astype(np.float32).reshape(shape)
	return arr, end


def load_weights(path: Path) -> ModelWeights:
	try:
		data = Path(path).read_bytes()
	except OSError as e:
		raise WeightsError(f"cannot read weights {path}: {e}") from e
	if len(data) < _PREFIX.size:
		raise WeightsError(f"{path}: missing version tag")
	magic, version, head_len = _PREFIX.unpack_from(data)
	if magic != MAGIC:
		raise WeightsError(f"{path}: missing version tag (not a weight file)")
	if version != VERSION:
		raise WeightsError(f"{path}: unsupported weight file version {version}")
	try:
		header = json.loads(data[_PREFIX.size:_PREFIX.size + head_len].decode("utf-8"))
		layer_specs = [(int(s["in"]), int(s["out"]), str(s["activation"])) for s in header["layers"]]
		std_floor = float(header["std_floor"])
		obs_dim = int(header["obs_dim"])
	except (UnicodeDecodeError, json.JSONDecodeError, KeyError, TypeError, ValueError) as e:
		raise WeightsError(f"{path}: bad header ({e})") from e
	if obs_dim != OBS_DIM:
		raise WeightsError(f"{path}: observation width {obs_dim}, expected {OBS_DIM}")

	offset = _PREFIX.size + head_len
	mean, offset = _read_block(data, offset, (obs_dim,), "norm_mean")
	std, offset = _read_block(data, offset, (obs_dim,), "norm_std")
	layers = []
	for i, (n_in, n_out, act) in enumerate(layer_specs):
		W, offset = _read_block(data, offset, (n_in, n_out), f"layer{i}.W")
		b, offset = _read_block(data, offset, (n_out,), f"layer{i}.b")
		layers.append(Dense(W, b, act))
	if offset != len(data):
		raise WeightsError(f"{path}: {len(data) - offset} trailing bytes (shape mismatch)")
	return ModelWeights(mean, std, Mlp(layers), std_floor)
