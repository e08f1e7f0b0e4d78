"""Offline IQL training over call-trajectory datasets.

Networks (numpy, see nn.py): actor 150 -> h -> h -> 2, twin Q critics
151 -> h -> h -> 1 on [standardized obs, normalized action], V 150 -> h -> h -> 1,
all tanh, plus target copies of both Q critics.

One step, in this order:
	V     <- expectile regression (tau) of min(Q1_t, Q2_t)(s, a) on V(s)
	Q1,Q2 <- MSE to r + discount * (1 - done) * V(s')
	actor <- advantage-weighted regression, w = min(exp(beta * (Q_t - V)), clip),
	         loss = mean(w * -log N(a; mean, std))
	Q_t   <- rho * Q + (1 - rho) * Q_t

Observations are standardized with mean/std of the training split; those
stats travel inside the actor's ModelWeights.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from .config import IqlHyper, validate_iql_hyper
from .dataio import CallTrajectory, TransitionBatch, batches, build_transitions
from .errors import SchemaError, TrainingError
from .features import OBS_DIM
from .nn import Adam, Mlp, init_mlp
from .policy import ModelWeights, head_outputs, normalize_actions, save_weights, softplus
from .utils import atomic_write_text, debug_log, make_rng, warn_log

__all__ = [
	"compose_reward",
	"expectile_loss",
	"awr_weights",
	"bellman_target",
	"v_loss_and_grad",
	"q_loss_and_grad",
	"actor_loss_and_grad",
	"CriticWeights",
	"IqlLearner",
	"init_learner",
	"iql_step",
	"TrainLogRow",
	"TrainResult",
	"train",
	"train_transitions",
	"write_training_log",
	"grad_check",
]

_HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)


def compose_reward(r_audio: float, r_video: float, mode: str = "scaled") -> float:
	"""Single training reward from the two MOS-scale rewards (sum in [0, 10], scaled in [0, 1])."""
	for name, r in (("r_audio", r_audio), ("r_video", r_video)):
		if not (0.0 <= r <= 5.0):
			raise SchemaError(f"{name} = {r} outside [0, 5]")
	total = r_audio + r_video
	if mode == "sum":
		return total
	if mode == "scaled":
		return total / 10.0
	raise SchemaError(f"unknown reward mode: {mode}")


def expectile_loss(u: np.ndarray, tau: float) -> float:
	u = np.asarray(u)
	w = np.where(u < 0, 1.0 - tau, tau)
	return float(np.mean(w * u * u))


def awr_weights(adv: np.ndarray, beta: float, clip: float) -> np.ndarray:
	"""exp(beta * adv) capped at clip; computed in float64 so weights stay > 0."""
	z = np.clip(beta * np.asarray(adv, dtype=np.float64), -700.0, math.log(clip))
	return np.minimum(np.exp(z), clip)


def bellman_target(reward: np.ndarray, done: np.ndarray, v_next: np.ndarray, discount: float) -> np.ndarray:
	return reward + discount * (1.0 - done.astype(reward.dtype)) * v_next


# ------------------------------ Losses and grads ------------------------------
def v_loss_and_grad(v: Mlp, x: np.ndarray, q_target: np.ndarray, tau: float) -> tuple[float, list[np.ndarray]]:
	pred, cache = v.forward(x)
	u = q_target - pred[:, 0]
	w = np.where(u < 0, 1.0 - tau, tau).astype(u.dtype)
	loss = float(np.mean(w * u * u))
	d_pred = (-2.0 * w * u / len(u))[:, None].astype(pred.dtype)
	grads, _ = v.backward(cache, d_pred)
	return loss, grads


def q_loss_and_grad(q: Mlp, xa: np.ndarray, target: np.ndarray) -> tuple[float, list[np.ndarray], np.ndarray]:
	pred, cache = q.forward(xa)
	err = pred[:, 0] - target
	loss = float(np.mean(err * err))
	grads, _ = q.backward(cache, (2.0 * err / len(err))[:, None].astype(pred.dtype))
	return loss, grads, pred[:, 0]


def actor_loss_and_grad(
	actor: Mlp, x: np.ndarray, a: np.ndarray, w: np.ndarray, std_floor: float
) -> tuple[float, list[np.ndarray]]:
	z, cache = actor.forward(x)
	mean, std = head_outputs(z, std_floor)
	diff = a - mean
	nll = 0.5 * (diff / std) ** 2 + np.log(std) + _HALF_LOG_2PI
	loss = float(np.mean(w * nll))
	n = len(a)
	d_mean = w * (-diff / std ** 2) / n
	d_std = w * (1.0 / std - diff ** 2 / std ** 3) / n
	active = softplus(z[:, 1]) > std_floor
	d_z = np.stack([d_mean * (1.0 - mean ** 2), d_std * active / (1.0 + np.exp(-z[:, 1]))], axis=1)
	grads, _ = actor.backward(cache, d_z.astype(z.dtype))
	return loss, grads


# -------------------------------- Learner state -------------------------------
@dataclass(slots=True)
class CriticWeights:
	q1: Mlp
	q2: Mlp
	v: Mlp
	q1_target: Mlp
	q2_target: Mlp
	q1_opt: Adam
	q2_opt: Adam
	v_opt: Adam


@dataclass(slots=True)
class IqlLearner:
	actor: ModelWeights
	actor_opt: Adam
	critics: CriticWeights


def _norm_stats(obs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
	mean = obs.mean(axis=0)
	std = obs.std(axis=0)
	std = np.where(std > 1e-6, std, 1.0)
	return mean.astype(np.float32), std.astype(np.float32)


def init_learner(
	obs: np.ndarray, hyper: IqlHyper, dtype=np.float32
) -> IqlLearner:
	"""Fresh networks; norm stats from ``obs`` (the training split)."""
	rng = make_rng(hyper.seed, "init")
	h = hyper.hidden
	mean, std = _norm_stats(obs)
	actor_net = init_mlp([OBS_DIM, h, h, 2], ["tanh", "tanh", "identity"], rng, dtype)
	q1 = init_mlp([OBS_DIM + 1, h, h, 1], ["tanh", "tanh", "identity"], rng, dtype)
	q2 = init_mlp([OBS_DIM + 1, h, h, 1], ["tanh", "tanh", "identity"], rng, dtype)
	v = init_mlp([OBS_DIM, h, h, 1], ["tanh", "tanh", "identity"], rng, dtype)
	actor = ModelWeights(mean, std, actor_net, hyper.std_floor)
	critics = CriticWeights(
		q1=q1,
		q2=q2,
		v=v,
		q1_target=q1.copy(),
		q2_target=q2.copy(),
		q1_opt=Adam(q1.params(), hyper.lr),
		q2_opt=Adam(q2.params(), hyper.lr),
		v_opt=Adam(v.params(), hyper.lr),
	)
	return IqlLearner(actor, Adam(actor_net.params(), hyper.lr), critics)


def iql_step(learner: IqlLearner, batch: TransitionBatch, hyper: IqlHyper, step: int = 0) -> dict[str, float]:
	"""One V, Q, actor update plus target smoothing. Raises TrainingError on a non-finite loss."""
	c = learner.critics
	dtype = learner.actor.net.dtype
	x = learner.actor.standardize(batch.obs)
	xn = learner.actor.standardize(batch.next_obs)
	a = batch.action.astype(dtype)
	xa = np.concatenate([x, a[:, None]], axis=1)
	r = batch.reward.astype(dtype)

	q_t = np.minimum(c.q1_target(xa)[:, 0], c.q2_target(xa)[:, 0])

	v_loss, v_grads = v_loss_and_grad(c.v, x, q_t, hyper.expectile)
	_check(step, {"v": v_loss}, batch)
	c.v_opt.step(v_grads)

	target = bellman_target(r, batch.done, c.v(xn)[:, 0], hyper.discount)
	q1_loss, q1_grads, _ = q_loss_and_grad(c.q1, xa, target)
	q2_loss, q2_grads, _ = q_loss_and_grad(c.q2, xa, target)
	q_loss = 0.5 * (q1_loss + q2_loss)
	_check(step, {"v": v_loss, "q": q_loss}, batch)
	c.q1_opt.step(q1_grads)
	c.q2_opt.step(q2_grads)

	w = awr_weights(q_t - c.v(x)[:, 0], hyper.temperature, hyper.awr_clip)
	actor_loss, actor_grads = actor_loss_and_grad(learner.actor.net, x, a, w.astype(dtype), learner.actor.std_floor)
	losses = {"v": v_loss, "q": q_loss, "actor": actor_loss}
	_check(step, losses, batch)
	learner.actor_opt.step(actor_grads)

	c.q1_target.soft_update(c.q1, hyper.target_smoothing)
	c.q2_target.soft_update(c.q2, hyper.target_smoothing)
	losses["awr_weight"] = float(w.mean())
	return losses


def _check(step: int, losses: dict[str, float], batch: TransitionBatch) -> None:
	if all(math.isfinite(v) for v in losses.values()):
		return
	snapshot = {
		"step": step,
		"losses": {k: repr(v) for k, v in losses.items()},
		"batch": {
			"size": len(batch),
			"reward_mean": float(np.mean(batch.reward)),
			"action_min": float(np.min(batch.action)),
			"action_max": float(np.max(batch.action)),
			"obs_abs_max": float(np.max(np.abs(batch.obs))),
		},
	}
	raise TrainingError(f"non-finite loss at step {step}: {snapshot['losses']}", snapshot)


# ----------------------------------- Training ---------------------------------
@dataclass(slots=True)
class TrainLogRow:
	step: int
	v_loss: float
	q_loss: float
	actor_loss: float
	mean_awr_weight: float


@dataclass(slots=True)
class TrainResult:
	weights: ModelWeights
	log: list[TrainLogRow] = field(default_factory=list)


def train_transitions(
	data: TransitionBatch,
	hyper: IqlHyper,
	*,
	dtype=np.float32,
	checkpoint_dir: Optional[Path] = None,
	snapshot_dir: Optional[Path] = None,
	on_step: Optional[Callable[[TrainLogRow], None]] = None,
) -> TrainResult:
	validate_iql_hyper(hyper)
	if len(data) == 0:
		raise TrainingError("no transitions to train on")
	batch_size = hyper.batch_size
	if batch_size > len(data):
		warn_log(f"batch size {batch_size} exceeds {len(data)} transitions; using {len(data)}")
		batch_size = len(data)
	stream = batches(data, batch_size, hyper.seed)
	learner = init_learner(data.obs, hyper, dtype)
	result = TrainResult(learner.actor)
	if hyper.steps == 0:
		return result
	for step in range(1, hyper.steps + 1):
		try:
			losses = iql_step(learner, next(stream), hyper, step)
		except TrainingError as e:
			if snapshot_dir is not None:
				path = Path(snapshot_dir) / "divergence_snapshot.json"
				atomic_write_text(path, json.dumps(e.snapshot, indent=2, sort_keys=True) + "\n")
				warn_log(f"training diverged; snapshot written to {path}")
			raise
		row = TrainLogRow(step, losses["v"], losses["q"], losses["actor"], losses["awr_weight"])
		result.log.append(row)
		if on_step is not None:
			on_step(row)
		if checkpoint_dir is not None and hyper.checkpoint_every and step % hyper.checkpoint_every == 0:
			save_weights(learner.actor, Path(checkpoint_dir) / f"checkpoint_{step:07d}.bwe")
			debug_log(f"checkpoint at step {step}")
	return result


def train(
	dataset: Sequence[CallTrajectory],
	hyper: IqlHyper,
	reward_mode: Optional[str] = None,
	**kwargs,
) -> TrainResult:
	"""Build transitions (rewards composed per reward_mode) and run IQL."""
	if not dataset:
		raise TrainingError("empty dataset")
	mode = reward_mode or hyper.reward_mode
	data = build_transitions(dataset, lambda ra, rv: compose_reward(ra, rv, mode), normalize_actions)
	debug_log(f"training on {len(dataset)} calls, {len(data)} transitions, reward mode {mode}")
	return train_transitions(data, hyper, **kwargs)


def write_training_log(rows: Sequence[TrainLogRow], path: Path) -> None:
	path = Path(path)
	path.parent.mkdir(parents=True, exist_ok=True)
	with path.open("w", newline="", encoding="utf-8") as fh:
		writer = csv.writer(fh, lineterminator="\n")
		writer.writerow(["step", "v_loss", "q_loss", "actor_loss", "mean_awr_weight"])
		for row in rows:
			d = asdict(row)
			writer.writerow([d["step"]] + [repr(float(d[k])) for k in ("v_loss", "q_loss", "actor_loss", "mean_awr_weight")])


# --------------------------------- Grad check ---------------------------------
def grad_check(
	params: list[np.ndarray],
	loss_fn: Callable[[], float],
	analytic: list[np.ndarray],
	rng: np.random.Generator,
	n_params: int = 200,
	h: float = 1e-5,
) -> float:
	"""Max relative error between analytic and central-difference gradients.

	Samples n_params entries across all tensors (proportional to size) and
	perturbs them in place. Use float64 networks.
	"""
	sizes = np.array([p.size for p in params], dtype=np.float64)
	which = rng.choice(len(params), size=n_params, p=sizes / sizes.sum())
	worst = 0.0
	for k in which:
		p = params[k].reshape(-1)
		i = int(rng.integers(p.size))
		orig = p[i]
		p[i] = orig + h
		plus = loss_fn()
		p[i] = orig - h
		minus = loss_fn()
		p[i] = orig
		num = (plus - minus) / (2.0 * h)
		ana = float(analytic[k].reshape(-1)[i])
		worst = max(worst, abs(ana - num) / max(abs(ana) + abs(num), 1e-6))
	return worst
