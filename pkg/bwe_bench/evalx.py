"""Evaluation layer: accuracy metrics, proxy rewards, call score and reports.

 - mse / e_plus / e_minus over (prediction, ground-truth capacity) records
 - Proxy audio/video rewards computed from emulated network outcomes
 - Leg score and suite score S with a seeded bootstrap 95% CI
 - Policy ranking with CI-overlap ties
 - Per-family CSV tables, ranking.csv and boxplot images

Proxy rewards are NOT the challenge's MOS models. They are monotone stand-ins:

	s(x; mid, width) = (1 + exp(-mid/width)) / (1 + exp((x - mid)/width))   (s(0) = 1)
	r_audio = 5 * (1 - loss)^4 * s(queuing_delay; 150, 40)
	r_video = 5 * util^0.5 * (1 - loss)^2 * s(queuing_delay; 200, 50)
	util    = min(1, receiving_rate / capacity)       (ground truth known)
	        = min(1, receiving_rate / reference_rate) (otherwise)

An MI in which nothing was received scores (0, 0). Absolute scores are only
comparable across runs of this workbench.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Optional, Sequence

import numpy as np

from .config import ProxyRewardConfig
from .dataio import CallTrajectory, NetworkOutcome
from .errors import MetricError
from .utils import debug_log, make_rng

__all__ = [
	"StepRecord",
	"LegScore",
	"records_from",
	"mse",
	"e_plus",
	"e_minus",
	"relative_errors",
	"audio_reward",
	"video_reward",
	"proxy_rewards",
	"leg_score",
	"score",
	"RankRow",
	"rank_policies",
	"report",
	"BOXPLOT_METRICS",
]

MBPS2 = 1e12
MOS_MAX = 5.0


@dataclass(slots=True)
class StepRecord:
	a_bps: float
	c_bps: float
	outcome: Optional[NetworkOutcome] = None

	def __post_init__(self):
		if not (self.a_bps > 0 and self.c_bps > 0):
			raise MetricError(f"records need positive prediction and capacity (got {self.a_bps}, {self.c_bps})")


@dataclass(slots=True)
class LegScore:
	call_id: str
	mean_audio: float
	mean_video: float
	steps: int

	@property
	def score(self) -> float:
		return self.mean_audio + self.mean_video


def records_from(traj: CallTrajectory) -> list[StepRecord]:
	if not traj.has_ground_truth:
		raise MetricError(f"call {traj.call_id} has no ground-truth capacity")
	return [StepRecord(s.bandwidth_prediction_bps, s.true_capacity_bps, s.outcome) for s in traj.steps]


# ---------------------------------- Accuracy ---------------------------------
def _arrays(records: Sequence[StepRecord]) -> tuple[np.ndarray, np.ndarray]:
	if not records:
		raise MetricError("no records")
	a = np.fromiter((r.a_bps for r in records), dtype=np.float64, count=len(records))
	c = np.fromiter((r.c_bps for r in records), dtype=np.float64, count=len(records))
	return a, c


def mse(records: Sequence[StepRecord], unit: str = "bps2") -> float:
	"""Mean squared error of predictions vs capacity, in bps² or Mbps²."""
	if unit not in {"bps2", "mbps2"}:
		raise MetricError(f"unknown mse unit: {unit}")
	a, c = _arrays(records)
	val = float(np.mean((a - c) ** 2))
	return val / MBPS2 if unit == "mbps2" else val


def relative_errors(a: np.ndarray, c: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
	"""Per-sample (over, under) relative errors; at most one of the two is non-zero."""
	rel = (a - c) / c
	return np.maximum(0.0, rel), np.maximum(0.0, -rel)


def e_plus(records: Sequence[StepRecord]) -> float:
	"""Overestimation rate: mean of max(0, (a - c) / c)."""
	over, _ = relative_errors(*_arrays(records))
	return float(np.mean(over))


def e_minus(records: Sequence[StepRecord]) -> float:
	"""Underestimation rate: mean of max(0, (c - a) / c)."""
	_, under = relative_errors(*_arrays(records))
	return float(np.mean(under))


# ------------------------------- Proxy rewards -------------------------------
def _delay_penalty(x: float, mid: float, width: float) -> float:
	val = (1.0 + math.exp(-mid / width)) / (1.0 + math.exp(min((x - mid) / width, 700.0)))
	return min(1.0, max(0.0, val))


def audio_reward(loss_ratio: float, queuing_delay_ms: float, cfg: ProxyRewardConfig) -> float:
	loss = min(1.0, max(0.0, loss_ratio))
	val = MOS_MAX * (1.0 - loss) ** cfg.audio_loss_power
	val *= _delay_penalty(max(0.0, queuing_delay_ms), cfg.audio_delay_mid_ms, cfg.audio_delay_width_ms)
	return min(MOS_MAX, max(0.0, val))


def video_reward(
	receiving_rate_bps: float,
	capacity_bps: Optional[float],
	loss_ratio: float,
	queuing_delay_ms: float,
	cfg: ProxyRewardConfig,
) -> float:
	ref = capacity_bps if capacity_bps else cfg.reference_rate_bps
	util = min(1.0, max(0.0, receiving_rate_bps / ref))
	loss = min(1.0, max(0.0, loss_ratio))
	val = MOS_MAX * util ** cfg.video_util_power * (1.0 - loss) ** cfg.video_loss_power
	val *= _delay_penalty(max(0.0, queuing_delay_ms), cfg.video_delay_mid_ms, cfg.video_delay_width_ms)
	return min(MOS_MAX, max(0.0, val))


def proxy_rewards(leg: CallTrajectory, cfg: Optional[ProxyRewardConfig] = None) -> list[tuple[float, float]]:
	"""Per-step (r_audio, r_video) from the recorded network outcomes."""
	cfg = cfg or ProxyRewardConfig()
	if leg.steps and not leg.has_outcomes:
		raise MetricError(f"call {leg.call_id} has no network outcomes")
	out: list[tuple[float, float]] = []
	for s in leg.steps:
		o = s.outcome
		if o.receiving_rate_bps <= 0:
			out.append((0.0, 0.0))
			continue
		out.append(
			(
				audio_reward(o.loss_ratio, o.queuing_delay_ms, cfg),
				video_reward(o.receiving_rate_bps, s.true_capacity_bps, o.loss_ratio, o.queuing_delay_ms, cfg),
			)
		)
	return out


# ----------------------------------- Score -----------------------------------
def leg_score(traj: CallTrajectory) -> LegScore:
	if not traj.steps:
		raise MetricError(f"call {traj.call_id} has no steps")
	audio = np.array([s.r_audio for s in traj.steps], dtype=np.float64)
	video = np.array([s.r_video for s in traj.steps], dtype=np.float64)
	return LegScore(traj.call_id, float(audio.mean()), float(video.mean()), len(traj.steps))


def score(legs: Sequence[LegScore], resamples: int = 10_000, seed: int = 0) -> tuple[float, tuple[float, float]]:
	"""Suite score S (mean of per-leg means) and a percentile-bootstrap 95% CI.

	Leg means are sorted before resampling so the CI does not depend on leg
	order. With a single leg the CI collapses to (S, S).
	"""
	if not legs:
		raise MetricError("no legs to score")
	vals = np.sort(np.array([leg.score for leg in legs], dtype=np.float64))
	s = float(vals.mean())
	if len(vals) < 2:
		debug_log("single leg: confidence interval collapsed")
		return s, (s, s)
	rng = make_rng(seed, "bootstrap")
	idx = rng.integers(0, len(vals), size=(resamples, len(vals)))
	means = vals[idx].mean(axis=1)
	lo, hi = np.percentile(means, [2.5, 97.5])
	return s, (float(lo), float(hi))


@dataclass(slots=True)
class RankRow:
	rank: int
	policy: str
	score: float
	ci_low: float
	ci_high: float
	tie: bool = False


def rank_policies(scores: Mapping[str, tuple[float, tuple[float, float]]]) -> list[RankRow]:
	"""Order by S (desc); a policy whose CI overlaps the one above shares its rank."""
	ordered = sorted(scores.items(), key=lambda kv: (-kv[1][0], kv[0]))
	rows: list[RankRow] = []
	for i, (policy, (s, (lo, hi))) in enumerate(ordered):
		row = RankRow(i + 1, policy, s, lo, hi)
		if rows:
			prev = rows[-1]
			if hi >= prev.ci_low and lo <= prev.ci_high:
				row.rank = prev.rank
				row.tie = prev.tie = True
		rows.append(row)
	return rows


# ---------------------------------- Report -----------------------------------
BOXPLOT_METRICS = {
	"receiving_rate": ("Receiving rate (Mbps)", lambda s: s.outcome.receiving_rate_bps / 1e6),
	"delay": ("Delay (ms)", lambda s: s.outcome.delay_ms),
	"loss": ("Loss ratio", lambda s: s.outcome.loss_ratio),
	"audio_reward": ("Audio reward", lambda s: s.r_audio),
	"video_reward": ("Video reward", lambda s: s.r_video),
}


def _fmt(x: float) -> str:
	return repr(float(x))


def _family_rows(
	by_policy: Mapping[str, Sequence[CallTrajectory]], unit: str, resamples: int, seed: int
) -> list[list[str]]:
	rows = []
	for policy in sorted(by_policy):
		legs = by_policy[policy]
		records = [r for t in legs if t.has_ground_truth for r in records_from(t)]
		s, (lo, hi) = score([leg_score(t) for t in legs], resamples, seed)
		if records:
			acc = [_fmt(mse(records, unit)), _fmt(e_plus(records)), _fmt(e_minus(records))]
		else:
			acc = ["", "", ""]
		rows.append([policy, *acc, _fmt(s), _fmt(lo), _fmt(hi), str(len(legs))])
	return rows


def _write_csv(path: Path, header: Sequence[str], rows: Sequence[Sequence[str]]) -> None:
	with path.open("w", newline="", encoding="utf-8") as fh:
		writer = csv.writer(fh, lineterminator="\n")
		writer.writerow(header)
		writer.writerows(rows)


def _boxplot(path: Path, family: str, metric: str, by_policy: Mapping[str, Sequence[CallTrajectory]]) -> bool:
	import matplotlib

	matplotlib.use("Agg")
	import matplotlib.pyplot as plt

	label, getter = BOXPLOT_METRICS[metric]
	policies = sorted(by_policy)
	data = []
	for p in policies:
		steps = [s for t in by_policy[p] for s in t.steps if metric.endswith("reward") or s.outcome is not None]
		data.append([getter(s) for s in steps])
	if not any(data):
		return False
	fig, ax = plt.subplots(figsize=(max(4.0, 1.2 * len(policies) + 2), 4))
	ax.boxplot(data, whis=(10, 90), showfliers=False)
	ax.set_xticks(range(1, len(policies) + 1))
	ax.set_xticklabels(policies, rotation=20)
	ax.set_ylabel(label)
	ax.set_title(f"{family}: {label}")
	ax.grid(True, alpha=0.3)
	fig.tight_layout()
	fig.savefig(str(path), dpi=120, metadata={"Software": None})
	plt.close(fig)
	return True


def report(
	results: Mapping[str, Mapping[str, Sequence[CallTrajectory]]],
	outdir: Path,
	*,
	unit: str = "mbps2",
	resamples: int = 10_000,
	seed: int = 0,
	plots: bool = True,
) -> list[Path]:
	"""Write per-family tables, the overall ranking and boxplots.

	results: {family: {policy: [trajectories]}}. Returns the written paths.
	"""
	if not results or not any(results.values()):
		raise MetricError("no results to report")
	out = Path(outdir)
	written: list[Path] = []
	header = ["policy", f"mse_{unit}", "e_plus", "e_minus", "score", "ci_low", "ci_high", "calls"]
	try:
		out.mkdir(parents=True, exist_ok=True)
		for family in sorted(results):
			path = out / f"{family}.csv"
			_write_csv(path, header, _family_rows(results[family], unit, resamples, seed))
			written.append(path)
			if plots:
				for metric in BOXPLOT_METRICS:
					img = out / f"{family}_{metric}.png"
					if _boxplot(img, family, metric, results[family]):
						written.append(img)

		overall: dict[str, list[LegScore]] = {}
		for family in results:
			for policy, legs in results[family].items():
				overall.setdefault(policy, []).extend(leg_score(t) for t in legs)
		ranking = rank_policies({p: score(legs, resamples, seed) for p, legs in overall.items()})
		path = out / "ranking.csv"
		_write_csv(
			path,
			["rank", "policy", "score", "ci_low", "ci_high"],
			[
				[f"{r.rank}{' (tie)' if r.tie else ''}", r.policy, _fmt(r.score), _fmt(r.ci_low), _fmt(r.ci_high)]
				for r in ranking
			],
		)
		written.append(path)
	except OSError as e:
		raise MetricError(f"cannot write report to {out}: {e}") from e
	return written
