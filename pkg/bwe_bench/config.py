"""Configuration models, loading, merging and persistence utilities.

 - Emulator configs (media source, link), feature pipeline toggles, proxy
   reward coefficients, IQL hyper-parameters with named presets
 - Trace family ranges and scenario suites loaded from data/trace_families.json
 - CLI merge function (argparse Namespace or plain mapping)
 - Effective-config materialization and persistence for reproducible runs

Every validator raises :class:`~bwe_bench.errors.ConfigError`.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Mapping, Optional

from .errors import ConfigError
from .utils import atomic_write_text

__all__ = [
	"MediaSourceConfig",
	"LinkConfig",
	"FeatureConfig",
	"ProxyRewardConfig",
	"IqlHyper",
	"PRESETS",
	"preset",
	"FamilyRange",
	"SuiteSpec",
	"RunConfig",
	"validate_media_config",
	"validate_link_config",
	"validate_feature_config",
	"validate_iql_hyper",
	"validate_run_config",
	"default_families_path",
	"load_family_ranges",
	"load_suites",
	"default_output_dir",
	"merge_cli_args",
	"effective_config",
	"save_effective_config",
	"load_effective_config",
]

OUTPUT_DIR_ENV = "BWE_BENCH_OUT"


# ------------------------------- Emulator -----------------------------------
@dataclass(slots=True)
class MediaSourceConfig:
	"""Sender model. Audio is constant-rate; video and probes split the rest."""

	audio_bps: float = 25_000.0
	audio_ptime_ms: float = 20.0
	video_frame_interval_ms: float = 1000.0 / 30.0
	video_packet_mtu_bytes: int = 1250
	probe_fraction: float = 0.05
	probe_packet_bytes: int = 500
	min_video_packet_bytes: int = 100
	video_size_jitter: float = 0.0  # relative std of per-frame size


def validate_media_config(cfg: MediaSourceConfig) -> None:
	for name in ("audio_bps", "audio_ptime_ms", "video_frame_interval_ms"):
		if not getattr(cfg, name) > 0:
			raise ConfigError(f"{name} must be > 0")
	if cfg.video_packet_mtu_bytes <= 0:
		raise ConfigError("video_packet_mtu_bytes must be > 0")
	if not (0.0 <= cfg.probe_fraction <= 0.2):
		raise ConfigError("probe_fraction must be within [0, 0.2]")
	if not (0 < cfg.probe_packet_bytes <= cfg.video_packet_mtu_bytes):
		raise ConfigError("probe_packet_bytes must be in (0, mtu]")
	if not (0 < cfg.min_video_packet_bytes <= cfg.video_packet_mtu_bytes):
		raise ConfigError("min_video_packet_bytes must be in (0, mtu]")
	if not (0.0 <= cfg.video_size_jitter < 1.0):
		raise ConfigError("video_size_jitter must be within [0, 1)")


@dataclass(slots=True)
class LinkConfig:
	propagation_delay_ms: float = 50.0
	max_queue_ms: float = 500.0


def validate_link_config(cfg: LinkConfig) -> None:
	if cfg.propagation_delay_ms < 0:
		raise ConfigError("propagation_delay_ms must be >= 0")
	if cfg.max_queue_ms <= 0:
		raise ConfigError("max_queue_ms must be > 0")


# ------------------------------- Features -----------------------------------
@dataclass(slots=True)
class FeatureConfig:
	"""Monitor-interval pipeline knobs.

	empty_mi: "zeros" reports all 15 features as 0 for an MI without packets;
	"literal" carries the running minimum delay and reports -base_delay_ms
	for the absolute delay feature.
	"""

	short_mi_ms: float = 60.0
	long_mi_ms: float = 600.0
	base_delay_ms: float = 200.0
	reorder_window_ms: float = 400.0
	empty_mi: str = "zeros"


def validate_feature_config(cfg: FeatureConfig) -> None:
	if cfg.empty_mi not in {"zeros", "literal"}:
		raise ConfigError("empty_mi must be 'zeros' or 'literal'")
	if cfg.short_mi_ms <= 0 or cfg.long_mi_ms <= 0:
		raise ConfigError("monitor interval lengths must be > 0")
	ratio = cfg.long_mi_ms / cfg.short_mi_ms
	if abs(ratio - round(ratio)) > 1e-9:
		raise ConfigError("long_mi_ms must be a whole multiple of short_mi_ms")
	if cfg.reorder_window_ms < 0:
		raise ConfigError("reorder_window_ms must be >= 0")


# ------------------------------- Rewards ------------------------------------
@dataclass(slots=True)
class ProxyRewardConfig:
	"""Coefficients of the proxy audio/video rewards (NOT the challenge MOS models)."""

	audio_loss_power: float = 4.0
	audio_delay_mid_ms: float = 150.0
	audio_delay_width_ms: float = 40.0
	video_loss_power: float = 2.0
	video_util_power: float = 0.5
	video_delay_mid_ms: float = 200.0
	video_delay_width_ms: float = 50.0
	reference_rate_bps: float = 2_000_000.0


# ---------------------------------- IQL -------------------------------------
@dataclass(slots=True)
class IqlHyper:
	discount: float = 0.99
	lr: float = 3e-4
	batch_size: int = 256
	temperature: float = 8.0
	expectile: float = 0.7
	target_smoothing: float = 0.005
	steps: int = 50_000
	seed: int = 0
	awr_clip: float = 100.0
	std_floor: float = 1e-3
	hidden: int = 128
	reward_mode: str = "scaled"
	checkpoint_every: int = 0


PRESETS: dict[str, IqlHyper] = {
	"paper": IqlHyper(batch_size=16384),
	"desk": IqlHyper(batch_size=256),
}


def preset(name: str, **overrides: Any) -> IqlHyper:
	if name not in PRESETS:
		raise ConfigError(f"unknown preset: {name} (known: {', '.join(sorted(PRESETS))})")
	hyper = replace(PRESETS[name], **{k: v for k, v in overrides.items() if v is not None})
	validate_iql_hyper(hyper)
	return hyper


def validate_iql_hyper(h: IqlHyper) -> None:
	if not (0.0 < h.expectile < 1.0):
		raise ConfigError("expectile must be in (0, 1)")
	if not (0.0 <= h.discount < 1.0):
		raise ConfigError("discount must be in [0, 1)")
	if not h.temperature > 0:
		raise ConfigError("temperature must be > 0")
	if not h.lr > 0:
		raise ConfigError("lr must be > 0")
	if h.batch_size < 1:
		raise ConfigError("batch_size must be >= 1")
	if h.steps < 0:
		raise ConfigError("steps must be >= 0")
	if not (0.0 < h.target_smoothing <= 1.0):
		raise ConfigError("target_smoothing must be in (0, 1]")
	if h.reward_mode not in {"sum", "scaled"}:
		raise ConfigError("reward_mode must be 'sum' or 'scaled'")
	if h.awr_clip <= 0 or h.std_floor <= 0 or h.hidden < 1:
		raise ConfigError("awr_clip, std_floor and hidden must be positive")


# -------------------------- Trace families & suites --------------------------
@dataclass(slots=True)
class FamilyRange:
	capacity_bps: tuple[float, float]
	segment_ms: Optional[tuple[float, float]] = None
	p_enter: Optional[tuple[float, float]] = None
	mean_burst: Optional[tuple[float, float]] = None


@dataclass(slots=True)
class SuiteSpec:
	name: str
	repeats: int
	scenarios: dict[str, list[int]] = field(default_factory=dict)

	def scenario_count(self) -> int:
		return sum(len(seeds) for seeds in self.scenarios.values())


def _project_root() -> Path:
	# bwe_bench/config.py -> bwe_bench -> project root
	return Path(__file__).resolve().parent.parent


def default_families_path() -> Path:
	return _project_root() / "data" / "trace_families.json"


def _pair(raw: Any, what: str) -> tuple[float, float]:
	if not isinstance(raw, (list, tuple)) or len(raw) != 2:
		raise ConfigError(f"{what} must be a [low, high] pair")
	lo, hi = float(raw[0]), float(raw[1])
	if not (math.isfinite(lo) and math.isfinite(hi)) or lo > hi:
		raise ConfigError(f"{what} must satisfy low <= high")
	return lo, hi


def _read_families_file(path: Optional[Path]) -> dict[str, Any]:
	p = path or default_families_path()
	try:
		raw = json.loads(p.read_text(encoding="utf-8"))
	except (OSError, json.JSONDecodeError) as e:
		raise ConfigError(f"cannot read trace family config {p}: {e}") from e
	if not isinstance(raw, dict):
		raise ConfigError(f"trace family config {p} must be a JSON object")
	return raw


def load_family_ranges(path: Optional[Path] = None) -> tuple[tuple[float, float], dict[str, FamilyRange]]:
	"""Return ((min_bps, max_bps) policy limits, {family: FamilyRange})."""
	raw = _read_families_file(path)
	limits = _pair(raw.get("capacity_limits_bps", [10_000, 8_000_000]), "capacity_limits_bps")
	out: dict[str, FamilyRange] = {}
	for name, spec in (raw.get("families") or {}).items():
		if not isinstance(spec, dict) or "capacity_bps" not in spec:
			raise ConfigError(f"family {name}: capacity_bps missing")
		fr = FamilyRange(
			capacity_bps=_pair(spec["capacity_bps"], f"{name}.capacity_bps"),
			segment_ms=_pair(spec["segment_ms"], f"{name}.segment_ms") if "segment_ms" in spec else None,
			p_enter=_pair(spec["p_enter"], f"{name}.p_enter") if "p_enter" in spec else None,
			mean_burst=_pair(spec["mean_burst"], f"{name}.mean_burst") if "mean_burst" in spec else None,
		)
		if fr.capacity_bps[0] < limits[0] or fr.capacity_bps[1] > limits[1]:
			raise ConfigError(f"family {name}: capacity range outside policy limits {limits}")
		if fr.segment_ms is not None and fr.segment_ms[0] <= 0:
			raise ConfigError(f"family {name}: segment_ms must be positive")
		if fr.mean_burst is not None and fr.mean_burst[0] < 1.0:
			raise ConfigError(f"family {name}: mean_burst must be >= 1")
		out[name] = fr
	return limits, out


def load_suites(path: Optional[Path] = None) -> dict[str, SuiteSpec]:
	raw = _read_families_file(path)
	out: dict[str, SuiteSpec] = {}
	for name, spec in (raw.get("suites") or {}).items():
		repeats = int(spec.get("repeats", 1))
		if repeats < 1:
			raise ConfigError(f"suite {name}: repeats must be >= 1")
		scenarios = {fam: [int(s) for s in seeds] for fam, seeds in (spec.get("scenarios") or {}).items()}
		out[name] = SuiteSpec(name=name, repeats=repeats, scenarios=scenarios)
	return out


# ------------------------------- Run config ---------------------------------
@dataclass(slots=True)
class RunConfig:
	"""Everything a CLI subcommand needs; all defaults materialized."""

	command: str = "simulate"
	family: Optional[str] = None
	suite: Optional[str] = None
	repeats: Optional[int] = None
	policies: list[str] = field(default_factory=list)
	seed: int = 0
	duration_ms: float = 120_000.0
	out_dir: str = ""
	jobs: int = 1
	dataset_dir: Optional[str] = None
	preset_name: str = "desk"
	dump_mi: bool = False
	media: MediaSourceConfig = field(default_factory=MediaSourceConfig)
	link: LinkConfig = field(default_factory=LinkConfig)
	features: FeatureConfig = field(default_factory=FeatureConfig)
	reward: ProxyRewardConfig = field(default_factory=ProxyRewardConfig)
	hyper: IqlHyper = field(default_factory=IqlHyper)


def default_output_dir() -> str:
	return os.environ.get(OUTPUT_DIR_ENV) or str(Path.cwd() / "bwe_out")


def validate_run_config(cfg: RunConfig) -> None:
	"""Raise ConfigError if cfg is invalid for its command.

	Rules:
	  * simulate: exactly one policy spec; exactly one of family / suite.
	  * evaluate: at least one policy.
	  * train: dataset_dir set.
	  * durations >= one long MI; jobs >= 1.
	"""
	if cfg.command == "simulate" and len(cfg.policies) != 1:
		raise ConfigError("simulate needs exactly one --policy")
	if cfg.command == "evaluate" and not cfg.policies:
		raise ConfigError("evaluate needs at least one --policy")
	if cfg.command in {"simulate", "traces", "evaluate"} and (cfg.family is None) == (cfg.suite is None):
		raise ConfigError("specify exactly one of --family or --suite")
	if cfg.command == "train" and not cfg.dataset_dir:
		raise ConfigError("train needs --dataset")
	if cfg.duration_ms < cfg.features.long_mi_ms:
		raise ConfigError(f"duration_ms must be >= {cfg.features.long_mi_ms:g}")
	if cfg.jobs < 1:
		raise ConfigError("jobs must be >= 1")
	if cfg.repeats is not None and cfg.repeats < 1:
		raise ConfigError("repeats must be >= 1")
	validate_media_config(cfg.media)
	validate_link_config(cfg.link)
	validate_feature_config(cfg.features)
	validate_iql_hyper(cfg.hyper)


# ------------------------------- Merge Helpers ------------------------------
def _get_attr(obj: Any, name: str, default: Any = None) -> Any:
	if isinstance(obj, Mapping):  # dict-like
		return obj.get(name, default)
	return getattr(obj, name, default)


def merge_cli_args(base: Optional[RunConfig], args: Any) -> RunConfig:
	"""Merge CLI arg structure (Namespace or mapping) into a new RunConfig.

	Only arguments that were actually given (not None) override ``base``.
	Accepted names: command, family, suite, repeats, policy (list), seed,
	duration_ms, out, jobs, dataset, preset, steps, batch_size, dump_mi,
	propagation_ms, max_queue_ms, probe_fraction.
	"""
	if base is None:
		base = RunConfig()
	new = replace(
		base,
		media=replace(base.media),
		link=replace(base.link),
		features=replace(base.features),
		reward=replace(base.reward),
		hyper=replace(base.hyper),
		policies=list(base.policies),
	)

	family = _get_attr(args, "family", None)
	suite = _get_attr(args, "suite", None)
	if family is not None and suite is not None:
		raise ConfigError("Specify only one of --family or --suite")
	if family is not None:
		new.family, new.suite = family, None
	elif suite is not None:
		new.family, new.suite = None, suite

	simple = {
		"command": "command",
		"repeats": "repeats",
		"seed": "seed",
		"duration_ms": "duration_ms",
		"out": "out_dir",
		"jobs": "jobs",
		"dataset": "dataset_dir",
		"preset": "preset_name",
	}
	for arg_name, attr in simple.items():
		val = _get_attr(args, arg_name, None)
		if val is not None:
			setattr(new, attr, val)
	policies = _get_attr(args, "policy", None)
	if policies:
		new.policies = list(policies)
	if _get_attr(args, "dump_mi", None):
		new.dump_mi = True

	if _get_attr(args, "preset", None) is not None:
		new.hyper = preset(new.preset_name, seed=new.hyper.seed)
	for arg_name, attr in (("steps", "steps"), ("batch_size", "batch_size"), ("train_seed", "seed")):
		val = _get_attr(args, arg_name, None)
		if val is not None:
			setattr(new.hyper, attr, val)
	for arg_name, target, attr in (
		("propagation_ms", new.link, "propagation_delay_ms"),
		("max_queue_ms", new.link, "max_queue_ms"),
		("probe_fraction", new.media, "probe_fraction"),
	):
		val = _get_attr(args, arg_name, None)
		if val is not None:
			setattr(target, attr, val)
	if not new.out_dir:
		new.out_dir = default_output_dir()
	validate_run_config(new)
	return new


# ------------------------------- Persistence --------------------------------
def effective_config(cfg: RunConfig) -> dict[str, Any]:
	"""Return a JSON-ready dict with every default materialized."""
	return asdict(cfg)


def save_effective_config(cfg: RunConfig, out_dir: Path) -> Path:
	path = Path(out_dir) / "effective_config.json"
	atomic_write_text(path, json.dumps(effective_config(cfg), indent=2, sort_keys=True) + "\n")
	return path


def _build(cls: type, data: Mapping[str, Any] | None) -> Any:
	data = dict(data or {})
	known = {f.name for f in fields(cls)}
	unknown = set(data) - known
	if unknown:
		raise ConfigError(f"unknown {cls.__name__} keys: {', '.join(sorted(unknown))}")
	return cls(**data)


def load_effective_config(path: Path) -> RunConfig:
	"""Load a config written by :func:`save_effective_config` (or printed by the CLI)."""
	try:
		data = json.loads(Path(path).read_text(encoding="utf-8"))
	except (OSError, json.JSONDecodeError) as e:
		raise ConfigError(f"cannot read config {path}: {e}") from e
	if not isinstance(data, dict):
		raise ConfigError(f"config {path} must be a JSON object")
	nested = {
		"media": MediaSourceConfig,
		"link": LinkConfig,
		"features": FeatureConfig,
		"reward": ProxyRewardConfig,
		"hyper": IqlHyper,
	}
	kwargs = {k: v for k, v in data.items() if k not in nested}
	for key, cls in nested.items():
		kwargs[key] = _build(cls, data.get(key))
	cfg = _build(RunConfig, kwargs)
	return cfg
