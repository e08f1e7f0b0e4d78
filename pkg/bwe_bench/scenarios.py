"""Scenario suites and per-call plans.

A scenario is one generated trace (family + trace seed). A suite lists
scenarios per family and how many calls each gets; every call receives its
own seed derived from the run's master seed, so calls can run in any order
or in parallel and still reproduce.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Optional

from .config import FamilyRange, load_suites
from .errors import ConfigError
from .traces import GENERATED_FAMILIES, Trace, TraceFamily, generate
from .utils import derive_seed

__all__ = [
	"Scenario",
	"CallPlan",
	"scenario_key",
	"suite_scenarios",
	"build_suite",
	"family_plan",
	"make_trace",
]


@dataclass(frozen=True, slots=True)
class Scenario:
	family: str
	seed: int

	@property
	def name(self) -> str:
		return f"{self.family}_{self.seed}"


@dataclass(frozen=True, slots=True)
class CallPlan:
	scenario: Scenario
	scenario_index: int
	repeat: int
	call_seed: int

	@property
	def call_id(self) -> str:
		return f"{self.scenario.name}_r{self.repeat:02d}"


def scenario_key(s: Scenario) -> str:
	return f"{s.family}/{s.seed}"


def _family_order(name: str) -> int:
	try:
		return GENERATED_FAMILIES.index(TraceFamily(name))
	except ValueError:
		raise ConfigError(f"unknown trace family: {name}") from None


def suite_scenarios(name: str, path: Optional[Path] = None) -> tuple[list[Scenario], int]:
	"""Scenarios of a suite and its default repeat count.

	``family:<f>`` restricts the default suite to one family.
	"""
	suites = load_suites(path)
	only: Optional[str] = None
	if name.startswith("family:"):
		only = name.split(":", 1)[1]
		_family_order(only)
		name = "default"
	if name not in suites:
		raise ConfigError(f"unknown suite: {name} (known: {', '.join(sorted(suites))})")
	spec = suites[name]
	out = []
	for family in sorted(spec.scenarios, key=_family_order):
		if only is not None and family != only:
			continue
		out.extend(Scenario(family, seed) for seed in spec.scenarios[family])
	if not out:
		raise ConfigError(f"suite {name} selects no scenarios")
	return out, spec.repeats


def _plans(scenarios: list[Scenario], repeats: int, master_seed: int) -> list[CallPlan]:
	if repeats < 1:
		raise ConfigError("repeats must be >= 1")
	return [
		CallPlan(s, i, r, derive_seed(master_seed, "call", i, r))
		for i, s in enumerate(scenarios)
		for r in range(repeats)
	]


def build_suite(
	name: str, repeats: Optional[int] = None, master_seed: int = 0, path: Optional[Path] = None
) -> list[CallPlan]:
	scenarios, default_repeats = suite_scenarios(name, path)
	return _plans(scenarios, repeats or default_repeats, master_seed)


def family_plan(family: str, seed: int, repeats: Optional[int] = None) -> list[CallPlan]:
	"""Single scenario of one family; the run seed doubles as the trace seed."""
	_family_order(family)
	return _plans([Scenario(family, seed)], repeats or 1, seed)


def make_trace(plan: CallPlan, duration_ms: float, ranges: Optional[dict[str, FamilyRange]] = None) -> Trace:
	return generate(plan.scenario.family, plan.scenario.seed, duration_ms, ranges)
