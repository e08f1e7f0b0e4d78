"""Workbench error hierarchy.

Every error raised on purpose by the workbench derives from ``BenchError``,
which is itself a ``ValueError`` so callers that only know about
``ValueError`` keep working. Each class carries a machine-readable
``category`` and the exit code the CLI uses for it.
"""

from __future__ import annotations

from typing import Any

__all__ = [
	"BenchError",
	"ConfigError",
	"TraceError",
	"SchemaError",
	"WeightsError",
	"PolicyError",
	"TrainingError",
	"EmulationError",
	"MetricError",
]


class BenchError(ValueError):
	category = "internal"
	exit_code = 1


class ConfigError(BenchError):
	category = "config"
	exit_code = 2


class TraceError(BenchError):
	category = "trace"
	exit_code = 3


class SchemaError(BenchError):
	"""Call file / dataset violates the trajectory schema."""

	category = "schema"
	exit_code = 4


class WeightsError(BenchError):
	category = "weights"
	exit_code = 5


class PolicyError(BenchError):
	category = "policy"
	exit_code = 6


class TrainingError(BenchError):
	"""Training aborted. ``snapshot`` holds the diagnostic state at the abort."""

	category = "training"
	exit_code = 7

	def __init__(self, message: str, snapshot: dict[str, Any] | None = None):
		super().__init__(message)
		self.snapshot = snapshot or {}


class EmulationError(BenchError):
	category = "emulation"
	exit_code = 8


class MetricError(BenchError):
	category = "metric"
	exit_code = 9
