"""Plain-text console output helpers (no interactive UI).

 - Progress bar text for sweeps and training
 - Render throttle so progress lines do not flood stderr
 - Summary line builders for calls and training steps
 - Pure functions, unit-testable
"""

from __future__ import annotations

import sys
import time
from typing import Optional, TextIO

from .rl import TrainLogRow

__all__ = [
	"UIThrottle",
	"build_progress_bar",
	"build_call_line",
	"build_train_line",
	"ProgressPrinter",
]


class UIThrottle:
	def __init__(self, min_interval_sec: float = 0.5):
		self.min_interval = min_interval_sec
		self._last = -float("inf")

	def should_render(self, now: Optional[float] = None) -> bool:
		if now is None:
			now = time.monotonic()
		if now - self._last >= self.min_interval:
			self._last = now
			return True
		return False


def build_progress_bar(progress: float, width: int, fill_char: str = "#") -> str:
	"""Textual progress bar for 0 <= progress <= 1."""
	progress = max(0.0, min(1.0, progress))
	if width <= 0:
		return ""
	filled = int(round(progress * width))
	return fill_char * filled + "-" * (width - filled)


def _opt(val: Optional[float], fmt: str) -> str:
	return "n/a" if val is None else format(val, fmt)


def build_call_line(
	call_id: str,
	policy: str,
	score: float,
	mse_mbps2: Optional[float],
	e_plus: Optional[float],
	e_minus: Optional[float],
	error: Optional[str] = None,
) -> str:
	line = (
		f"{call_id} | {policy} | S {score:5.2f} | mse {_opt(mse_mbps2, '.4f')} Mbps^2"
		f" | e+ {_opt(e_plus, '.3f')} | e- {_opt(e_minus, '.3f')}"
	)
	if error:
		line += f" | aborted: {error}"
	return line


def build_train_line(row: TrainLogRow, total: int) -> str:
	bar = build_progress_bar(row.step / total if total else 1.0, 20)
	return (
		f"[{bar}] step {row.step}/{total} | v {row.v_loss:.4g} | q {row.q_loss:.4g}"
		f" | actor {row.actor_loss:.4g} | awr {row.mean_awr_weight:.3g}"
	)


class ProgressPrinter:
	"""Throttled single-line progress on a stream (stderr by default)."""

	def __init__(self, total: int, label: str, stream: Optional[TextIO] = None, throttle: Optional[UIThrottle] = None):
		self.total = total
		self.label = label
		self.stream = stream or sys.stderr
		self.throttle = throttle or UIThrottle()
		self.done = 0

	def advance(self, n: int = 1) -> None:
		self.done += n
		if self.done >= self.total or self.throttle.should_render():
			bar = build_progress_bar(self.done / self.total if self.total else 1.0, 30)
			self.stream.write(f"{self.label} [{bar}] {self.done}/{self.total}\n")
			self.stream.flush()
