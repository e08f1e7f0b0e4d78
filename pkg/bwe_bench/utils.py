"""Logging, seeding and small file helpers shared by every module.

 - Package logger ``bwe_bench``; ``debug_log`` is gated by env var BWE_BENCH_DEBUG=1
 - ``make_rng`` / ``derive_seed``: one master seed split into named substreams
 - ``atomic_write_text`` / ``atomic_write_bytes``: temp file then replace

Seeding contract:
	make_rng(master, stream, *counters) = default_rng(SeedSequence(master, spawn_key=(STREAM_IDS[stream], *counters)))
The stream id table below is append-only; renumbering it changes every
trajectory ever produced.
"""

from __future__ import annotations

import logging
import os
import sys
from pathlib import Path

import numpy as np

_DEBUG_ENABLED = os.environ.get("BWE_BENCH_DEBUG", "0") in {"1", "true", "True"}

logger = logging.getLogger("bwe_bench")

STREAM_IDS: dict[str, int] = {
	"trace": 1,
	"loss": 2,
	"video_jitter": 3,
	"call": 4,
	"init": 5,
	"batches": 6,
	"bootstrap": 7,
	"behavior_noise": 8,
	"sampling": 9,
}


def debug_log(*parts) -> None:
	if _DEBUG_ENABLED:
		logger.debug(" ".join(str(p) for p in parts))


def warn_log(*parts) -> None:
	logger.warning(" ".join(str(p) for p in parts))


def configure_logging(verbose: bool = False) -> None:  # pragma: no cover - side-effect
	"""Attach a stderr handler to the package logger (CLI entry only)."""
	if logger.handlers:
		return
	handler = logging.StreamHandler(sys.stderr)
	handler.setFormatter(logging.Formatter("[%(levelname)s] %(message)s"))
	logger.addHandler(handler)
	logger.setLevel(logging.DEBUG if (verbose or _DEBUG_ENABLED) else logging.INFO)


# ------------------------------- RNG streams --------------------------------
def _spawn_key(stream: str, counters: tuple[int, ...]) -> tuple[int, ...]:
	if stream not in STREAM_IDS:
		raise KeyError(f"unknown rng stream: {stream}")
	return (STREAM_IDS[stream], *(int(c) for c in counters))


def make_rng(master_seed: int, stream: str, *counters: int) -> np.random.Generator:
	seq = np.random.SeedSequence(entropy=int(master_seed), spawn_key=_spawn_key(stream, counters))
	return np.random.default_rng(seq)


def derive_seed(master_seed: int, stream: str, *counters: int) -> int:
	"""Return a 63-bit integer seed for a substream (stable across platforms)."""
	seq = np.random.SeedSequence(entropy=int(master_seed), spawn_key=_spawn_key(stream, counters))
	return int(seq.generate_state(1, dtype=np.uint64)[0] >> np.uint64(1))


# ------------------------------- File helpers -------------------------------
def atomic_write_text(path: Path, text: str) -> None:
	path.parent.mkdir(parents=True, exist_ok=True)
	tmp = path.with_suffix(path.suffix + ".tmp")
	tmp.write_text(text, encoding="utf-8")
	tmp.replace(path)


def atomic_write_bytes(path: Path, data: bytes) -> None:
	path.parent.mkdir(parents=True, exist_ok=True)
	tmp = path.with_suffix(path.suffix + ".tmp")
	tmp.write_bytes(data)
	tmp.replace(path)


__all__ = [
	"STREAM_IDS",
	"logger",
	"debug_log",
	"warn_log",
	"configure_logging",
	"make_rng",
	"derive_seed",
	"atomic_write_text",
	"atomic_write_bytes",
]
