"""Convert challenge-repository call files into workbench call files.

The public challenge data names its arrays slightly differently
(``audio_quality`` / ``video_quality``); the key map in dataio renames them and
the result is validated like any other call file. A manifest tagging every
call with its behavior policy is written next to the converted files.

Usage:
  python convert_dataset.py SRC_DIR OUT_DIR --policy-id v1
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from bwe_bench.dataio import from_challenge, write_call, write_manifest
from bwe_bench.errors import BenchError


def convert_dir(src: Path, out: Path, policy_id: str) -> int:
	"""Convert every *.json under src; returns the number of calls written."""
	entries = []
	for path in sorted(src.glob("*.json")):
		raw = json.loads(path.read_text(encoding="utf-8"))
		traj = from_challenge(raw, call_id=path.stem, policy_id=policy_id)
		rel = Path("calls") / f"{path.stem}.json"
		write_call(traj, out / rel)
		entries.append({"file": rel.as_posix(), "call_id": traj.call_id, "policy_id": policy_id})
		print(f"converted {path.name} ({len(traj)} steps)")
	if entries:
		write_manifest(out, entries)
	return len(entries)


def main(argv: list[str] | None = None) -> int:  # pragma: no cover - script
	p = argparse.ArgumentParser(description="Convert challenge call files to workbench format")
	p.add_argument("src", type=Path)
	p.add_argument("out", type=Path)
	p.add_argument("--policy-id", default="v0", help="Behavior policy tag for all converted calls")
	args = p.parse_args(argv)
	try:
		n = convert_dir(args.src, args.out, args.policy_id)
	except (BenchError, json.JSONDecodeError) as e:
		print(f"Error: {e}")
		return 1
	print(f"{n} calls written to {args.out}")
	return 0 if n else 1


if __name__ == "__main__":
	sys.exit(main())
