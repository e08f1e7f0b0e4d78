"""Root CLI entry point.

Usage examples:
  python main.py traces --suite default --out out/traces
  python main.py simulate --family low_bw --policy oracle --seed 1
  python main.py simulate --suite default --policy heuristic:0.1 --jobs 4 --out data_v1
  python main.py train --dataset data_v1 --preset desk --steps 20000 --out model
  python main.py evaluate --policy heuristic --policy weights:model/policy.bwe --policy oracle
  python main.py simulate --config out/effective_config.json   # replay a run

Set BWE_BENCH_DEBUG=1 for debug logging, BWE_BENCH_OUT for the default output dir.
"""

from __future__ import annotations

import sys

from bwe_bench.cli import main

if __name__ == "__main__":  # manual launch support
	sys.exit(main())
