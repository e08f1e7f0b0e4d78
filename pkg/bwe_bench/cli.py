"""CLI entrypoint.

Subcommands:
 - traces    write generated trace files for a family or suite
 - simulate  run emulated calls with one policy, write trajectories + manifest
 - train     IQL training on a dataset directory, write weights + CSV log
 - evaluate  run several policies over a suite, write per-family report

The first stdout line of every subcommand is the effective config (JSON, all
defaults materialized); feed it back with --config to replay a run.
Errors print ``error[<category>]: message`` plus a JSON line to stderr and
exit with the category's code.
"""

from __future__ import annotations

import argparse
import json
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Any, Optional

from .config import RunConfig, effective_config, load_effective_config, load_family_ranges, merge_cli_args, save_effective_config
from .dataio import CallTrajectory, read_dataset, write_call, write_manifest
from .errors import BenchError, ConfigError
from .evalx import e_minus, e_plus, leg_score, mse, records_from, report
from .netemu import run_call
from .policy import PolicySpec, parse_policy_spec, save_weights
from .rl import train, write_training_log
from .scenarios import CallPlan, build_suite, family_plan, make_trace
from .traces import write_trace
from .ui import ProgressPrinter, UIThrottle, build_call_line, build_train_line
from .utils import configure_logging, debug_log

__all__ = ["build_parser", "main"]


class _Parser(argparse.ArgumentParser):
    """Argument errors surface as ConfigError so they share the error[config] output."""

    def error(self, message: str):
        raise ConfigError(f"{self.prog}: {message}")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="bwe-bench", description="Bandwidth estimation workbench")
    p.add_argument("--verbose", action="store_true", help="Debug logging to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp: argparse.ArgumentParser, *, selection: bool = True) -> None:
        if selection:
            sel = sp.add_mutually_exclusive_group()
            sel.add_argument("--family", help="Single trace family (low_bw, high_bw, fluctuating_bw, burst_loss, fluctuating_burst_loss)")
            sel.add_argument("--suite", help="Scenario suite: default, preliminary or family:<name>")
            sp.add_argument("--repeats", type=int, help="Calls per scenario (default: the suite's)")
        sp.add_argument("--seed", type=int, help="Master seed")
        sp.add_argument("--duration-ms", dest="duration_ms", type=float, help="Call duration (default 120000)")
        sp.add_argument("--out", help="Output directory (default $BWE_BENCH_OUT or ./bwe_out)")
        sp.add_argument("--config", help="Replay an effective-config JSON file")

    tr = sub.add_parser("traces", help="Write generated trace files")
    common(tr)

    for name, helptext in (("simulate", "Run emulated calls with one policy"), ("evaluate", "Evaluate policies over a suite")):
        sp = sub.add_parser(name, help=helptext)
        common(sp)
        sp.add_argument(
            "--policy",
            action="append",
            help="heuristic[:sigma] | constant:<bps> | oracle | weights:<path> (repeat for evaluate)",
        )
        sp.add_argument("--jobs", type=int, help="Parallel worker processes (1 = fully deterministic order)")
        sp.add_argument("--dump-mi", dest="dump_mi", action="store_true", help="Write per-MI feature CSVs")
        sp.add_argument("--propagation-ms", dest="propagation_ms", type=float)
        sp.add_argument("--max-queue-ms", dest="max_queue_ms", type=float)
        sp.add_argument("--probe-fraction", dest="probe_fraction", type=float)

    tn = sub.add_parser("train", help="Train an IQL policy on a dataset directory")
    common(tn, selection=False)
    tn.add_argument("--dataset", help="Directory with manifest.json (or calls/*.json)")
    tn.add_argument("--preset", choices=["paper", "desk"], help="Hyper-parameter preset (default desk)")
    tn.add_argument("--steps", type=int, help="Gradient steps")
    tn.add_argument("--batch-size", dest="batch_size", type=int)
    return p


# ------------------------------- Call workers --------------------------------
def _slug(label: str) -> str:
    return label.replace(":", "_").replace("/", "_")


def _run_one(job: tuple[CallPlan, PolicySpec, RunConfig, str]) -> CallTrajectory:
    plan, spec, cfg, mi_dir = job
    _, ranges = load_family_ranges()
    trace = make_trace(plan, cfg.duration_ms, ranges)
    estimator = spec.build(trace, plan.call_seed, cfg.features.short_mi_ms)
    return run_call(
        trace,
        estimator,
        cfg.media,
        cfg.duration_ms,
        plan.call_seed,
        link_cfg=cfg.link,
        feature_cfg=cfg.features,
        reward_cfg=cfg.reward,
        call_id=plan.call_id,
        policy_id=spec.label,
        mi_dump_path=Path(mi_dir) / f"{plan.call_id}.csv" if mi_dir else None,
    )


def _run_calls(plans: list[CallPlan], spec: PolicySpec, cfg: RunConfig, out: Path) -> list[CallTrajectory]:
    mi_dir = str(out / "mi" / _slug(spec.label)) if cfg.dump_mi else ""
    jobs = [(plan, spec, cfg, mi_dir) for plan in plans]
    progress = ProgressPrinter(len(jobs), spec.label)
    results: list[CallTrajectory] = []
    if cfg.jobs == 1:
        for job in jobs:
            results.append(_run_one(job))
            progress.advance()
    else:
        with ProcessPoolExecutor(max_workers=cfg.jobs) as pool:
            for traj in pool.map(_run_one, jobs):
                results.append(traj)
                progress.advance()
    return results


def _plans(cfg: RunConfig) -> list[CallPlan]:
    if cfg.family is not None:
        return family_plan(cfg.family, cfg.seed, cfg.repeats)
    return build_suite(cfg.suite, cfg.repeats, cfg.seed)


def _summary(traj: CallTrajectory) -> str:
    if not traj.steps:
        return build_call_line(traj.call_id, traj.policy_id, 0.0, None, None, None, traj.error)
    s = leg_score(traj).score
    if traj.has_ground_truth:
        recs = records_from(traj)
        return build_call_line(traj.call_id, traj.policy_id, s, mse(recs, "mbps2"), e_plus(recs), e_minus(recs), traj.error)
    return build_call_line(traj.call_id, traj.policy_id, s, None, None, None, traj.error)


def _write_calls(trajs: list[CallTrajectory], out: Path, subdir: str) -> list[dict[str, str]]:
    entries = []
    for traj in trajs:
        if not traj.steps:
            continue
        rel = Path("calls") / subdir / f"{traj.call_id}.json" if subdir else Path("calls") / f"{traj.call_id}.json"
        write_call(traj, out / rel)
        entries.append({"file": rel.as_posix(), "call_id": traj.call_id, "policy_id": traj.policy_id})
    return entries


# --------------------------------- Commands ----------------------------------
def cmd_traces(cfg: RunConfig) -> None:
    out = Path(cfg.out_dir)
    _, ranges = load_family_ranges()
    seen = set()
    for plan in _plans(cfg):
        if plan.scenario in seen:
            continue
        seen.add(plan.scenario)
        path = out / "traces" / f"{plan.scenario.name}.trace"
        write_trace(make_trace(plan, cfg.duration_ms, ranges), path)
        print(path)


def cmd_simulate(cfg: RunConfig) -> None:
    out = Path(cfg.out_dir)
    spec = parse_policy_spec(cfg.policies[0])
    trajs = _run_calls(_plans(cfg), spec, cfg, out)
    entries = _write_calls(trajs, out, "")
    for traj in trajs:
        print(_summary(traj))
    write_manifest(out, entries)
    save_effective_config(cfg, out)


def cmd_train(cfg: RunConfig) -> None:
    out = Path(cfg.out_dir)
    dataset = read_dataset(Path(cfg.dataset_dir))
    throttle = UIThrottle()
    total = cfg.hyper.steps

    def on_step(row) -> None:
        if row.step == total or throttle.should_render():
            print(build_train_line(row, total), file=sys.stderr)

    result = train(dataset, cfg.hyper, checkpoint_dir=out / "checkpoints", snapshot_dir=out, on_step=on_step)
    weights_path = out / "policy.bwe"
    save_weights(result.weights, weights_path)
    write_training_log(result.log, out / "training_log.csv")
    save_effective_config(cfg, out)
    print(f"weights: {weights_path}")
    print(f"log: {out / 'training_log.csv'} ({len(result.log)} steps)")


def cmd_evaluate(cfg: RunConfig) -> None:
    out = Path(cfg.out_dir)
    plans = _plans(cfg)
    results: dict[str, dict[str, list[CallTrajectory]]] = {}
    entries = []
    for spec in [parse_policy_spec(p) for p in cfg.policies]:
        trajs = _run_calls(plans, spec, cfg, out)
        entries += _write_calls(trajs, out, _slug(spec.label))
        for traj in trajs:
            if traj.error:
                print(_summary(traj))
            if traj.steps:
                results.setdefault(traj.family or "custom", {}).setdefault(spec.label, []).append(traj)
    write_manifest(out, entries)
    for path in report(results, out / "report", seed=cfg.seed):
        print(path)
    save_effective_config(cfg, out)


COMMANDS = {
    "traces": cmd_traces,
    "simulate": cmd_simulate,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
}


def _merged_config(args: argparse.Namespace) -> RunConfig:
    base: Optional[RunConfig] = load_effective_config(Path(args.config)) if getattr(args, "config", None) else None
    given: dict[str, Any] = dict(vars(args))
    if args.command == "train" and args.seed is not None:
        given["train_seed"] = args.seed
    if args.command == "evaluate" and given.get("family") is None and given.get("suite") is None:
        if base is None or (base.family is None and base.suite is None):
            given["suite"] = "default"
    return merge_cli_args(base, given)


def main(argv: Optional[list[str]] = None) -> int:  # pragma: no cover - integration
    try:
        args = build_parser().parse_args(argv)
        configure_logging(args.verbose)
        cfg = _merged_config(args)
        print(json.dumps(effective_config(cfg), sort_keys=True))
        debug_log("running", cfg.command)
        COMMANDS[cfg.command](cfg)
    except BenchError as e:
        print(f"error[{e.category}]: {e}", file=sys.stderr)
        print(json.dumps({"error": e.category, "message": str(e)}), file=sys.stderr)
        return e.exit_code
    except OSError as e:
        print(f"error[io]: {e}", file=sys.stderr)
        print(json.dumps({"error": "io", "message": str(e)}), file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":  # manual launch support
    sys.exit(main())
