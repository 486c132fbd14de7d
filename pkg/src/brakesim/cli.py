"""Command-line entry point.

Subcommands: gen-trials (write a synthetic trial corpus), train (run one
training job), eval (roll a checkpoint over a trial set), and compare
(diff two evaluation reports).  Exit code 0 on success; any failure
prints a one-line diagnostic to stderr and exits nonzero.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path
from typing import Optional, Sequence

from . import harness
from .trials import SynthParams, split_trials


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="brakesim",
        description="Train and evaluate autonomous braking agents on crossing trials.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("gen-trials", help="generate a synthetic trial corpus")
    gen.add_argument("--count", type=int, required=True, help="number of trials to write")
    gen.add_argument("--seed", type=int, default=0, help="generator seed")
    gen.add_argument("--out", required=True, help="output directory")
    gen.add_argument("--config", help="config file; only its [trials] section is used")

    train = sub.add_parser("train", help="train one agent")
    train.add_argument("--config", help="run config file")
    train.add_argument("--algo", choices=["ppo", "ddpg"], help="training algorithm")
    train.add_argument(
        "--comfort", choices=["on", "off"], help="include the jerk comfort penalty"
    )
    train.add_argument("--episodes", type=int, help="episode budget override")
    train.add_argument("--seed", type=int, help="global seed")
    train.add_argument("--out", help="run output directory")
    train.add_argument("--trials", help="trial directory (overrides config source)")

    ev = sub.add_parser("eval", help="evaluate a checkpoint")
    ev.add_argument("--checkpoint", required=True, help="trained checkpoint file")
    ev.add_argument("--trials", required=True, help="trial directory")
    ev.add_argument(
        "--split",
        choices=["train", "test", "all"],
        default="all",
        help="which side of the train/test split to evaluate (default all)",
    )
    ev.add_argument("--config", help="config file for env settings and split parameters")
    ev.add_argument(
        "--comfort", choices=["on", "off"], help="include the jerk comfort penalty"
    )
    ev.add_argument("--seed", type=int, help="accepted for interface symmetry; unused")
    ev.add_argument("--out", required=True, help="report output directory")

    comp = sub.add_parser("compare", help="compare two evaluation reports")
    comp.add_argument("report_a", help="first report.json")
    comp.add_argument("report_b", help="second report.json")
    comp.add_argument("--out", help="also write the comparison JSON here")

    return parser


def _run_overrides(args: argparse.Namespace) -> dict:
    overrides: dict = {}
    if getattr(args, "algo", None):
        overrides["algorithm"] = args.algo
    if getattr(args, "comfort", None):
        overrides["comfort_included"] = args.comfort == "on"
    if getattr(args, "episodes", None) is not None:
        overrides["episodes"] = args.episodes
    if getattr(args, "seed", None) is not None:
        overrides["seed"] = args.seed
    if getattr(args, "out", None):
        overrides["out_dir"] = args.out
    if getattr(args, "trials", None):
        overrides["trial_dir"] = args.trials
    return overrides


def _cmd_gen_trials(args: argparse.Namespace) -> int:
    params = SynthParams()
    if args.config:
        values = harness.read_config_file(args.config)
        params = SynthParams(**values.get("trials", {}))
    paths = harness.cmd_gen_trials(params, args.count, args.seed, args.out)
    print(f"wrote {len(paths)} trials to {args.out}")
    return 0


def _cmd_train(args: argparse.Namespace) -> int:
    config = harness.load_run_config(args.config, _run_overrides(args))
    final = harness.cmd_train(config)
    print(f"training complete; final checkpoint {final}")
    return 0


def _cmd_eval(args: argparse.Namespace) -> int:
    overrides = {}
    if args.comfort:
        overrides["comfort_included"] = args.comfort == "on"
    overrides["trial_dir"] = args.trials
    if args.out:
        overrides["out_dir"] = args.out
    config = harness.load_run_config(args.config, overrides)
    trials = harness.load_trial_set(args.trials)
    if args.split != "all":
        train_side, test_side = split_trials(
            trials, config.split_fraction, config.split_seed
        )
        trials = train_side if args.split == "train" else test_side
    report = harness.cmd_eval(args.checkpoint, trials, config.env, args.out)
    print(
        f"evaluated {report.n_episodes} episodes: {report.accident_count} accidents, "
        f"mean |jerk| {report.mean_abs_jerk:.4f}; report in {args.out}/report.json"
    )
    return 0


def _cmd_compare(args: argparse.Namespace) -> int:
    report_a = json.loads(Path(args.report_a).read_text(encoding="utf-8"))
    report_b = json.loads(Path(args.report_b).read_text(encoding="utf-8"))
    result = harness.compare_reports(report_a, report_b)
    text = json.dumps(result, sort_keys=True, indent=2)
    if args.out:
        out = Path(args.out)
        out.parent.mkdir(parents=True, exist_ok=True)
        out.write_text(text + "\n", encoding="utf-8")
    print(text)
    return 0


_DISPATCH = {
    "gen-trials": _cmd_gen_trials,
    "train": _cmd_train,
    "eval": _cmd_eval,
    "compare": _cmd_compare,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return _DISPATCH[args.command](args)
    except Exception as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
