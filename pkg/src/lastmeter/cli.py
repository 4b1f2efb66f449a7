"""Command-line entry point: run, ablate, episode, report."""
from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

from . import harness
from .errors import ConfigError


def _suite(args) -> harness.SuiteConfig:
    cfg = harness.load_config(args.config) if args.config else harness.SuiteConfig()
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.parallel is not None:
        overrides["parallel"] = args.parallel
    if args.out_dir is not None:
        overrides["out_dir"] = args.out_dir
    if args.fold_mode is not None:
        overrides["fold_mode"] = args.fold_mode
    return replace(cfg, **overrides) if overrides else cfg


def _summary(agg: dict) -> str:
    def f(v, fmt):
        return "n/a" if v is None else format(v, fmt)
    return (f"n={agg['n']} SR={agg['SR']:.3f} SPL={agg['SPL']:.3f} "
            f"eps_pos={f(agg['mean_eps_pos'], '.3f')}m "
            f"eps_head={f(agg['mean_eps_head'], '.2f')}deg ({agg['fold_mode']})")


def cmd_run(args) -> int:
    report = harness.run_suite(_suite(args))
    print(_summary(report.aggregates))
    return 0


def cmd_ablate(args) -> int:
    axes = harness.load_axes(args.axes) if args.axes else None
    reports = harness.run_ablation(_suite(args), axes)
    for name, rep in reports.items():
        print(f"{name:<24} {_summary(rep.aggregates)}")
    return 0


def cmd_episode(args) -> int:
    rec = harness.run_single(_suite(args), args.episode_id, dump_fields=not args.no_fields)
    print(json.dumps(rec, indent=2, sort_keys=True))
    return 0


def cmd_report(args) -> int:
    agg = harness.report_from_jsonl(args.episodes, args.fold_mode or "mod180")
    out = Path(args.out_dir) if args.out_dir else Path(args.episodes).parent
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.json").write_text(json.dumps(
        {"aggregates": agg, "failure_rules": harness.FAILURE_RULES}, indent=2, sort_keys=True))
    print(_summary(agg))
    return 0


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="episode-suite seed override")
    common.add_argument("--parallel", type=int, default=None, help="worker processes")
    common.add_argument("--out-dir", default=None)
    common.add_argument("--fold-mode", choices=harness.FOLD_MODES, default=None,
                        help="heading error folding used in aggregates")

    parser = argparse.ArgumentParser(prog="lastmeter", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", parents=[common], help="run an episode suite")
    p.add_argument("config", nargs="?", help="suite config JSON (defaults if omitted)")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("ablate", parents=[common], help="run single-axis ablations")
    p.add_argument("config", nargs="?", help="base suite config JSON")
    p.add_argument("--axes", help="JSON object of axis -> list of override values")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("episode", parents=[common], help="run one episode and dump its trace")
    p.add_argument("episode_id")
    p.add_argument("--config", default=None)
    p.add_argument("--no-fields", action="store_true", help="skip the final map channel dump")
    p.set_defaults(func=cmd_episode)

    p = sub.add_parser("report", parents=[common], help="recompute aggregates from episodes.jsonl")
    p.add_argument("episodes", help="path to episodes.jsonl")
    p.set_defaults(func=cmd_report, config=None)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, KeyError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
