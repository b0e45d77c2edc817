"""Command-line driver.

Four subcommands: ``run`` executes scenario files or a corpus directory
with all monitors on, ``check`` re-runs the trace audits over a stored
trace, ``render-tree`` prints the upper strategy tree, and
``replay-diff`` compares two traces byte for byte.  Exit status is 0 for
a clean outcome, 1 when any monitor or comparison failed, and 2 when a
scenario or argument could not be loaded.
"""
from __future__ import annotations

import argparse
import dataclasses
import sys
from pathlib import Path
from typing import Optional

from .render import render_dot, render_text
from .runner import check_trace, replay_compare, run
from .scenario import Scenario, ScenarioError, load_scenario
from .tree import Tree


def main(argv: Optional[list[str]] = None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ScenarioError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="prisim",
        description="Deterministic priority-construction runs with runtime monitors.",
    )
    sub = parser.add_subparsers(required=True)

    p_run = sub.add_parser("run", help="execute scenarios with all monitors on")
    p_run.add_argument("scenarios", nargs="*", type=Path, help="scenario files")
    p_run.add_argument("--corpus", type=Path, help="directory of scenario files")
    p_run.add_argument("--stages", type=int, help="override the stage horizon")
    p_run.add_argument("--seed", type=int, help="override the scenario seed")
    p_run.add_argument("--trace", type=Path, help="trace output (single scenario)")
    p_run.add_argument("--report", type=Path, help="report output (single scenario)")
    p_run.add_argument("--out", type=Path, help="directory for per-scenario traces and reports")
    p_run.add_argument(
        "--full-checks",
        action="store_true",
        help="use the exhaustive stage checker instead of the incremental one",
    )
    p_run.set_defaults(func=_cmd_run)

    p_check = sub.add_parser("check", help="re-run the trace audits over a stored trace")
    p_check.add_argument("trace", type=Path)
    p_check.add_argument("--kind", choices=("main", "basic"), default="main")
    p_check.set_defaults(func=_cmd_check)

    p_tree = sub.add_parser("render-tree", help="print the upper strategy tree")
    p_tree.add_argument("--depth", type=int, default=3)
    p_tree.add_argument(
        "--div-bound",
        type=int,
        default=1,
        help="how many divergence outcomes to show per branching node",
    )
    p_tree.add_argument("--dot", action="store_true", help="emit Graphviz instead of text")
    p_tree.set_defaults(func=_cmd_render_tree)

    p_diff = sub.add_parser("replay-diff", help="compare two traces byte for byte")
    p_diff.add_argument("trace_a", type=Path)
    p_diff.add_argument("trace_b", type=Path)
    p_diff.set_defaults(func=_cmd_replay_diff)

    return parser


def _gather(args) -> list[Path]:
    paths = list(args.scenarios)
    if args.corpus is not None:
        found = sorted(args.corpus.glob("*.yaml"))
        if not found:
            raise ScenarioError("no scenario files found", str(args.corpus))
        paths.extend(found)
    if not paths:
        raise ScenarioError("nothing to run; give scenario files or --corpus", "run")
    return paths


def _overridden(scenario: Scenario, args) -> Scenario:
    changes = {}
    if args.stages is not None:
        if args.stages <= 0:
            raise ScenarioError("stages must be positive", "--stages")
        changes["stages"] = args.stages
    if args.seed is not None:
        if args.seed < 0:
            raise ScenarioError("seed must be nonnegative", "--seed")
        changes["seed"] = args.seed
    return dataclasses.replace(scenario, **changes) if changes else scenario


def _cmd_run(args) -> int:
    paths = _gather(args)
    if len(paths) > 1 and (args.trace or args.report):
        raise ScenarioError(
            "--trace/--report take one scenario; use --out for several", "run"
        )
    if args.out is not None:
        args.out.mkdir(parents=True, exist_ok=True)
    failed = 0
    for path in paths:
        scenario = _overridden(load_scenario(path), args)
        trace_path, report_path = args.trace, args.report
        if args.out is not None:
            trace_path = args.out / f"{scenario.name}.trace.jsonl"
            report_path = args.out / f"{scenario.name}.report.jsonl"
        result = run(
            scenario,
            trace_path=trace_path,
            report_path=report_path,
            full_checks=args.full_checks,
        )
        status = "CLEAN" if result.clean else f"{len(result.violations)} VIOLATIONS"
        print(
            f"{scenario.name}: {result.stages_run}/{scenario.stages} stages, "
            f"{result.event_count} events, {status}"
        )
        if not result.clean:
            failed += 1
            for message in result.violations[:20]:
                print(f"  {message}")
            if len(result.violations) > 20:
                print(f"  ... and {len(result.violations) - 20} more")
    return 1 if failed else 0


def _cmd_check(args) -> int:
    violations = check_trace(args.trace, kind=args.kind)
    if violations:
        for message in violations:
            print(message)
        return 1
    print("CLEAN")
    return 0


def _cmd_render_tree(args) -> int:
    if args.depth < 0 or args.div_bound < 1:
        raise ScenarioError("depth must be >= 0 and --div-bound >= 1", "render-tree")
    renderer = render_dot if args.dot else render_text
    sys.stdout.write(renderer(Tree(), args.depth, args.div_bound))
    return 0


def _cmd_replay_diff(args) -> int:
    if replay_compare(args.trace_a, args.trace_b):
        print("identical")
        return 0
    print("different")
    return 1


if __name__ == "__main__":
    sys.exit(main())
