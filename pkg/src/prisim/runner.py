"""Scenario execution: scripts, adversaries, monitors, traces, reports.

A run steps one engine through a scenario's stage horizon.  At every
stage boundary the scripted events land first and the closed-loop
adversaries act second, both tagged with the stage about to run; the
engine then walks the tree.  Every stage is checked on the spot, the
event stream feeds the trace audits incrementally, and the trace is
written as one JSON record per line with stable key order, so two runs
of the same scenario compare byte for byte.
"""
from __future__ import annotations

import filecmp
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Union

from . import basic
from .adversaries import build_adversaries
from .engine import Engine, EngineFault
from .monitors import PairAudit, PermitAudit, StageChecker, check_stage
from .re_core import ConsistencyError
from .scenario import (
    DeltaValue,
    EnumA,
    EnumB,
    EnumW,
    GammaAxiom,
    PhiAxiom,
    PsiAxiom,
    Scenario,
)
from .tree import Tree

__all__ = ["RunResult", "run", "check_trace", "replay_compare"]


@dataclass
class RunResult:
    """What one scenario run produced and where it was written."""

    scenario: Scenario
    stages_run: int
    event_count: int
    violations: list[str] = field(default_factory=list)
    trace_path: Optional[Path] = None
    report_path: Optional[Path] = None

    @property
    def clean(self) -> bool:
        return not self.violations


class _Sink:
    """Counts events and optionally streams them to a trace file."""

    def __init__(self, path: Optional[Union[str, Path]]):
        self.count = 0
        self._fh = None if path is None else open(path, "w", encoding="utf-8")

    def write(self, event: dict) -> None:
        self.count += 1
        if self._fh is not None:
            self._fh.write(json.dumps(event, separators=(",", ":")) + "\n")

    def close(self) -> None:
        if self._fh is not None:
            self._fh.close()


def run(
    scenario: Scenario,
    trace_path: Optional[Union[str, Path]] = None,
    report_path: Optional[Union[str, Path]] = None,
    full_checks: bool = False,
    mutations: tuple[str, ...] = (),
) -> RunResult:
    """Execute one scenario, stage checks and trace audits included.

    A fault inside the engine or a clash in an environment table aborts
    the run and is reported as a violation rather than an exception; the
    trace holds everything emitted up to that point.  ``full_checks``
    swaps the incremental stage checker for the exhaustive one, and
    ``mutations`` names engine rule hooks to disable so the monitors can
    be shown to catch the resulting misbehaviour.  Mutations apply to
    main scenarios only.
    """
    sink = _Sink(trace_path)
    try:
        if scenario.kind == "main":
            stages_run, violations = _run_main(scenario, sink, full_checks, mutations)
        else:
            stages_run, violations = _run_basic(scenario, sink)
    finally:
        sink.close()
    result = RunResult(
        scenario=scenario,
        stages_run=stages_run,
        event_count=sink.count,
        violations=violations,
        trace_path=None if trace_path is None else Path(trace_path),
        report_path=None if report_path is None else Path(report_path),
    )
    if report_path is not None:
        _write_report(report_path, result)
    return result


def _run_main(scenario: Scenario, sink: _Sink, full_checks: bool) -> tuple[int, list[str]]:
    engine = Engine()
    adversaries = build_adversaries(scenario.adversaries, scenario.seed)
    checker = StageChecker(engine)
    pairs = PairAudit()
    permits = PermitAudit(engine.tree)
    violations: list[str] = []
    stages_run = 0
    for stage in range(scenario.stages):
        try:
            _apply_main(engine, scenario.script.get(stage, ()), stage)
            for adversary in adversaries:
                adversary.act(engine, stage)
            events = engine.run_stage(stage)
        except (EngineFault, ConsistencyError) as exc:
            violations.append(f"stage {stage}: run aborted: {exc}")
            break
        stages_run = stage + 1
        for event in events:
            pairs.feed(event)
            permits.feed(event)
            sink.write(event)
        step = check_stage(engine) if full_checks else checker.check()
        violations.extend(f"stage {stage}: {msg}" for msg in step)
    violations.extend(pairs.finish())
    violations.extend(permits.finish())
    return stages_run, violations


def _apply_main(engine: Engine, ops, stage: int) -> None:
    env = engine.env
    for op in ops:
        if isinstance(op, EnumA):
            if env.A.entry_stage(op.x) is None:
                env.A.add(op.x, stage)
            engine.census.note(op.x)
        elif isinstance(op, EnumB):
            if env.B.entry_stage(op.x) is None:
                env.B.add(op.x, stage)
            engine.census.note(op.x)
        elif isinstance(op, GammaAxiom):
            env.gamma(op.e).add_axiom(op.first, op.second, op.arg, op.value, stage)
            engine.census.note(len(op.first) + 1, op.arg)
        elif isinstance(op, DeltaValue):
            env.delta(op.e).define(op.arg, op.value, stage)
            engine.census.note(op.arg)
        else:
            raise EngineFault(f"op {op!r} does not belong to a main scenario")


def _run_basic(scenario: Scenario, sink: _Sink) -> tuple[int, list[str]]:
    engine = basic.BasicEngine(scenario.e)
    audit = basic.DichotomyAudit()
    violations: list[str] = []
    stages_run = 0
    for stage in range(scenario.stages):
        try:
            _apply_basic(engine, scenario.script.get(stage, ()), stage)
            events = engine.run_stage(stage)
        except (basic.BasicFault, ConsistencyError) as exc:
            violations.append(f"stage {stage}: run aborted: {exc}")
            break
        stages_run = stage + 1
        for event in events:
            audit.feed(event)
            sink.write(event)
        violations.extend(
            f"stage {stage}: {msg}" for msg in basic.check_stage(engine)
        )
    violations.extend(audit.finish())
    return stages_run, violations


def _apply_basic(engine: basic.BasicEngine, ops, stage: int) -> None:
    env = engine.env
    for op in ops:
        if isinstance(op, EnumW):
            if env.W.entry_stage(op.x) is None:
                env.W.add(op.x, stage)
            engine.census.note(op.x)
        elif isinstance(op, PsiAxiom):
            env.opponent(op.i).add_axiom(op.first, op.arg, op.value, stage)
            engine.census.note(len(op.first) + 1, op.arg)
        elif isinstance(op, PhiAxiom):
            env.tracking(op.i).add_axiom(op.first, op.arg, op.value, stage)
            engine.census.note(len(op.first) + 1, op.arg)
        else:
            raise basic.BasicFault(f"op {op!r} does not belong to a basic scenario")


def _write_report(path: Union[str, Path], result: RunResult) -> None:
    scenario = result.scenario
    with open(path, "w", encoding="utf-8") as fh:
        for message in result.violations:
            fh.write(
                json.dumps(
                    {"rec": "violation", "message": message}, separators=(",", ":")
                )
                + "\n"
            )
        summary = {
            "rec": "summary",
            "name": scenario.name,
            "kind": scenario.kind,
            "seed": scenario.seed,
            "stages": scenario.stages,
            "stagesRun": result.stages_run,
            "events": result.event_count,
            "violations": len(result.violations),
            "clean": result.clean,
        }
        fh.write(json.dumps(summary, separators=(",", ":")) + "\n")


def check_trace(path: Union[str, Path], kind: str = "main") -> list[str]:
    """Re-run the trace audits over a stored trace file."""
    if kind == "main":
        pairs = PairAudit()
        permits = PermitAudit(Tree())
        audits = [pairs, permits]
    else:
        audits = [basic.DichotomyAudit()]
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            event = json.loads(line)
            for audit in audits:
                audit.feed(event)
    out: list[str] = []
    for audit in audits:
        out.extend(audit.finish())
    return out


def replay_compare(trace_a: Union[str, Path], trace_b: Union[str, Path]) -> bool:
    """Byte-exact equality of two trace files."""
    return filecmp.cmp(str(trace_a), str(trace_b), shallow=False)
