"""Scenario files: the run configurations for both constructions.

A scenario is a versioned YAML document naming the construction kind,
the stage horizon, a per-stage script of environment events, and for
the main construction an optional list of closed-loop adversaries.
Loading is all-or-nothing: a malformed document raises ScenarioError
carrying the position (file, line, or key path) of the offence, and no
partially built scenario escapes.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional, Union

import yaml

from .re_core import (
    ConsistencyError,
    OracleFunctional,
    PlainFunctional,
    SingleOracleFunctional,
)

SCHEMA_VERSION = 1

KINDS = ("main", "basic")

ADVERSARY_KINDS = (
    "FaithfulGamma",
    "CopycatDelta",
    "StingyGamma",
    "RandomNoise",
    "Permitter",
)

# knob name -> (expected type, default); e is handled separately
_ADVERSARY_KNOBS: dict[str, dict[str, tuple[type, Any]]] = {
    "FaithfulGamma": {"margin": (int, 2), "escalate": (bool, False)},
    "CopycatDelta": {"set": (str, "U")},
    "StingyGamma": {"cutoff": (int, 3)},
    "RandomNoise": {"rate": (float, 0.1), "targets": (list, ["A", "B"])},
    "Permitter": {"drops": (dict, {}), "auto": (bool, False)},
}


class ScenarioError(Exception):
    """A scenario failed to load; `where` pinpoints the offence."""

    def __init__(self, message: str, where: str):
        super().__init__(f"{where}: {message}")
        self.message = message
        self.where = where


@dataclass(frozen=True)
class EnumA:
    x: int


@dataclass(frozen=True)
class EnumB:
    x: int


@dataclass(frozen=True)
class GammaAxiom:
    e: int
    first: tuple[int, ...]
    second: tuple[int, ...]
    arg: int
    value: int


@dataclass(frozen=True)
class DeltaValue:
    e: int
    arg: int
    value: int


@dataclass(frozen=True)
class EnumW:
    x: int


@dataclass(frozen=True)
class PsiAxiom:
    i: int
    first: tuple[int, ...]
    arg: int
    value: int


@dataclass(frozen=True)
class PhiAxiom:
    i: int
    first: tuple[int, ...]
    arg: int
    value: int


ScriptOp = Union[EnumA, EnumB, GammaAxiom, DeltaValue, EnumW, PsiAxiom, PhiAxiom]

_MAIN_OPS = ("enumA", "enumB", "gammaAxiom", "deltaValue")
_BASIC_OPS = ("enumW", "psiAxiom", "phiAxiom")


@dataclass(frozen=True)
class AdversarySpec:
    kind: str
    e: int
    knobs: dict[str, Any] = field(default_factory=dict)


@dataclass(frozen=True)
class Scenario:
    kind: str
    name: str
    seed: int
    stages: int
    script: dict[int, tuple[ScriptOp, ...]]
    adversaries: tuple[AdversarySpec, ...] = ()
    e: int = 0
    origin: str = "<memory>"


def load_scenario(path: Union[str, Path]) -> Scenario:
    """Parse and validate one scenario file."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ScenarioError(str(exc), str(path)) from exc
    return loads_scenario(text, origin=str(path))


def loads_scenario(text: str, origin: str = "<memory>") -> Scenario:
    """Parse and validate scenario text; `origin` labels diagnostics."""
    try:
        doc = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        where = f"{origin}:{mark.line + 1}:{mark.column + 1}" if mark else origin
        raise ScenarioError(f"not parseable: {exc}", where) from exc
    if not isinstance(doc, dict):
        raise ScenarioError("document must be a mapping", origin)

    def fail(message: str, key_path: str) -> ScenarioError:
        return ScenarioError(message, f"{origin}: {key_path}")

    version = _expect(doc, "version", int, fail)
    if version != SCHEMA_VERSION:
        raise fail(f"unsupported version {version}", "version")
    kind = _expect(doc, "kind", str, fail)
    if kind not in KINDS:
        raise fail(f"kind must be one of {KINDS}", "kind")
    name = _expect(doc, "name", str, fail)
    seed = _expect(doc, "seed", int, fail)
    if seed < 0:
        raise fail("seed must be nonnegative", "seed")
    stages = _expect(doc, "stages", int, fail)
    if stages <= 0:
        raise fail("stages must be positive", "stages")

    e = doc.get("e", 0)
    if not isinstance(e, int) or isinstance(e, bool) or e < 0:
        raise fail("e must be a nonnegative integer", "e")
    if kind == "main" and "e" in doc:
        raise fail("field e belongs to basic scenarios only", "e")

    script = _load_script(doc.get("script", {}), kind, stages, fail)
    adversaries = _load_adversaries(doc.get("adversaries", []), kind, fail)
    _check_tables(script, fail)

    allowed = {"version", "kind", "name", "seed", "stages", "script", "adversaries", "e"}
    extra = set(doc) - allowed
    if extra:
        raise fail(f"unknown fields {sorted(extra)}", "/".join(sorted(extra)))

    return Scenario(
        kind=kind,
        name=name,
        seed=seed,
        stages=stages,
        script=script,
        adversaries=adversaries,
        e=e,
        origin=origin,
    )


def _expect(doc: dict, key: str, want: type, fail) -> Any:
    if key not in doc:
        raise fail(f"missing required field {key!r}", key)
    got = doc[key]
    if not isinstance(got, want) or isinstance(got, bool):
        raise fail(f"{key} must be {want.__name__}", key)
    return got


def _bits(raw: Any, key_path: str, fail) -> tuple[int, ...]:
    if not isinstance(raw, list) or any(
        not isinstance(b, int) or isinstance(b, bool) or b not in (0, 1) for b in raw
    ):
        raise fail("must be a list of 0/1 bits", key_path)
    return tuple(raw)


def _nat(raw: Any, key_path: str, fail) -> int:
    if not isinstance(raw, int) or isinstance(raw, bool) or raw < 0:
        raise fail("must be a nonnegative integer", key_path)
    return raw


def _load_script(raw: Any, kind: str, stages: int, fail) -> dict[int, tuple[ScriptOp, ...]]:
    if raw is None:
        return {}
    if not isinstance(raw, dict):
        raise fail("script must map stages to event lists", "script")
    script: dict[int, tuple[ScriptOp, ...]] = {}
    for stage_key in sorted(raw, key=_stage_sort_key):
        where = f"script[{stage_key}]"
        if not isinstance(stage_key, int) or isinstance(stage_key, bool) or stage_key < 0:
            raise fail("stage keys must be nonnegative integers", where)
        if stage_key >= stages:
            raise fail(f"stage {stage_key} is beyond the horizon {stages}", where)
        entries = raw[stage_key]
        if not isinstance(entries, list):
            raise fail("stage entry must be a list of events", where)
        ops = tuple(
            _load_op(entry, kind, f"{where}[{i}]", fail) for i, entry in enumerate(entries)
        )
        if ops:
            script[stage_key] = ops
    return script


def _stage_sort_key(key: Any):
    return (0, key) if isinstance(key, int) and not isinstance(key, bool) else (1, str(key))


def _load_op(entry: Any, kind: str, where: str, fail) -> ScriptOp:
    if not isinstance(entry, dict) or "op" not in entry:
        raise fail("event must be a mapping with an op field", where)
    op = entry["op"]
    legal = _MAIN_OPS if kind == "main" else _BASIC_OPS
    if op not in legal:
        raise fail(f"op must be one of {legal} in a {kind} scenario", f"{where}.op")

    def take(keys: tuple[str, ...]) -> None:
        extra = set(entry) - {"op", *keys}
        if extra:
            raise fail(f"unknown fields {sorted(extra)} for op {op}", where)
        missing = set(keys) - set(entry)
        if missing:
            raise fail(f"missing fields {sorted(missing)} for op {op}", where)

    if op in ("enumA", "enumB", "enumW"):
        take(("x",))
        x = _nat(entry["x"], f"{where}.x", fail)
        return {"enumA": EnumA, "enumB": EnumB, "enumW": EnumW}[op](x)
    if op == "gammaAxiom":
        take(("e", "first", "second", "arg", "value"))
        first = _bits(entry["first"], f"{where}.first", fail)
        second = _bits(entry["second"], f"{where}.second", fail)
        if len(first) != len(second):
            raise fail("first and second prefixes must have equal length", where)
        return GammaAxiom(
            e=_nat(entry["e"], f"{where}.e", fail),
            first=first,
            second=second,
            arg=_nat(entry["arg"], f"{where}.arg", fail),
            value=_bit(entry["value"], f"{where}.value", fail),
        )
    if op == "deltaValue":
        take(("e", "arg", "value"))
        return DeltaValue(
            e=_nat(entry["e"], f"{where}.e", fail),
            arg=_nat(entry["arg"], f"{where}.arg", fail),
            value=_bit(entry["value"], f"{where}.value", fail),
        )
    take(("i", "first", "arg", "value"))
    return (PsiAxiom if op == "psiAxiom" else PhiAxiom)(
        i=_nat(entry["i"], f"{where}.i", fail),
        first=_bits(entry["first"], f"{where}.first", fail),
        arg=_nat(entry["arg"], f"{where}.arg", fail),
        value=_bit(entry["value"], f"{where}.value", fail),
    )


def _bit(raw: Any, key_path: str, fail) -> int:
    if not isinstance(raw, int) or isinstance(raw, bool) or raw not in (0, 1):
        raise fail("must be 0 or 1", key_path)
    return raw


def _load_adversaries(raw: Any, kind: str, fail) -> tuple[AdversarySpec, ...]:
    if raw is None:
        return ()
    if not isinstance(raw, list):
        raise fail("adversaries must be a list", "adversaries")
    if kind == "basic" and raw:
        raise fail("basic scenarios are fully scripted; no adversaries", "adversaries")
    specs = []
    for i, entry in enumerate(raw):
        where = f"adversaries[{i}]"
        if not isinstance(entry, dict) or "kind" not in entry:
            raise fail("adversary must be a mapping with a kind field", where)
        a_kind = entry["kind"]
        if a_kind not in ADVERSARY_KINDS:
            raise fail(f"kind must be one of {ADVERSARY_KINDS}", f"{where}.kind")
        e = _nat(entry.get("e", 0), f"{where}.e", fail)
        schema = _ADVERSARY_KNOBS[a_kind]
        extra = set(entry) - {"kind", "e", *schema}
        if extra:
            raise fail(f"unknown fields {sorted(extra)} for {a_kind}", where)
        knobs: dict[str, Any] = {}
        for knob, (want, default) in schema.items():
            got = entry.get(knob, default)
            ok = isinstance(got, want) and not (want is int and isinstance(got, bool))
            if want is float and isinstance(got, int) and not isinstance(got, bool):
                got, ok = float(got), True
            if not ok:
                raise fail(f"{knob} must be {want.__name__}", f"{where}.{knob}")
            knobs[knob] = got
        _check_knobs(a_kind, knobs, where, fail)
        specs.append(AdversarySpec(kind=a_kind, e=e, knobs=knobs))
    return tuple(specs)


def _check_knobs(a_kind: str, knobs: dict[str, Any], where: str, fail) -> None:
    if a_kind == "FaithfulGamma" and knobs["margin"] < 0:
        raise fail("margin must be nonnegative", f"{where}.margin")
    if a_kind == "CopycatDelta" and knobs["set"] not in ("U", "V", "W"):
        raise fail("set must be U, V, or W", f"{where}.set")
    if a_kind == "StingyGamma" and knobs["cutoff"] < 0:
        raise fail("cutoff must be nonnegative", f"{where}.cutoff")
    if a_kind == "RandomNoise":
        if not 0.0 <= knobs["rate"] <= 1.0:
            raise fail("rate must lie in [0, 1]", f"{where}.rate")
        if not knobs["targets"] or any(t not in ("A", "B") for t in knobs["targets"]):
            raise fail("targets must be a nonempty subset of [A, B]", f"{where}.targets")
    if a_kind == "Permitter":
        for stage_key, nums in knobs["drops"].items():
            spot = f"{where}.drops[{stage_key}]"
            if not isinstance(stage_key, int) or isinstance(stage_key, bool) or stage_key < 0:
                raise fail("drop stages must be nonnegative integers", spot)
            if not isinstance(nums, list) or any(
                not isinstance(n, int) or isinstance(n, bool) or n < 0 for n in nums
            ):
                raise fail("drops must list nonnegative integers", spot)


def _check_tables(script: dict[int, tuple[ScriptOp, ...]], fail) -> None:
    """Replay all scripted table entries so clashes surface at load time."""
    gammas: dict[int, OracleFunctional] = {}
    deltas: dict[int, PlainFunctional] = {}
    psis: dict[int, SingleOracleFunctional] = {}
    phis: dict[int, SingleOracleFunctional] = {}
    for stage in sorted(script):
        for i, op in enumerate(script[stage]):
            where = f"script[{stage}][{i}]"
            try:
                if isinstance(op, GammaAxiom):
                    table = gammas.setdefault(op.e, OracleFunctional(op.e))
                    table.add_axiom(op.first, op.second, op.arg, op.value, stage)
                elif isinstance(op, DeltaValue):
                    table = deltas.setdefault(op.e, PlainFunctional(op.e))
                    table.define(op.arg, op.value, stage)
                elif isinstance(op, PsiAxiom):
                    table = psis.setdefault(op.i, SingleOracleFunctional(op.i))
                    table.add_axiom(op.first, op.arg, op.value, stage)
                elif isinstance(op, PhiAxiom):
                    table = phis.setdefault(op.i, SingleOracleFunctional(op.i))
                    table.add_axiom(op.first, op.arg, op.value, stage)
            except (ConsistencyError, ValueError) as exc:
                raise fail(f"inconsistent table entry: {exc}", where) from exc


def dump_scenario(scenario: Scenario) -> str:
    """Serialize a scenario back to YAML; loads_scenario round-trips it."""
    doc: dict[str, Any] = {
        "version": SCHEMA_VERSION,
        "kind": scenario.kind,
        "name": scenario.name,
        "seed": scenario.seed,
        "stages": scenario.stages,
    }
    if scenario.kind == "basic":
        doc["e"] = scenario.e
    if scenario.script:
        doc["script"] = {
            stage: [_op_to_doc(op) for op in ops]
            for stage, ops in sorted(scenario.script.items())
        }
    if scenario.adversaries:
        doc["adversaries"] = [
            {"kind": spec.kind, "e": spec.e, **spec.knobs} for spec in scenario.adversaries
        ]
    return yaml.safe_dump(doc, sort_keys=False, default_flow_style=None, width=100)


_OP_NAMES = {
    EnumA: "enumA",
    EnumB: "enumB",
    EnumW: "enumW",
    GammaAxiom: "gammaAxiom",
    DeltaValue: "deltaValue",
    PsiAxiom: "psiAxiom",
    PhiAxiom: "phiAxiom",
}


def _op_to_doc(op: ScriptOp) -> dict[str, Any]:
    doc: dict[str, Any] = {"op": _OP_NAMES[type(op)]}
    for name in op.__dataclass_fields__:
        value = getattr(op, name)
        doc[name] = list(value) if isinstance(value, tuple) else value
    return doc
