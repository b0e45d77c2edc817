"""Closed-loop environment players for the main construction.

Each adversary acts once per stage boundary, before the engine runs the
stage, reading the picture the previous stage left behind.  Every number
an adversary invents is reported to the engine's census so witnesses and
uses picked later stay above it.  All behavior is deterministic given
the scenario seed and the adversary's position in the list.
"""
from __future__ import annotations

import random
from typing import Optional

from .engine import Engine
from .node_state import AttackerState, theta_value
from .re_core import EnumSet, OracleFunctional
from .scenario import AdversarySpec


class Adversary:
    """One boundary actor; subclasses override act."""

    kind = "?"

    def __init__(self, spec: AdversarySpec, rng: random.Random):
        self.e = spec.e
        self.knobs = spec.knobs
        self.rng = rng

    def act(self, engine: Engine, stage: int) -> None:
        raise NotImplementedError

    def __repr__(self) -> str:
        return f"{type(self).__name__}(e={self.e})"


def _track_argument(
    engine: Engine,
    gamma: OracleFunctional,
    x: EnumSet,
    k: int,
    stage: int,
    prefix_len: int,
) -> None:
    """Make gamma(B, x; k) converge to the built set's bit at k.

    Before writing the new axiom, every same-argument axiom carrying the
    other value is separated from the current side-set picture on its
    first-prefix side, by enumerating one of its zero positions when it
    is not separated already; the replacement then copies the changed
    picture and so is incomparable with all of them.  An old axiom with
    no separating position blocks the update until a later boundary.
    """
    env = engine.env
    previous = stage - 1
    want = env.A.bit(k, previous)
    got = gamma.evaluate(env.B, x, k, previous)
    if got is not None and got[0] == want:
        return
    for ax in gamma.axioms():
        if ax.arg != k or ax.value == want:
            continue
        if any(b == 0 and env.B.bit(p, stage) == 1 for p, b in enumerate(ax.first)):
            continue
        spot = next(
            (p for p, b in enumerate(ax.first) if b == 0 and env.B.bit(p, stage) == 0),
            None,
        )
        if spot is None:
            return
        env.B.add(spot, stage)
        engine.census.note(spot)
    length = max(prefix_len, k + 1)
    gamma.add_axiom(
        env.B.prefix(length, stage),
        x.prefix(length, stage),
        k,
        want,
        stage,
    )
    engine.census.note(length + 1)


class FaithfulGamma(Adversary):
    """Keeps one gamma table computing the built set from the U-candidate.

    The tracked argument range grows by one per boundary.  With the
    escalate knob the prefix margin grows by one per correction, so uses
    at a churned argument go unbounded; without it the margin is fixed.
    """

    kind = "FaithfulGamma"

    def __init__(self, spec: AdversarySpec, rng: random.Random):
        super().__init__(spec, rng)
        self.margin = self.knobs["margin"]
        self.escalate = self.knobs["escalate"]
        self.bound = 0
        self.corrections = 0
        # Arguments already verified stay verified until an event lands
        # below the longest prefix ever written, the built set changes at
        # the argument itself, or someone else touches the table.
        self._seen: Optional[int] = None
        self._ceiling = 0
        self._expected_axioms = 0

    def _probe_args(self, engine: Engine, gamma, x, snap: int):
        if (
            self._seen is None
            or gamma.axiom_count != self._expected_axioms
            or any(e < self._ceiling for _, e in engine.env.B.events_between(self._seen, snap))
            or any(e < self._ceiling for _, e in x.events_between(self._seen, snap))
        ):
            return range(self.bound)
        touched = {
            e for _, e in engine.env.A.events_between(self._seen, snap) if e < self.bound
        }
        touched.add(self.bound - 1)
        return sorted(touched)

    def act(self, engine: Engine, stage: int) -> None:
        if stage == 0:
            return
        gamma = engine.env.gamma(self.e)
        x = engine.candidate(engine.tree.root.set_id)
        snap = stage - 1
        self.bound += 1
        for k in self._probe_args(engine, gamma, x, snap):
            before = gamma.axiom_count
            was = gamma.evaluate(engine.env.B, x, k, snap)
            margin = self.margin + (self.corrections if self.escalate else 0)
            _track_argument(engine, gamma, x, k, stage, k + 1 + margin)
            if gamma.axiom_count > before:
                if was is not None:
                    self.corrections += 1
                self._ceiling = max(self._ceiling, k + 1 + margin)
        self._seen = snap
        self._expected_axioms = gamma.axiom_count


class StingyGamma(Adversary):
    """Answers only arguments below a fixed cutoff, forever silent above."""

    kind = "StingyGamma"

    def __init__(self, spec: AdversarySpec, rng: random.Random):
        super().__init__(spec, rng)
        self.cutoff = self.knobs["cutoff"]

    def act(self, engine: Engine, stage: int) -> None:
        if stage == 0:
            return
        gamma = engine.env.gamma(self.e)
        x = engine.candidate(engine.tree.root.set_id)
        for k in range(self.cutoff):
            _track_argument(engine, gamma, x, k, stage, k + 1)


class CopycatDelta(Adversary):
    """Extends one delta table along the chosen candidate, define-once.

    Arguments are filled in order up to a bound that grows by one per
    boundary; a candidate change after a definition is never patched,
    so the table lags honestly.
    """

    kind = "CopycatDelta"

    def __init__(self, spec: AdversarySpec, rng: random.Random):
        super().__init__(spec, rng)
        self.set_kind = self.knobs["set"]
        self.bound = 0
        # Everything below the floor is known defined; a table touched by
        # someone else since the last look is rescanned before extending.
        self._floor = 0
        self._defined: set[int] = set()
        self._expected_entries = 0

    def _pick_set(self, engine: Engine) -> Optional[EnumSet]:
        if self.set_kind == "U":
            return engine.candidate(engine.tree.root.set_id)
        for set_id, cand in engine.candidates.items():
            if set_id.kind == self.set_kind:
                return cand
        return None

    def act(self, engine: Engine, stage: int) -> None:
        if stage == 0:
            return
        x = self._pick_set(engine)
        if x is None:
            return
        delta = engine.env.delta(self.e)
        if delta.entry_count != self._expected_entries:
            self._defined = {arg for arg, _, _ in delta.entries()}
        self.bound += 1
        for k in range(self._floor, self.bound):
            if k not in self._defined:
                delta.define(k, x.bit(k, stage - 1), stage)
                self._defined.add(k)
                engine.census.note(k)
        self._floor = self.bound
        self._expected_entries = delta.entry_count


class RandomNoise(Adversary):
    """Seeded fresh-number enumerations into the environment sets."""

    kind = "RandomNoise"

    def __init__(self, spec: AdversarySpec, rng: random.Random):
        super().__init__(spec, rng)
        self.rate = self.knobs["rate"]
        self.targets = tuple(self.knobs["targets"])

    def act(self, engine: Engine, stage: int) -> None:
        for name in self.targets:
            if self.rng.random() >= self.rate:
                continue
            target = engine.env.A if name == "A" else engine.env.B
            elem = engine.census.fresh()
            if target.entry_stage(elem) is None:
                target.add(elem, stage)


class Permitter(Adversary):
    """Feeds the built set the changes that trigger delayed permitting.

    Scripted drops land at their configured stages.  In auto mode the
    adversary watches the live local-guess rows and releases the least
    argument pinned to zero, one at a time, waiting for each release to
    draw attention before the next.
    """

    kind = "Permitter"

    def __init__(self, spec: AdversarySpec, rng: random.Random):
        super().__init__(spec, rng)
        self.drops = {int(k): tuple(v) for k, v in self.knobs["drops"].items()}
        self.auto = self.knobs["auto"]
        self.pending: Optional[int] = None

    def act(self, engine: Engine, stage: int) -> None:
        a_set = engine.env.A
        for a in self.drops.get(stage, ()):
            if a_set.entry_stage(a) is None:
                a_set.add(a, stage)
                engine.census.note(a)
        if not self.auto:
            return
        if self.pending is not None:
            if not self._resolved(engine, self.pending):
                return
            self.pending = None
        pick = self._least_zero_row(engine)
        if pick is not None and a_set.entry_stage(pick) is None:
            a_set.add(pick, stage)
            engine.census.note(pick)
            self.pending = pick

    def _resolved(self, engine: Engine, arg: int) -> bool:
        if any(rec.arg == arg for rec in engine.attention_log):
            return True
        return self._row_for(engine, arg) is None

    def _least_zero_row(self, engine: Engine) -> Optional[int]:
        for arg in sorted(engine.theta_index):
            if engine.env.A.entry_stage(arg) is None and self._row_for(engine, arg):
                return arg
        return None

    @staticmethod
    def _row_for(engine: Engine, arg: int):
        for node, epoch in engine.theta_index.get(arg, ()):
            if node.epoch != epoch:
                continue
            st = node.state
            if not isinstance(st, AttackerState) or st.attention_spent:
                continue
            if theta_value(st, arg) == 0:
                return node
        return None


_KINDS = {
    cls.kind: cls
    for cls in (FaithfulGamma, StingyGamma, CopycatDelta, RandomNoise, Permitter)
}


def build_adversaries(specs, seed: int) -> list[Adversary]:
    """Instantiate scenario adversaries with their per-position seeds."""
    return [
        _KINDS[spec.kind](spec, random.Random(seed * 1000 + idx))
        for idx, spec in enumerate(specs)
    ]
