"""The single-parameter warm-up construction.

A run plays against one externally enumerated set W together with
scripted guessing tables: for each level i an opponent table trying to
compute the built set A from the constructed set B, and a tracking
table trying to compute W from A.  The construction interleaves two
requirement kinds down a branching spine:

* witness nodes (even depths) diagonalize the built set A against the
  opponent table of their level, one witness at a time;
* tracker nodes (odd depths) measure how far W agrees with the tracking
  table's picture of A, and on every new record of agreement keep their
  own two-sided table computing A from (B, W) correct, extending a plain
  copy of W as the fallback.

The conflict is the classic one: a witness entering A falsifies every
tracker answer at that argument.  At the tracker's next record stage the
damage is repaired one way or the other: if W itself moved below the
stale answer's prefix, a fresh axiom rides the change for free; if not,
the tracker spends a change of its own in B, which may cost the witness
node its computation, and extends the fallback copy in compensation.
Exactly one of the two modes is charged per registered attack, and the
audit below holds the trace to that.

Trees, outcome flips, and initialization follow the usual discipline:
trackers branch on record-versus-repeat, everything right of the stage's
path is initialized, and an attack ends its stage and initializes the
attacker's subtree.
"""
from __future__ import annotations

from typing import Iterator, Optional, Union

from .node_state import Census
from .re_core import EnumSet, OracleFunctional, PlainFunctional, SingleOracleFunctional

__all__ = [
    "BasicEngine",
    "BasicEnvironment",
    "BasicFault",
    "DichotomyAudit",
    "TrackerState",
    "WitnessState",
    "audit_dichotomy",
    "check_stage",
]

OUT_RECORD = "inf"
OUT_REPEAT = "0"
OUT_NEXT = "0"


class BasicFault(Exception):
    """An internal discipline of the run was broken."""


class BasicEnvironment:
    """Externally driven inputs: the set W and the per-level tables."""

    def __init__(self) -> None:
        self.W = EnumSet("W")
        self._opponents: dict[int, SingleOracleFunctional] = {}
        self._trackings: dict[int, SingleOracleFunctional] = {}

    def opponent(self, i: int) -> SingleOracleFunctional:
        """Level i's table trying to compute A from B."""
        table = self._opponents.get(i)
        if table is None:
            table = self._opponents[i] = SingleOracleFunctional(i)
        return table

    def tracking(self, i: int) -> SingleOracleFunctional:
        """Level i's table trying to compute W from A."""
        table = self._trackings.get(i)
        if table is None:
            table = self._trackings[i] = SingleOracleFunctional(i)
        return table


class WitnessState:
    """One diagonalization witness and what happened to it."""

    __slots__ = ("witness", "attacked", "pick_stage")

    def __init__(self) -> None:
        self.witness: Optional[int] = None
        self.attacked = False
        self.pick_stage = -1


class TrackerState:
    """Agreement history plus the two tables the tracker builds."""

    __slots__ = (
        "count",
        "best",
        "table",
        "fallback",
        "fallback_args",
        "pending",
        "last_record",
    )

    def __init__(self, level: int) -> None:
        self.count = 0
        self.best = -1
        self.table = OracleFunctional(level)
        self.fallback = PlainFunctional(level)
        self.fallback_args: set[int] = set()
        # (argument, attack stage, prefix length of the answer broken then)
        self.pending: list[tuple[int, int, int]] = []
        self.last_record = -1


NodeState = Union[WitnessState, TrackerState]


def _child(path: str, edge: str) -> str:
    return edge if not path else f"{path}.{edge}"


def _display(path: str) -> str:
    return path if path else "<root>"


def _under(path: str, ancestor: str) -> bool:
    if not ancestor:
        return bool(path)
    return path.startswith(ancestor + ".")


class BasicEngine:
    """Deterministic driver for one warm-up run against W with label e."""

    kind = "basic"

    def __init__(self, e: int, env: Optional[BasicEnvironment] = None) -> None:
        self.e = e
        self.env = env if env is not None else BasicEnvironment()
        self.A = EnumSet("A")
        self.B = EnumSet("B")
        self.census = Census()
        self.trace: list[dict] = []
        self.stage = -1
        # states keyed by dotted edge path, in creation order
        self._states: dict[str, NodeState] = {}

    # ------------------------------------------------------------------
    # trace events

    def _emit(self, event: dict) -> None:
        self.trace.append(event)

    def _ev_initialize(self, path: str, by: str) -> None:
        self._emit(
            {"ev": "Initialize", "stage": self.stage, "path": _display(path), "by": by}
        )

    def _ev_define(self, path: str, kind: str, arg: int, value: int, use: Optional[int]) -> None:
        self._emit(
            {
                "ev": "DefineLocal",
                "stage": self.stage,
                "path": _display(path),
                "kind": kind,
                "arg": arg,
                "value": value,
                "use": use,
            }
        )

    # ------------------------------------------------------------------
    # structure

    @staticmethod
    def level(path: str) -> int:
        """Requirement index of the node at this path."""
        depth = path.count(".") + 1 if path else 0
        return depth // 2

    def states(self) -> Iterator[tuple[str, NodeState]]:
        """Live node states in creation order."""
        return iter(self._states.items())

    def state_at(self, path: str) -> Optional[NodeState]:
        return self._states.get(path)

    def _witness_state(self, path: str) -> WitnessState:
        st = self._states.get(path)
        if st is None:
            st = self._states[path] = WitnessState()
        return st

    def _tracker_state(self, path: str, depth: int) -> TrackerState:
        st = self._states.get(path)
        if st is None:
            st = self._states[path] = TrackerState(depth // 2)
        return st

    def _initialize(self, doomed: list[str], by: str) -> None:
        for path in doomed:
            del self._states[path]
            self._ev_initialize(path, by)

    # ------------------------------------------------------------------
    # the stage walk

    def run_stage(self, stage: int) -> list[dict]:
        if stage != self.stage + 1:
            raise BasicFault(f"stages must advance one at a time, got {stage}")
        self.stage = stage
        self.trace = []
        self.census.note(stage)
        for _, x in self.env.W.events_between(stage - 1, stage):
            self.census.note(x)
        path, depth = "", 0
        while depth <= stage:
            self._emit({"ev": "Visit", "stage": stage, "path": _display(path)})
            if depth % 2 == 0:
                if self._act_witness(path):
                    break
                path = _child(path, OUT_NEXT)
            else:
                path = _child(path, self._act_tracker(path, depth))
            depth += 1
        return self.trace

    # ------------------------------------------------------------------
    # witness nodes

    def _act_witness(self, path: str) -> bool:
        """Diagonalize at this level; True ends the stage (an attack)."""
        s = self.stage
        st = self._witness_state(path)
        if st.witness is None:
            st.witness = self.census.fresh()
            st.attacked = False
            st.pick_stage = s
            self._emit(
                {"ev": "Witness", "stage": s, "path": _display(path), "witness": st.witness}
            )
        a = st.witness
        got = self.env.opponent(self.level(path)).evaluate(self.B, a, s)
        if got is None or got[0] != self.A.bit(a, s):
            return False
        if self.A.bit(a, s) == 1:
            # the opponent caught up with the attack; start over
            st.witness = None
            self._ev_initialize(path, _display(path))
            return False
        self._register_attacks(path, a)
        self.A.add(a, s)
        self.census.note(a)
        st.attacked = True
        self._emit({"ev": "Attack", "stage": s, "path": _display(path), "witness": a})
        self._initialize(
            [p for p in self._states if _under(p, path)], _display(path)
        )
        return True

    def _register_attacks(self, path: str, a: int) -> None:
        """File the damage with every tracker the attacker sits under
        through its record outcome; only a converging answer can break."""
        s = self.stage
        parts = path.split(".") if path else []
        for i in range(1, len(parts), 2):
            if parts[i] != OUT_RECORD:
                continue
            anc = ".".join(parts[:i])
            st = self._states.get(anc)
            if not isinstance(st, TrackerState):
                continue
            got = st.table.evaluate(self.B, self.env.W, a, s)
            if got is None or got[0] == 1:
                continue
            st.pending.append((a, s, got[1] - 1))
            self._emit(
                {"ev": "PendingRepair", "stage": s, "path": _display(anc), "arg": a}
            )

    # ------------------------------------------------------------------
    # tracker nodes

    def _agreement(self, path: str) -> int:
        s = self.stage
        tracking = self.env.tracking(self.level(path))
        n = 0
        while n < s + 1:
            got = tracking.evaluate(self.A, n, s)
            if got is None or got[0] != self.env.W.bit(n, s):
                break
            n += 1
        return n

    def agreement(self, path: str) -> int:
        """Measured agreement between W and this level's picture of A."""
        return self._agreement(path)

    def _act_tracker(self, path: str, depth: int) -> str:
        s = self.stage
        st = self._tracker_state(path, depth)
        length = self._agreement(path)
        record = st.count == 0 or length > st.best
        st.count += 1
        if length > st.best:
            st.best = length
        if not record:
            return OUT_REPEAT
        st.last_record = s
        self._emit(
            {"ev": "Expansion", "stage": s, "path": _display(path), "length": length}
        )
        leftovers: list[tuple[int, int, int]] = []
        for item in st.pending:
            if not self._repair(path, st, item):
                leftovers.append(item)
        st.pending = leftovers
        for k in range(length):
            if st.table.evaluate(self.B, self.env.W, k, s) is None:
                self._define(path, st, k)
        doomed_root = _child(path, OUT_REPEAT)
        self._initialize(
            [
                p
                for p in self._states
                if p == doomed_root or _under(p, doomed_root)
            ],
            _display(path),
        )
        return OUT_RECORD

    def _repair(self, path: str, st: TrackerState, item: tuple[int, int, int]) -> bool:
        """Resolve one registered attack; False leaves it for later."""
        s = self.stage
        a, attack_stage, broken_len = item
        want = self.A.bit(a, s)
        got = st.table.evaluate(self.B, self.env.W, a, s)
        if got is not None and got[0] == want:
            return True
        if got is not None:
            # a stale answer still stands, so W never moved below it and
            # the repair must be paid for with a change in B
            live_len = got[1] - 1
            spot = next(
                (p for p in range(live_len - 1, -1, -1) if self.B.bit(p, s) == 0),
                None,
            )
            if spot is None:
                return False
            mode = "deltaExtended"
            self._emit(
                {"ev": "Repair", "stage": s, "path": _display(path), "arg": a, "mode": mode}
            )
            self.B.add(spot, s)
            self.census.note(spot)
            self._emit({"ev": "Spoil", "stage": s, "path": _display(path), "x": spot})
        else:
            freed = not self.env.W.same(broken_len, attack_stage, s)
            mode = "gammaFixed" if freed else "deltaExtended"
            self._emit(
                {"ev": "Repair", "stage": s, "path": _display(path), "arg": a, "mode": mode}
            )
        self._define(path, st, a)
        if mode == "deltaExtended":
            self._extend_fallback(path, st)
        return True

    def _define(self, path: str, st: TrackerState, arg: int) -> None:
        """One fresh axiom answering the current built-set bit at arg."""
        s = self.stage
        length = self.census.fresh()
        st.table.add_axiom(
            self.B.prefix(length, s),
            self.env.W.prefix(length, s),
            arg,
            self.A.bit(arg, s),
            s,
        )
        self.census.note(length + 1)
        self._ev_define(path, "Gamma", arg, self.A.bit(arg, s), length + 1)

    def _extend_fallback(self, path: str, st: TrackerState) -> None:
        s = self.stage
        for k in range(self._agreement(path)):
            if k in st.fallback_args:
                continue
            value = self.env.W.bit(k, s)
            st.fallback.define(k, value, s)
            st.fallback_args.add(k)
            self._ev_define(path, "Delta", k, value, None)

    # ------------------------------------------------------------------
    # queries

    def witness_satisfied(self, path: str, stage: Optional[int] = None) -> bool:
        """True while the node's witness diagonalizes: the opponent's
        answer at it diverges or disagrees with the built set."""
        s = self.stage if stage is None else stage
        st = self._states.get(path)
        if not isinstance(st, WitnessState) or st.witness is None:
            return False
        got = self.env.opponent(self.level(path)).evaluate(self.B, st.witness, s)
        return got is None or got[0] != self.A.bit(st.witness, s)


# ----------------------------------------------------------------------
# per-stage state check

def check_stage(engine: BasicEngine) -> list[str]:
    """On record stages every converging tracker answer must equal the
    built set, repairs included.  An attack later in the same stage is
    excused exactly when its damage is registered for repair."""
    out = []
    s = engine.stage
    for path, st in engine.states():
        if not isinstance(st, TrackerState) or st.last_record != s:
            continue
        booked = {arg for arg, attacked, _ in st.pending if attacked == s}
        for arg in {ax.arg for ax in st.table.axioms()}:
            if arg in booked:
                continue
            got = st.table.evaluate(engine.B, engine.env.W, arg, s)
            if got is not None and got[0] != engine.A.bit(arg, s):
                out.append(
                    f"{_display(path)}: answer {got[0]} at {arg} contradicts the "
                    f"built set on a record stage"
                )
    return out


# ----------------------------------------------------------------------
# trace audit

class DichotomyAudit:
    """Streaming check that every registered attack is resolved exactly
    once, in exactly one mode, at the tracker's next record stage."""

    def __init__(self) -> None:
        # (tracker path, argument) -> registration stage
        self.pending: dict[tuple[str, int], int] = {}
        self.violations: list[str] = []
        self._stage: Optional[int] = None
        self._events: list[dict] = []

    def feed(self, event: dict) -> None:
        stage = event["stage"]
        if stage != self._stage:
            self._close_stage()
            self._stage = stage
            self._events = []
        self._events.append(event)

    def finish(self) -> list[str]:
        self._close_stage()
        return self.violations

    def _close_stage(self) -> None:
        events = self._events
        if not events:
            return
        s = self._stage
        recorded = {ev["path"] for ev in events if ev["ev"] == "Expansion"}
        repaired: set[tuple[str, int]] = set()
        for ev in events:
            kind = ev["ev"]
            if kind == "PendingRepair":
                key = (ev["path"], ev["arg"])
                if key in self.pending:
                    self.violations.append(
                        f"stage {s}: attack at {ev['arg']} registered twice "
                        f"with {ev['path']}"
                    )
                self.pending[key] = s
            elif kind == "Repair":
                key = (ev["path"], ev["arg"])
                if key in repaired:
                    self.violations.append(
                        f"stage {s}: {ev['path']} repaired {ev['arg']} twice"
                    )
                elif key not in self.pending:
                    self.violations.append(
                        f"stage {s}: {ev['path']} repaired {ev['arg']} without "
                        f"a registered attack"
                    )
                else:
                    del self.pending[key]
                    repaired.add(key)
                if ev["path"] not in recorded:
                    self.violations.append(
                        f"stage {s}: {ev['path']} repaired {ev['arg']} outside "
                        f"a record stage"
                    )
            elif kind == "Initialize":
                dead = ev["path"]
                for tracker, arg in list(self.pending):
                    if tracker == dead or _under(tracker, dead):
                        del self.pending[(tracker, arg)]
        for (tracker, arg), registered in self.pending.items():
            if tracker in recorded and registered < s:
                self.violations.append(
                    f"stage {s}: {tracker} reached a record stage with the "
                    f"attack at {arg} still unresolved"
                )


def audit_dichotomy(events) -> list[str]:
    audit = DichotomyAudit()
    for event in events:
        audit.feed(event)
    return audit.finish()
