"""Stage-indexed enumerable sets and axiom-style oracle functionals.

Everything the simulator computes is relative to a stage number s.  The
conventions, used consistently by every caller:

* An enumerable set is a monotone stream of (stage, element) events; an
  element is in the set at stage s iff it was enumerated at some stage <= s.
  Elements are never removed and never enumerated twice.
* A functional is a growing list of axioms.  An axiom applies to an oracle
  at stage s when the axiom was added by stage s and its oracle prefixes
  match the oracle's current bits.  The use of an axiom is its prefix
  length plus one.
* Agreement lengths are downward closed: the length at stage s is the
  largest m <= s + 1 such that the functional converges to the target's bit
  at every argument below m.  Computing initial segments is encoded here,
  not in axiom shape.

Evaluation at past stages must stay exact (the engine compares uses across
stages), so sets keep their full event log and applicability is derived
from entry stages rather than from mutable bitmaps.
"""

from __future__ import annotations

from bisect import bisect_right
from dataclasses import dataclass
from typing import Iterator, Optional, Sequence


class ConsistencyError(Exception):
    """A functional was asked to hold two clashing axioms."""


class EnumSet:
    """Monotone stagewise approximation of an enumerable set of naturals."""

    __slots__ = ("name", "_stage_of", "_event_stages", "_event_elems")

    def __init__(self, name: str):
        self.name = name
        self._stage_of: dict[int, int] = {}
        self._event_stages: list[int] = []
        self._event_elems: list[int] = []

    def __repr__(self) -> str:
        return f"EnumSet({self.name!r}, {len(self._event_elems)} events)"

    @property
    def event_count(self) -> int:
        return len(self._event_elems)

    def add(self, elem: int, stage: int) -> None:
        """Enumerate elem at the given stage.

        Events must arrive in nondecreasing stage order, and an element may
        enter only once; both are hard faults, not recoverable conditions.
        """
        if elem < 0 or stage < 0:
            raise ValueError(f"negative element or stage: ({elem}, {stage})")
        if elem in self._stage_of:
            raise ValueError(f"{self.name}: element {elem} enumerated twice")
        if self._event_stages and stage < self._event_stages[-1]:
            raise ValueError(
                f"{self.name}: event for stage {stage} after stage {self._event_stages[-1]}"
            )
        self._stage_of[elem] = stage
        self._event_stages.append(stage)
        self._event_elems.append(elem)

    def entry_stage(self, elem: int) -> Optional[int]:
        return self._stage_of.get(elem)

    def member(self, elem: int, stage: int) -> bool:
        s = self._stage_of.get(elem)
        return s is not None and s <= stage

    def bit(self, elem: int, stage: int) -> int:
        return 1 if self.member(elem, stage) else 0

    def prefix(self, length: int, stage: int) -> tuple[int, ...]:
        return tuple(self.bit(i, stage) for i in range(length))

    def events_between(self, after: int, upto: int) -> Iterator[tuple[int, int]]:
        """Yield (stage, elem) events with after < stage <= upto."""
        lo = bisect_right(self._event_stages, after)
        hi = bisect_right(self._event_stages, upto)
        for i in range(lo, hi):
            yield self._event_stages[i], self._event_elems[i]

    def changed_below(self, bound: int, after: int, upto: int) -> bool:
        return any(e < bound for _, e in self.events_between(after, upto))

    def first_change_below(
        self, bound: int, after: int, start_index: int = 0
    ) -> tuple[Optional[int], int]:
        """Earliest event with element < bound and stage > after, scanning
        from start_index on; returns (stage or None, resume index).

        Feeding the returned index back in makes repeated queries for a
        fixed (bound, after) incremental: each event is examined once.
        """
        stages = self._event_stages
        elems = self._event_elems
        for i in range(start_index, len(elems)):
            if stages[i] > after and elems[i] < bound:
                return stages[i], i
        return None, len(elems)

    def same(self, bound: int, after: int, upto: int) -> bool:
        """True iff no element below bound enters strictly after `after` and by `upto`."""
        if after > upto:
            raise ValueError(f"same({bound}) with reversed window {after} > {upto}")
        return not self.changed_below(bound, after, upto)

    def elements(self, stage: int) -> list[int]:
        return sorted(e for e, s in self._stage_of.items() if s <= stage)


@dataclass(frozen=True)
class OraclePair:
    """Equal-length prefixes of a joined pair of oracles, frozen at one stage."""

    first: tuple[int, ...]
    second: tuple[int, ...]

    def __post_init__(self) -> None:
        if len(self.first) != len(self.second):
            raise ValueError("oracle prefixes must have equal length")

    @property
    def length(self) -> int:
        return len(self.first)

    @staticmethod
    def join(first: EnumSet, second: EnumSet, length: int, stage: int) -> "OraclePair":
        return OraclePair(first.prefix(length, stage), second.prefix(length, stage))


class _Axiom:
    __slots__ = ("first", "second", "arg", "value", "stage", "_side_cache")

    def __init__(self, first: tuple[int, ...], second: tuple[int, ...], arg: int, value: int, stage: int):
        self.first = first
        self.second = second
        self.arg = arg
        self.value = value
        self.stage = stage
        # per oracle side: {id(set): (ready, death, event_count)} where ready is
        # the first stage all 1-positions are present (None if some never entered)
        # and death is the stage the first 0-position got enumerated (None if alive)
        self._side_cache: dict[int, tuple[Optional[int], Optional[int], int]] = {}

    @property
    def use(self) -> int:
        return len(self.first) + 1

    def _side_window(self, prefix: tuple[int, ...], oracle: EnumSet) -> tuple[Optional[int], Optional[int]]:
        key = id(oracle)
        cached = self._side_cache.get(key)
        if cached is not None:
            ready, death, seen = cached
            if oracle.event_count == seen:
                return ready, death
            # cheap revalidation: only events below the prefix length matter
            stages = oracle._event_stages
            elems = oracle._event_elems
            relevant = any(elems[i] < len(prefix) for i in range(seen, len(elems)))
            if not relevant:
                self._side_cache[key] = (ready, death, oracle.event_count)
                return ready, death
        ready: Optional[int] = -1
        death: Optional[int] = None
        for pos, want in enumerate(prefix):
            entered = oracle.entry_stage(pos)
            if want == 1:
                if entered is None:
                    ready = None
                elif ready is not None and entered > ready:
                    ready = entered
            elif entered is not None:
                if death is None or entered < death:
                    death = entered
        self._side_cache[key] = (ready, death, oracle.event_count)
        return ready, death

    def applies(self, first: EnumSet, second: EnumSet, stage: int) -> bool:
        if self.stage > stage:
            return False
        for prefix, oracle in ((self.first, first), (self.second, second)):
            ready, death = self._side_window(prefix, oracle)
            if ready is None or ready > stage:
                return False
            if death is not None and death <= stage:
                return False
        return True

    def applies_to_snapshot(self, snap: OraclePair) -> bool:
        n = len(self.first)
        if n > snap.length:
            return False
        return snap.first[:n] == self.first and snap.second[:n] == self.second


def _comparable(a: tuple[int, ...], b: tuple[int, ...]) -> bool:
    n = min(len(a), len(b))
    return a[:n] == b[:n]


class OracleFunctional:
    """Axiom table conditioned on a pair of oracle prefixes.

    Models an adversary-enumerated Turing functional on a joined oracle:
    axioms are (first-prefix, second-prefix, arg, value) quadruples tagged
    with the stage they entered the table.  The table rejects axioms that
    clash (compatible prefixes, same arg, different value) the moment they
    arrive, so downstream code may rely on evaluation being single-valued.
    """

    __slots__ = ("index", "_by_arg", "_max_stage", "_count", "max_prefix_len")

    def __init__(self, index: int):
        self.index = index
        self._by_arg: dict[int, list[_Axiom]] = {}
        self._max_stage = -1
        self._count = 0
        # oracle positions at or above this bound cannot affect any axiom
        self.max_prefix_len = 0

    def __repr__(self) -> str:
        return f"OracleFunctional(#{self.index}, {self._count} axioms)"

    @property
    def axiom_count(self) -> int:
        return self._count

    def axioms(self) -> Iterator[_Axiom]:
        for arg in sorted(self._by_arg):
            yield from self._by_arg[arg]

    def add_axiom(
        self,
        first: Sequence[int],
        second: Sequence[int],
        arg: int,
        value: int,
        stage: int,
    ) -> None:
        first = tuple(first)
        second = tuple(second)
        if len(first) != len(second):
            raise ValueError("axiom oracle prefixes must have equal length")
        if any(b not in (0, 1) for b in first + second):
            raise ValueError("oracle prefixes must be 0/1 sequences")
        if arg < 0 or value not in (0, 1) or stage < 0:
            raise ValueError(f"bad axiom ({arg}, {value}) at stage {stage}")
        if stage < self._max_stage:
            raise ValueError(f"axiom for stage {stage} after stage {self._max_stage}")
        new = _Axiom(first, second, arg, value, stage)
        bucket = self._by_arg.setdefault(arg, [])
        for old in bucket:
            if old.value != value and _comparable(old.first, first) and _comparable(old.second, second):
                raise ConsistencyError(
                    f"functional #{self.index}: arg {arg} gets {value} at stage {stage}"
                    f" but compatible axiom from stage {old.stage} says {old.value}"
                )
        # shortest applicable axiom wins, so keep buckets sorted by length
        bucket.append(new)
        bucket.sort(key=lambda ax: len(ax.first))
        self._max_stage = stage
        self._count += 1
        if len(first) > self.max_prefix_len:
            self.max_prefix_len = len(first)

    def evaluate(
        self, first: EnumSet, second: EnumSet, arg: int, stage: int
    ) -> Optional[tuple[int, int]]:
        """Value and use of the shortest axiom applying to (first, second) at stage."""
        for ax in self._by_arg.get(arg, ()):
            if ax.applies(first, second, stage):
                return ax.value, ax.use
        return None

    def use_key(self, first: EnumSet, second: EnumSet, arg: int, stage: int) -> float:
        """Use at stage, with divergence mapped to +inf so comparisons are total."""
        got = self.evaluate(first, second, arg, stage)
        return float("inf") if got is None else got[1]

    def evaluate_snapshot(self, snap: OraclePair, arg: int, stage: Optional[int] = None) -> Optional[tuple[int, int]]:
        """Like evaluate, but against frozen prefixes; axioms longer than the snapshot never apply."""
        for ax in self._by_arg.get(arg, ()):
            if stage is not None and ax.stage > stage:
                continue
            if ax.applies_to_snapshot(snap):
                return ax.value, ax.use
        return None


class SingleOracleFunctional:
    """Axiom table conditioned on one oracle prefix.

    The one-oracle analog of OracleFunctional, with the same consistency
    discipline and the same use convention (prefix length plus one).
    Internally an axiom is stored with an empty second prefix, which every
    oracle satisfies vacuously.
    """

    __slots__ = ("index", "_by_arg", "_max_stage", "_count", "max_prefix_len")

    def __init__(self, index: int):
        self.index = index
        self._by_arg: dict[int, list[_Axiom]] = {}
        self._max_stage = -1
        self._count = 0
        # oracle positions at or above this bound cannot affect any axiom
        self.max_prefix_len = 0

    def __repr__(self) -> str:
        return f"SingleOracleFunctional(#{self.index}, {self._count} axioms)"

    @property
    def axiom_count(self) -> int:
        return self._count

    def axioms(self) -> Iterator[_Axiom]:
        for arg in sorted(self._by_arg):
            yield from self._by_arg[arg]

    def add_axiom(self, prefix: Sequence[int], arg: int, value: int, stage: int) -> None:
        prefix = tuple(prefix)
        if any(b not in (0, 1) for b in prefix):
            raise ValueError("oracle prefix must be a 0/1 sequence")
        if arg < 0 or value not in (0, 1) or stage < 0:
            raise ValueError(f"bad axiom ({arg}, {value}) at stage {stage}")
        if stage < self._max_stage:
            raise ValueError(f"axiom for stage {stage} after stage {self._max_stage}")
        bucket = self._by_arg.setdefault(arg, [])
        for old in bucket:
            if old.value != value and _comparable(old.first, prefix):
                raise ConsistencyError(
                    f"functional #{self.index}: arg {arg} gets {value} at stage {stage}"
                    f" but compatible axiom from stage {old.stage} says {old.value}"
                )
        # shortest applicable axiom wins, so keep buckets sorted by length
        bucket.append(_Axiom(prefix, (), arg, value, stage))
        bucket.sort(key=lambda ax: len(ax.first))
        self._max_stage = stage
        self._count += 1
        if len(prefix) > self.max_prefix_len:
            self.max_prefix_len = len(prefix)

    def evaluate(self, oracle: EnumSet, arg: int, stage: int) -> Optional[tuple[int, int]]:
        """Value and use of the shortest axiom applying to the oracle at stage."""
        for ax in self._by_arg.get(arg, ()):
            if ax.applies(oracle, _NO_ORACLE, stage):
                return ax.value, ax.use
        return None

    def use_key(self, oracle: EnumSet, arg: int, stage: int) -> float:
        """Use at stage, with divergence mapped to +inf so comparisons are total."""
        got = self.evaluate(oracle, arg, stage)
        return float("inf") if got is None else got[1]


# shared stand-in for the missing side of a single-oracle axiom
_NO_ORACLE = EnumSet("-")


class PlainFunctional:
    """Oracle-free partial 0/1 guess, one immutable entry per argument."""

    __slots__ = ("index", "_entries", "_max_stage")

    def __init__(self, index: int):
        self.index = index
        self._entries: dict[int, tuple[int, int]] = {}
        self._max_stage = -1

    def __repr__(self) -> str:
        return f"PlainFunctional(#{self.index}, {len(self._entries)} entries)"

    @property
    def entry_count(self) -> int:
        return len(self._entries)

    def define(self, arg: int, value: int, stage: int) -> None:
        if arg < 0 or value not in (0, 1) or stage < 0:
            raise ValueError(f"bad entry ({arg}, {value}) at stage {stage}")
        if arg in self._entries:
            raise ConsistencyError(f"functional #{self.index}: arg {arg} defined twice")
        if stage < self._max_stage:
            raise ValueError(f"entry for stage {stage} after stage {self._max_stage}")
        self._entries[arg] = (value, stage)
        self._max_stage = stage

    def evaluate(self, arg: int, stage: int) -> Optional[int]:
        got = self._entries.get(arg)
        if got is None or got[1] > stage:
            return None
        return got[0]

    def entries(self) -> Iterator[tuple[int, int, int]]:
        for arg in sorted(self._entries):
            value, stage = self._entries[arg]
            yield arg, value, stage


def agreement_length(
    func: OracleFunctional,
    first: EnumSet,
    second: EnumSet,
    target: EnumSet,
    stage: int,
) -> int:
    """Largest m <= stage + 1 with func(first, second; k) = target(k) for all k < m."""
    m = 0
    while m <= stage:
        got = func.evaluate(first, second, m, stage)
        if got is None or got[0] != target.bit(m, stage):
            break
        m += 1
    return m


def plain_agreement_length(func: PlainFunctional, target: EnumSet, stage: int) -> int:
    """Largest m <= stage + 1 with func(k) = target(k) for all k < m."""
    m = 0
    while m <= stage:
        got = func.evaluate(m, stage)
        if got is None or got != target.bit(m, stage):
            break
        m += 1
    return m


def single_agreement_length(
    func: SingleOracleFunctional, oracle: EnumSet, target: EnumSet, stage: int
) -> int:
    """Largest m <= stage + 1 with func(oracle; k) = target(k) for all k < m."""
    m = 0
    while m <= stage:
        got = func.evaluate(oracle, m, stage)
        if got is None or got[0] != target.bit(m, stage):
            break
        m += 1
    return m


def is_expansionary(history: Sequence[int], current: int) -> bool:
    """True iff current strictly exceeds every previously recorded length.

    A node's first measured stage is vacuously expansionary.
    """
    return all(current > h for h in history)
