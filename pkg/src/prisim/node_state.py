"""Per-node runtime state for the construction engine.

Strategy nodes carry small mutable records between stages: sparse edge
parameter families for the hunter and steering kinds, append-only block
tables for the locally built functionals, guess tables and witness
assignments for the attacker kinds, and bookkeeping records for pairs,
pending enumerations, and disarming processes.  Everything here is plain
data; the engine owns all transitions.
"""

from __future__ import annotations

import bisect
from dataclasses import dataclass
from typing import Iterator, Optional

from .tree import Node

# Edge parameter styles.  A "shift-at" family (used by hunters) pins the
# companion columns at the visited index and rewrites every higher index;
# a "shift-above" family (used by steering and pairing nodes) rewrites
# only the indices strictly above the visited one.
SHIFT_AT = "shift-at"
SHIFT_ABOVE = "shift-above"


class EdgeParams:
    """Sparse map from edge index to a stage-derived parameter value.

    The map is stored as an ascending list of anchors (n, s).  A fresh
    anchor supersedes every anchor at an index >= its own, so queries
    resolve against the nearest anchor at or below the index: an index
    strictly above an anchor (n, s) reads s + (k - n), and an index with
    no anchor at or below it reads its own default k.  Under SHIFT_AT the
    anchor index itself reads s, but only in the U and V columns; the
    anchored column keeps its older value.
    """

    __slots__ = ("style", "version", "_anchors")

    def __init__(self, style: str) -> None:
        if style not in (SHIFT_AT, SHIFT_ABOVE):
            raise ValueError(f"unknown edge-parameter style {style!r}")
        self.style = style
        # bumped whenever an anchor moves, so readers can cache values
        self.version = 0
        self._anchors: list[tuple[int, int]] = []

    def record_visit(self, n: int, stage: int) -> None:
        """Install the anchor for a visit of index ``n`` at ``stage``."""
        cut = bisect.bisect_left(self._anchors, (n, -1))
        del self._anchors[cut:]
        self._anchors.append((n, stage))
        self.version += 1

    def value(self, k: int, column: str = "W") -> int:
        i = bisect.bisect_right(self._anchors, (k, float("inf"))) - 1
        while i >= 0:
            n, s = self._anchors[i]
            if n < k:
                return s + (k - n)
            # n == k: the anchor covers its own index only in the
            # companion columns of a SHIFT_AT family.
            if self.style == SHIFT_AT and column in ("U", "V"):
                return s
            i -= 1
        return k

    def reset(self) -> None:
        self._anchors.clear()
        self.version += 1

    def anchors(self) -> tuple[tuple[int, int], ...]:
        return tuple(self._anchors)


def update_edge_params_r(params: EdgeParams, n: int, column: str, stage: int) -> None:
    """Apply a hunter's numeric dispatch: only the W column shifts anything."""
    if column == "W":
        params.record_visit(n, stage)


def update_edge_params_s(params: EdgeParams, n: int, stage: int) -> None:
    params.record_visit(n, stage)


def update_edge_params_c(params: EdgeParams, n: int, stage: int) -> None:
    params.record_visit(n, stage)


@dataclass(frozen=True)
class Block:
    """One interval (lo, hi] of a locally built functional, with its use.

    Records are never deleted: a later record covering the same argument
    supersedes an earlier one, and a record whose oracle has changed below
    its use is dead for every later stage.
    """

    lo: int
    hi: int
    use: int
    stage: int


class BlockTable:
    """Append-only table of interval definitions against one oracle side."""

    __slots__ = ("records", "max_use", "_memo", "_deaths")

    def __init__(self) -> None:
        self.records: list[Block] = []
        # oracle events at or above this bound cannot kill any record
        self.max_use = 0
        # arg -> (records scanned so far, indices of records covering arg)
        self._memo: dict[int, tuple[int, list[int]]] = {}
        # (record index, oracle id) -> (resume index, death stage or None)
        self._deaths: dict[tuple[int, int], tuple[int, Optional[int]]] = {}

    def define(self, lo: int, hi: int, use: int, stage: int) -> Block:
        rec = Block(lo, hi, use, stage)
        self.records.append(rec)
        if use > self.max_use:
            self.max_use = use
        return rec

    def _covering_indices(self, arg: int) -> list[int]:
        scanned, hits = self._memo.get(arg, (0, []))
        total = len(self.records)
        if scanned < total:
            for i in range(scanned, total):
                rec = self.records[i]
                if rec.lo < arg <= rec.hi:
                    hits.append(i)
            self._memo[arg] = (total, hits)
        return hits

    def _death(self, index: int, rec: Block, oracle) -> Optional[int]:
        """First stage after definition at which the oracle moved below the
        record's use; once found it is final, so the scan is incremental."""
        key = (index, id(oracle))
        pos, death = self._deaths.get(key, (0, None))
        if death is None:
            death, pos = oracle.first_change_below(rec.use, rec.stage, pos)
            self._deaths[key] = (pos, death)
        return death

    def covering_index(self, arg: int, oracle, stage: int) -> Optional[int]:
        """Index of the newest record defined by ``stage`` still answering
        ``arg``.

        A record answers when its interval contains the argument and the
        oracle agrees with the record's definition stage below its use.
        A dead newest record leaves the argument divergent: older records
        underneath it never come back.
        """
        hits = self._covering_indices(arg)
        for i in reversed(hits):
            rec = self.records[i]
            if rec.stage > stage:
                continue
            death = self._death(i, rec, oracle)
            if death is None or death > stage:
                return i
            return None
        return None

    def covering(self, arg: int, oracle, stage: int) -> Optional[Block]:
        i = self.covering_index(arg, oracle, stage)
        return None if i is None else self.records[i]

    def death_stage(self, index: int, oracle) -> Optional[int]:
        """First stage after definition at which the oracle moved below the
        record's use, against any oracle the caller watches."""
        return self._death(index, self.records[index], oracle)

    def converges(self, arg: int, oracle, stage: int) -> bool:
        return self.covering(arg, oracle, stage) is not None


class MeasureState:
    """Running record of a measuring node's agreement lengths.

    Only the count and the maximum are kept: a length is expansionary
    exactly when it strictly exceeds every earlier one, so the first
    measurement is vacuously expansionary and later ones compare against
    the maximum.  The memo fields let the engine resume the agreement
    scan where the previous one stopped whenever nothing it depends on
    has changed.
    """

    __slots__ = (
        "count",
        "best",
        "last_stage",
        "memo_len",
        "memo_counts",
        "memo_capped",
        "memo_stage",
    )

    def __init__(self) -> None:
        self.count = 0
        self.best = -1
        self.last_stage: Optional[int] = None
        self.memo_len = 0
        self.memo_counts: Optional[tuple[int, ...]] = None
        # True when the last scan ran out of stage rather than hitting a miss
        self.memo_capped = False
        self.memo_stage = -1

    def record(self, length: int) -> bool:
        """Record a measured length; True iff it was expansionary."""
        expansionary = self.count == 0 or length > self.best
        self.count += 1
        if length > self.best:
            self.best = length
        return expansionary


class HunterState:
    """Edge parameters and block table of an R- or S-kind node."""

    __slots__ = (
        "params",
        "blocks",
        "last_stage",
        "param_snapshot",
        "scan_n",
        "scan_b_count",
    )

    def __init__(self, style: str) -> None:
        self.params = EdgeParams(style)
        self.blocks = BlockTable()
        self.last_stage: Optional[int] = None
        self.param_snapshot: dict[tuple[str, int], int] = {}
        # indices below scan_n held live blocks when the oracle side last
        # stood at scan_b_count events; the index walk may resume there
        self.scan_n = 0
        self.scan_b_count = -1


@dataclass
class PairRecord:
    """A live (xi-child, q) pair established by a pairing node."""

    xi: Node
    n: int
    q: Node
    established: int
    canceled: Optional[int] = None

    @property
    def xi_child_edge(self) -> tuple[int, str]:
        return (self.n, "U")


class SteeringState:
    """Edge parameters and live pairs of a C-kind node."""

    __slots__ = ("params", "pairs", "last_stage", "param_snapshot")

    def __init__(self) -> None:
        self.params = EdgeParams(SHIFT_ABOVE)
        self.pairs: dict[int, PairRecord] = {}
        self.last_stage: Optional[int] = None
        self.param_snapshot: dict[tuple[str, int], int] = {}

    def max_pair_index(self) -> int:
        return max(self.pairs, default=-1)


class AttackerState:
    """Guess table, witness assignments, and epoch marks of a P/Q node."""

    __slots__ = ("epoch_start", "theta", "dw", "attention_spent", "pair")

    def __init__(self) -> None:
        self.epoch_start: Optional[int] = None
        # theta maps argument -> (guessed bit, definition stage)
        self.theta: dict[int, tuple[int, int]] = {}
        # dw maps argument -> {target node -> witness}
        self.dw: dict[int, dict[Node, int]] = {}
        self.attention_spent = False
        self.pair: Optional[PairRecord] = None

    def next_theta_arg(self, stage: int) -> int:
        a = self.epoch_start if self.epoch_start is not None else stage
        while a in self.theta:
            a += 1
        return a

    def clear_for_disarm(self) -> None:
        # The pair survives a disarm; everything guessed is discarded.
        self.epoch_start = None
        self.theta.clear()
        self.dw.clear()
        self.attention_spent = False


def define_theta(state: AttackerState, arg: int, bit: int, stage: int) -> None:
    if arg in state.theta:
        raise ValueError(f"guess table already defined at {arg}")
    state.theta[arg] = (bit, stage)


def theta_value(state: AttackerState, arg: int) -> Optional[int]:
    entry = state.theta.get(arg)
    return entry[0] if entry is not None else None


@dataclass(frozen=True)
class PendingWitness:
    """A witness parked at its permitting node, awaiting release."""

    witness: int
    arg: int
    beta: Node
    beta_epoch: int
    target: Node
    stage: int

    def live(self) -> bool:
        return self.beta.epoch == self.beta_epoch


class PermitState:
    """FIFO of pending witnesses at a permitting node."""

    __slots__ = ("pending",)

    def __init__(self) -> None:
        self.pending: list[PendingWitness] = []


@dataclass
class DisarmProcess:
    """Watcher registered per steering edge when a pair is established.

    It watches the interplay between the second-column functional built
    below the steering node and the first-column uses at the pairing
    node, and disarms its attacker when a protected change slips through.
    """

    xi: Node
    m: int
    s_node: Node
    n: int
    q: Node
    pair: PairRecord
    registered: int
    # (definition stage, second-column use, first-column use or None)
    crossing_memo: Optional[tuple[int, int, Optional[int]]] = None
    below_prev: bool = False
    x_snapshot: int = 0

    def live(self) -> bool:
        return self.pair.canceled is None


@dataclass(frozen=True)
class AttentionRecord:
    """One grant of attention at the permitting centre."""

    stage: int
    arg: int
    beta: Node
    target: Node
    witness: int


class Census:
    """High-water mark over every number the construction has mentioned."""

    __slots__ = ("_high",)

    def __init__(self) -> None:
        self._high = 0

    def note(self, *values: int) -> None:
        for v in values:
            if v > self._high:
                self._high = v

    def fresh(self) -> int:
        self._high += 1
        return self._high

    @property
    def high(self) -> int:
        return self._high


def world_edges(q_node: Node) -> list[tuple[Node, int]]:
    """Steering edges (S-node, index) on the path from the world entrance
    down to ``q_node``, outermost first."""
    edges: list[tuple[Node, int]] = []
    xi = q_node.world
    node = q_node
    chain: list[Node] = []
    while node is not None and node is not xi:
        chain.append(node)
        node = node.parent
    for node in reversed(chain):
        parent = node.parent
        if parent.kind == "S" and isinstance(node.edge, tuple):
            edges.append((parent, node.edge[0]))
    return edges


def compute_tp(q_node: Node) -> int:
    """Pairing threshold: one above every steering parameter recorded on
    the edges above the pairing node inside its world."""
    edges = world_edges(q_node)
    if not edges:
        raise ValueError(f"{q_node.display_path} has no steering edge above it")
    best = 0
    for s_node, n in edges:
        st = s_node.state
        if st is not None:
            best = max(best, st.params.value(n, "V"))
        else:
            best = max(best, n)
    return best + 1


def assign_witnesses(
    state: AttackerState, arg: int, targets: list[Node], census: Census
) -> dict[Node, int]:
    """Draw one fresh witness per target for ``arg``, outermost target last."""
    per_target: dict[Node, int] = {}
    for target in targets:
        per_target[target] = census.fresh()
    state.dw[arg] = per_target
    return per_target


def prepared(witness: int, delta, candidate, stage: int) -> bool:
    """A witness is prepared once the adversary has pinned it to zero and
    the candidate set still omits it."""
    return delta.evaluate(witness, stage) == 0 and not candidate.member(witness, stage)


def iter_stateful(root: Node) -> Iterator[Node]:
    """All state-bearing nodes in the subtree, using the live counters."""
    if root.live == 0:
        return
    stack = [root]
    while stack:
        node = stack.pop()
        if node.live == 0:
            continue
        if node.state is not None:
            yield node
        stack.extend(node.children.values())
