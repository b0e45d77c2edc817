"""Runtime verification of the per-stage safety conditions.

State checks read the engine directly and confirm that every locally
built functional still satisfies its protection condition: hunter blocks
may only survive while the watched set is unchanged below their use, and
steering-side blocks must be covered by one of the two licensed change
patterns.  Trace audits consume the event stream incrementally and
confirm the pair discipline and the permitting discipline.  All checks
return human-readable violation strings; an empty list means the stage
or run was clean.
"""

from __future__ import annotations

from typing import Iterable, Optional

from .engine import Engine
from .node_state import AttackerState, HunterState, theta_value
from .tree import Node, Tree, outcome_rank

__all__ = [
    "check_r_condition",
    "check_s_condition",
    "check_r_correctness",
    "check_s_correctness",
    "check_stage",
    "check_theta_domains",
    "StageChecker",
    "PairAudit",
    "PermitAudit",
    "audit_pairs",
    "audit_permitting",
    "approximate_true_path",
]


def _block_points(engine: Engine, st: HunterState, column: str, start: int = 0):
    """Indices whose parameter lands inside the defined region, with the
    index of their live covering block: (index, param value, record index
    or None).  Parameter values increase with the index, so the walk may
    begin anywhere below the region's end."""
    max_hi = max((rec.hi for rec in st.blocks.records), default=-1)
    n = start
    while True:
        val = st.params.value(n, column)
        if val > max_hi:
            return
        yield n, val, st.blocks.covering_index(val, engine.env.B, engine.stage)
        n += 1


def _points_end(st: HunterState, column: str, start: int = 0) -> int:
    """First index whose parameter lies beyond the defined region."""
    max_hi = max((rec.hi for rec in st.blocks.records), default=-1)
    n = start
    while st.params.value(n, column) <= max_hi:
        n += 1
    return n


def _still_same(blocks, index: int, oracle, t: int) -> bool:
    """Whether the oracle is unchanged below the record's use since its
    definition stage, through the table's incremental death scan."""
    death = blocks.death_stage(index, oracle)
    return death is None or death > t


def check_r_condition(
    engine: Engine, node: Node, t: Optional[int] = None, points_from: int = 0
) -> list[str]:
    """A hunter block that still answers must be backed by an unchanged
    watched set below its use since its definition stage."""
    t = engine.stage if t is None else t
    st = node.state
    if not isinstance(st, HunterState):
        return []
    watched = engine.candidate(node.trip[2].set_id)
    out = []
    for n, val, i in _block_points(engine, st, "W", points_from):
        if i is None:
            continue
        rec = st.blocks.records[i]
        if not _still_same(st.blocks, i, watched, t):
            out.append(
                f"{node.display_path}: block at index {n} (arg {val}) survives "
                f"although {watched.name} changed below {rec.use} "
                f"since stage {rec.stage}"
            )
    return out


def check_s_condition(
    engine: Engine, node: Node, t: Optional[int] = None, points_from: int = 0
) -> list[str]:
    """A steering-side block that still answers must be protected on the
    second column, unless its use reaches at least the first-column use,
    in which case an unchanged first column also suffices."""
    t = engine.stage if t is None else t
    st = node.state
    if not isinstance(st, HunterState):
        return []
    second = engine.candidate(node.trip[1].set_id)
    first_host = node.trip[0]
    first = engine.candidate(first_host.set_id)
    gamma = engine.env.gamma(first_host.e)
    out = []
    for n, val, i in _block_points(engine, st, "V", points_from):
        if i is None:
            continue
        rec = st.blocks.records[i]
        got = gamma.evaluate(engine.env.B, second, val, rec.stage)
        g_use = got[1] if got is not None else None
        second_ok = _still_same(st.blocks, i, second, t)
        if g_use is not None and rec.use < g_use:
            if not second_ok:
                out.append(
                    f"{node.display_path}: low block at index {n} (arg {val}) "
                    f"survives although {second.name} changed below {rec.use} "
                    f"since stage {rec.stage}"
                )
        elif g_use is not None:
            if not (second_ok or first.same(g_use, rec.stage, t)):
                out.append(
                    f"{node.display_path}: high block at index {n} (arg {val}) "
                    f"survives although both {second.name} below {rec.use} and "
                    f"{first.name} below {g_use} changed since stage {rec.stage}"
                )
    return out


def _value_correct(
    engine: Engine, node: Node, column: str, s: int, points_from: int = 0
) -> list[str]:
    st = node.state
    if not isinstance(st, HunterState) or node.last_visit != s:
        return []
    out = []
    for n, val, i in _block_points(engine, st, column, points_from):
        if i is None:
            continue
        rec = st.blocks.records[i]
        if engine.env.A.bit(val, rec.stage) != engine.env.A.bit(val, s):
            out.append(
                f"{node.display_path}: value at index {n} (arg {val}) is stale: "
                f"the target set changed at {val} after stage {rec.stage}"
            )
    return out


def check_r_correctness(engine: Engine, node: Node, s: Optional[int] = None) -> list[str]:
    """At its own stages, a hunter's surviving answers match the target set."""
    return _value_correct(engine, node, "W", engine.stage if s is None else s)


def check_s_correctness(engine: Engine, node: Node, s: Optional[int] = None) -> list[str]:
    return _value_correct(engine, node, "V", engine.stage if s is None else s)


def check_theta_domains(engine: Engine) -> list[str]:
    """No two live attackers may hold a guess on the same argument."""
    out = []
    for a, rows in engine.theta_index.items():
        holders = []
        for node, epoch in rows:
            st = node.state
            if node.epoch != epoch or not isinstance(st, AttackerState):
                continue
            if theta_value(st, a) is not None:
                holders.append(node)
        if len(holders) > 1:
            paths = ", ".join(n.display_path for n in holders)
            out.append(f"guess tables overlap at {a}: {paths}")
    return out


def check_stage(engine: Engine) -> list[str]:
    """All state checks for the stage just run."""
    out = []
    for node in _stateful(engine.tree.root):
        if node.kind in ("R", "R-"):
            out.extend(check_r_condition(engine, node))
            out.extend(check_r_correctness(engine, node))
        elif node.kind == "S":
            out.extend(check_s_condition(engine, node))
            out.extend(check_s_correctness(engine, node))
    out.extend(check_theta_domains(engine))
    return out


def _stateful(root: Node):
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


class _NodeCheck:
    """Incremental verdict for one hunter node.

    Points already verified stay verified while the parameter family
    holds still and no set event lands where the checks look: oracle or
    watched events below a block use can move a survival verdict, and
    target-set events inside the defined region can move a value verdict.
    Each stage therefore walks only the points added since, except after
    a relevant event, which restarts the walk from the bottom.
    """

    __slots__ = (
        "epoch",
        "params_version",
        "seen_stage",
        "cond_points",
        "corr_points",
        "out",
    )

    def __init__(self) -> None:
        self.epoch = -1
        self.params_version = -1
        self.seen_stage = -1
        self.cond_points = 0
        self.corr_points = 0
        self.out: list[str] = []

    def _relevant(self, engine: Engine, node: Node, st: HunterState, t: int) -> bool:
        blocks = st.blocks
        use_bound = blocks.max_use
        hi_bound = max((rec.hi for rec in blocks.records), default=-1) + 1
        since = self.seen_stage
        if any(e < use_bound for _, e in engine.env.B.events_between(since, t)):
            return True
        if any(e < hi_bound for _, e in engine.env.A.events_between(since, t)):
            return True
        if node.kind in ("R", "R-"):
            watched = engine.candidate(node.trip[2].set_id)
            return any(e < use_bound for _, e in watched.events_between(since, t))
        second = engine.candidate(node.trip[1].set_id)
        first = engine.candidate(node.trip[0].set_id)
        g_bound = engine.env.gamma(node.trip[0].e).max_prefix_len + 1
        return any(
            e < use_bound for _, e in second.events_between(since, t)
        ) or any(e < g_bound for _, e in first.events_between(since, t))

    def run(self, engine: Engine, node: Node, st: HunterState) -> list[str]:
        t = engine.stage
        if (
            node.epoch != self.epoch
            or st.params.version != self.params_version
            or self._relevant(engine, node, st, t)
        ):
            self.epoch = node.epoch
            self.params_version = st.params.version
            self.cond_points = 0
            self.corr_points = 0
            self.out = []
        if node.kind in ("R", "R-"):
            column = "W"
            new = check_r_condition(engine, node, points_from=self.cond_points)
        else:
            column = "V"
            new = check_s_condition(engine, node, points_from=self.cond_points)
        self.out.extend(new)
        self.cond_points = _points_end(st, column, self.cond_points)
        if node.last_visit == t:
            self.out.extend(
                _value_correct(engine, node, column, t, points_from=self.corr_points)
            )
            self.corr_points = self.cond_points
        self.seen_stage = t
        return self.out


class StageChecker:
    """check_stage for long runs, walking each point at most once while
    the picture around it stands still."""

    def __init__(self, engine: Engine) -> None:
        self.engine = engine
        self._memo: dict[Node, _NodeCheck] = {}

    def check(self) -> list[str]:
        out = []
        for node in self.engine.hunter_nodes():
            st = node.state
            nc = self._memo.get(node)
            if nc is None:
                nc = self._memo[node] = _NodeCheck()
            out.extend(nc.run(self.engine, node, st))
        out.extend(check_theta_domains(self.engine))
        return out


class PairAudit:
    """Streaming check of the pair discipline over a run's event list.

    Confirms that a pair dies exactly when its attacker is initialized,
    that the cancellation and every later progress announcement of a live
    pair reinitialize the right numeric sibling, and that activating the
    attacker's measuring parent kills the pair within the stage.
    """

    def __init__(self) -> None:
        # q path -> (xi path, n)
        self.live: dict[str, tuple[str, int]] = {}
        self.violations: list[str] = []
        self._stage: Optional[int] = None
        self._stage_events: list[dict] = []

    def feed(self, event: dict) -> None:
        stage = event["stage"]
        if stage != self._stage:
            self._close_stage()
            self._stage = stage
            self._stage_events = []
        self._stage_events.append(event)

    def finish(self) -> list[str]:
        self._close_stage()
        return self.violations

    # -- one stage at a time -------------------------------------------

    def _close_stage(self) -> None:
        events = self._stage_events
        if not events:
            return
        stage = self._stage
        inits = {e["path"] for e in events if e["ev"] == "Initialize"}
        activated: list[str] = []
        # one ordered pass: a pair only owes progress bumps to events that
        # happen while it is alive
        for ev in events:
            kind = ev["ev"]
            if kind == "PairSet":
                self.live[ev["q"]] = (ev["xi"], ev["n"])
            elif kind == "PairCancel":
                q = ev["q"]
                if q not in self.live:
                    self.violations.append(
                        f"stage {stage}: pair at {q} canceled but never set"
                    )
                else:
                    del self.live[q]
                if q not in inits:
                    self.violations.append(
                        f"stage {stage}: pair at {q} canceled without initializing it"
                    )
                if _numeric_child(ev["xi"], ev["n"]) not in inits:
                    self.violations.append(
                        f"stage {stage}: cancel at {q} left "
                        f"{_numeric_child(ev['xi'], ev['n'])} uninitialized"
                    )
            elif kind == "Initialize" and ev["path"] in self.live:
                self.violations.append(
                    f"stage {stage}: paired attacker {ev['path']} initialized "
                    f"without canceling its pair"
                )
            elif kind == "ActivateD":
                activated.append(ev["path"])
            else:
                q = _progress_subject(ev)
                if q is not None and q in self.live:
                    xi, n = self.live[q]
                    if _numeric_child(xi, n + 1) not in inits:
                        self.violations.append(
                            f"stage {stage}: progress at paired {q} left "
                            f"{_numeric_child(xi, n + 1)} uninitialized"
                        )
        # activating the attacker's measuring parent must kill the pair
        # by the end of the stage
        for path in activated:
            for q in list(self.live):
                if q == f"{path}.inf":
                    self.violations.append(
                        f"stage {stage}: {path} activated but the pair "
                        f"at {q} survived the stage"
                    )


def _numeric_child(xi_path: str, n: int) -> str:
    piece = f"{n}U"
    return piece if xi_path == "<root>" else f"{xi_path}.{piece}"


def _progress_subject(event: dict) -> Optional[str]:
    kind = event["ev"]
    if kind == "Visit":
        return event["path"]
    if kind == "Attention":
        return event["beta"]
    if kind == "Disarm":
        return event["q"]
    return None


class PermitAudit:
    """Streaming check of the permitting discipline.

    Every enumeration must be backed by a still-live grant of attention
    for the same witness into the same set, the witness must exceed the
    permitted argument, and the release may only happen at the permitting
    node after it has been visited in the releasing stage.
    """

    def __init__(self, tree: Tree) -> None:
        self.tree = tree
        # witness -> (attention event, alive)
        self.grants: dict[int, dict] = {}
        self.violations: list[str] = []
        self._visited_this_stage: set[str] = set()
        self._stage: Optional[int] = None

    def feed(self, event: dict) -> None:
        stage = event["stage"]
        if stage != self._stage:
            self._stage = stage
            self._visited_this_stage = set()
        kind = event["ev"]
        if kind == "Visit":
            self._visited_this_stage.add(event["path"])
        elif kind == "Attention":
            if event["arg"] >= event["witness"]:
                self.violations.append(
                    f"stage {stage}: witness {event['witness']} does not exceed "
                    f"the permitted argument {event['arg']}"
                )
            self.grants[event["witness"]] = event
        elif kind in ("Disarm", "Initialize"):
            beta = event["q"] if kind == "Disarm" else event["path"]
            for witness, grant in list(self.grants.items()):
                if grant["beta"] == beta:
                    del self.grants[witness]
        elif kind == "Enumerate":
            self._check_enumerate(event)

    def _check_enumerate(self, event: dict) -> None:
        stage = event["stage"]
        witness = event["x"]
        grant = self.grants.pop(witness, None)
        if grant is None:
            self.violations.append(
                f"stage {stage}: {witness} entered {event['setId']} without a "
                f"live grant of attention"
            )
            return
        target = self.tree.node_from_str(grant["target"])
        if target is None or str(target.set_id) != event["setId"]:
            self.violations.append(
                f"stage {stage}: {witness} entered {event['setId']} but was "
                f"granted toward {grant['target']}"
            )
        if event["byPermitNode"] not in self._visited_this_stage:
            self.violations.append(
                f"stage {stage}: {witness} released at {event['byPermitNode']} "
                f"before that node was visited this stage"
            )
        if event["stage"] < grant["stage"]:
            self.violations.append(
                f"stage {stage}: {witness} released before its grant at "
                f"stage {grant['stage']}"
            )

    def finish(self) -> list[str]:
        return self.violations


def audit_pairs(events: Iterable[dict]) -> list[str]:
    audit = PairAudit()
    for event in events:
        audit.feed(event)
    return audit.finish()


def audit_permitting(tree: Tree, events: Iterable[dict]) -> list[str]:
    audit = PermitAudit(tree)
    for event in events:
        audit.feed(event)
    return audit.finish()


def approximate_true_path(
    tree: Tree, threshold: int, cutoff: int, limit: int = 200
) -> list[Node]:
    """Leftmost chain of often-visited, long-stable nodes.

    A child qualifies when it was visited at least ``threshold`` times and
    has not been injured after ``cutoff``; among qualifying children the
    leftmost wins, mirroring how the limit path is defined.
    """
    chain = [tree.root]
    node = tree.root
    while len(chain) <= limit:
        best = None
        best_rank = float("inf")
        for edge, child in node.children.items():
            if child.visits >= threshold and child.last_injury <= cutoff:
                rank = outcome_rank(node, edge)
                if rank < best_rank:
                    best, best_rank = child, rank
        if best is None:
            return chain
        chain.append(best)
        node = best
    return chain
