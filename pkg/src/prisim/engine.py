"""Stage-by-stage execution of the construction against an environment.

Each stage applies the environment's enumerations first, then runs the
permitting centre, then walks the strategy tree from the root, letting
every visited node act until something stops the stage.  The engine owns
all state transitions: parameter shifts, block definitions, witness
assignment and release, pair bookkeeping, the five disarming triggers,
and the initialization waves that implement the priority discipline.

Every externally visible step is appended to the stage trace as a small
dict with a fixed key order, so a run serializes to identical JSON lines
whenever the inputs are identical.
"""

from __future__ import annotations

import sys
from dataclasses import dataclass
from typing import Iterable, Optional

from .re_core import EnumSet, OracleFunctional, PlainFunctional
from .node_state import (
    SHIFT_ABOVE,
    SHIFT_AT,
    AttackerState,
    AttentionRecord,
    Census,
    DisarmProcess,
    HunterState,
    MeasureState,
    PairRecord,
    PendingWitness,
    PermitState,
    SteeringState,
    assign_witnesses,
    compute_tp,
    define_theta,
    prepared,
    theta_value,
    world_edges,
)
from .tree import (
    OUT_D,
    OUT_INF,
    OUT_LIMIT,
    OUT_ZERO,
    Node,
    SetId,
    Tree,
    before,
    set_host_permit,
)

MUTATIONS = frozenset({"skip_r_test", "skip_p2", "skip_dp4", "enum_at_attention"})


class EngineFault(Exception):
    """An internal consistency rule was broken during a stage."""


class _StopStage(Exception):
    """Control flow: the current stage is over."""


class Environment:
    """Adversary-owned inputs: the oracle sets and their functionals."""

    __slots__ = ("A", "B", "_gammas", "_deltas")

    def __init__(self) -> None:
        self.A = EnumSet("A")
        self.B = EnumSet("B")
        self._gammas: dict[int, OracleFunctional] = {}
        self._deltas: dict[int, PlainFunctional] = {}

    def gamma(self, e: int) -> OracleFunctional:
        g = self._gammas.get(e)
        if g is None:
            g = self._gammas[e] = OracleFunctional(e)
        return g

    def delta(self, e: int) -> PlainFunctional:
        d = self._deltas.get(e)
        if d is None:
            d = self._deltas[e] = PlainFunctional(e)
        return d

    def gamma_indices(self) -> list[int]:
        return sorted(self._gammas)

    def delta_indices(self) -> list[int]:
        return sorted(self._deltas)


@dataclass
class _Frame:
    """Interception context while a steering node sweeps its limit world."""

    xi: Node
    n: int
    xi_child: Node
    mark: int
    active: bool = True


class Engine:
    """Deterministic driver for one construction run."""

    def __init__(
        self,
        tree: Optional[Tree] = None,
        env: Optional[Environment] = None,
        mutations: Iterable[str] = (),
    ) -> None:
        self.tree = tree if tree is not None else Tree()
        self.env = env if env is not None else Environment()
        self.mutations = frozenset(mutations)
        unknown = self.mutations - MUTATIONS
        if unknown:
            raise ValueError(f"unknown mutations: {sorted(unknown)}")
        self.census = Census()
        self.candidates: dict[SetId, EnumSet] = {}
        self.processes: list[DisarmProcess] = []
        self.live_pairs: list[PairRecord] = []
        self.theta_index: dict[int, list[tuple[Node, int]]] = {}
        self.attention_log: list[AttentionRecord] = []
        self.trace: list[dict] = []
        self.stage = -1
        self._frames: list[_Frame] = []
        # parameter-bearing nodes, in creation order, for the end-of-stage audit
        self._param_nodes: dict[Node, None] = {}
        # per-node (functional, sets) references used by the agreement scan
        self._measure_src: dict[Node, tuple] = {}
        # True while nothing measurable has changed since the last stage,
        # letting every repeat measurement skip its scan outright
        self._world_quiet = False
        self._world_sig = -1

    # ------------------------------------------------------------------
    # candidate sets

    def candidate(self, set_id: SetId) -> EnumSet:
        cand = self.candidates.get(set_id)
        if cand is None:
            cand = self.candidates[set_id] = EnumSet(str(set_id))
        return cand

    # ------------------------------------------------------------------
    # trace events

    def _emit(self, event: dict) -> None:
        self.trace.append(event)

    def _ev_visit(self, node: Node) -> None:
        self._emit({"ev": "Visit", "stage": self.stage, "path": node.display_path})

    def _ev_initialize(self, node: Node, by: str) -> None:
        self._emit(
            {"ev": "Initialize", "stage": self.stage, "path": node.display_path, "by": by}
        )

    def _ev_disarm(self, q: Node, trigger: str) -> None:
        self._emit(
            {"ev": "Disarm", "stage": self.stage, "q": q.display_path, "trigger": trigger}
        )

    def _ev_attention(self, rec: AttentionRecord) -> None:
        self._emit(
            {
                "ev": "Attention",
                "stage": rec.stage,
                "arg": rec.arg,
                "beta": rec.beta.display_path,
                "target": rec.target.display_path,
                "witness": rec.witness,
            }
        )

    def _ev_pair(self, kind: str, rec: PairRecord) -> None:
        self._emit(
            {
                "ev": kind,
                "stage": self.stage,
                "xi": rec.xi.display_path,
                "n": rec.n,
                "q": rec.q.display_path,
            }
        )

    def _ev_enumerate(self, set_id: SetId, x: int, permit: Node) -> None:
        self._emit(
            {
                "ev": "Enumerate",
                "stage": self.stage,
                "setId": str(set_id),
                "x": x,
                "byPermitNode": permit.display_path,
            }
        )

    def _ev_define(self, node: Node, kind: str, arg: int, value: int, use: Optional[int]) -> None:
        self._emit(
            {
                "ev": "DefineLocal",
                "stage": self.stage,
                "path": node.display_path,
                "kind": kind,
                "arg": arg,
                "value": value,
                "use": use,
            }
        )

    def _ev_activate(self, d_node: Node) -> None:
        self._emit({"ev": "ActivateD", "stage": self.stage, "path": d_node.display_path})

    # ------------------------------------------------------------------
    # state plumbing

    def _ensure_state(self, node: Node):
        st = node.state
        if st is not None:
            return st
        kind = node.kind
        if kind == "Permit":
            st = PermitState()
        elif kind in ("G", "D"):
            st = MeasureState()
        elif kind in ("R", "R-", "S"):
            st = HunterState(SHIFT_AT if kind in ("R", "R-") else SHIFT_ABOVE)
            self._param_nodes[node] = None
        elif kind == "C":
            st = SteeringState()
            self._param_nodes[node] = None
        elif kind in ("P", "Q"):
            st = AttackerState()
        else:
            raise EngineFault(f"node kind {kind!r} holds no state")
        node.state = st
        walker: Optional[Node] = node
        while walker is not None:
            walker.live += 1
            walker = walker.parent
        return st

    def hunter_nodes(self) -> list[Node]:
        """Nodes currently holding a block table, in creation order."""
        return [n for n in self._param_nodes if isinstance(n.state, HunterState)]

    def _reset_node(self, node: Node, by: str) -> None:
        st = node.state
        if st is None:
            return
        if node.kind in ("P", "Q") and st.pair is not None and st.pair.canceled is None:
            self._cancel_pair(st.pair, by)
        node.state = None
        node.epoch += 1
        node.last_injury = self.stage
        walker: Optional[Node] = node
        while walker is not None:
            walker.live -= 1
            walker = walker.parent
        self._ev_initialize(node, by)

    def _flush(self, node: Node, by: str) -> None:
        if node.live == 0:
            return
        for child in list(node.children.values()):
            self._flush(child, by)
        if node.state is not None:
            self._reset_node(node, by)

    def _explicit_init(self, node: Node, by: str) -> None:
        had = node.state is not None
        self._flush(node, by)
        if not had:
            # A bare target still counts as initialized: its epoch moves and
            # the event is recorded for the audits.
            node.epoch += 1
            node.last_injury = self.stage
            self._ev_initialize(node, by)

    # ------------------------------------------------------------------
    # pairs and progress

    def _cancel_pair(self, rec: PairRecord, by: str) -> None:
        if rec.canceled is not None:
            return
        rec.canceled = self.stage
        xi_state = rec.xi.state
        if isinstance(xi_state, SteeringState) and xi_state.pairs.get(rec.n) is rec:
            del xi_state.pairs[rec.n]
        self._ev_pair("PairCancel", rec)
        if "skip_p2" not in self.mutations:
            target = self.tree.child(rec.xi, (rec.n, "U"))
            self._explicit_init(target, by="pair-cancel")
            for edge, sib in list(rec.xi.children.items()):
                if isinstance(edge, tuple) and edge[0] > rec.n:
                    self._flush(sib, by="pair-cancel")

    def _pair_progress(self, rec: PairRecord) -> None:
        target_n = rec.n + 1
        target = self.tree.child(rec.xi, (target_n, "U"))
        self._explicit_init(target, by="pair-progress")
        for edge, sib in list(rec.xi.children.items()):
            if isinstance(edge, tuple) and edge[0] > target_n:
                self._flush(sib, by="pair-progress")

    def _announce_progress(self, node: Node, full: bool = True) -> None:
        """Initialize everything of lower priority than the announcer.

        A node visited during the stage walk passes full=False: its
        ancestors were visited moments earlier in the same stage and
        their lateral flushes already ran, so only the announcer's own
        sibling edges can hold anything new.
        """
        child = node
        parent = node.parent
        while parent is not None:
            edge = child.edge
            my_rank = child.rank
            # Numeric progress below a steering node leaves its limit world
            # alone; only the pair hooks may reach across that edge.
            keep_limit = parent.kind == "C" and isinstance(edge, tuple)
            for sib_edge, sib in list(parent.children.items()):
                if sib is child or sib.live == 0:
                    continue
                if keep_limit and sib_edge == OUT_LIMIT:
                    continue
                if sib.rank > my_rank:
                    self._flush(sib, by=node.display_path)
            if not full:
                break
            child, parent = parent, parent.parent
        st = node.state
        if (
            node.kind in ("P", "Q")
            and isinstance(st, AttackerState)
            and st.pair is not None
            and st.pair.canceled is None
        ):
            self._pair_progress(st.pair)

    # ------------------------------------------------------------------
    # functional access helpers

    def _gamma_use(self, host: Node, arg: int, stage: int) -> float:
        """Use of the adversary functional at a measuring host, +inf if divergent."""
        gamma = self.env.gamma(host.e)
        key = gamma.use_key(self.env.B, self.candidate(host.set_id), arg, stage)
        if key != float("inf"):
            self.census.note(int(key))
        return key

    def _gamma_converges(self, host: Node, arg: int, stage: int) -> Optional[int]:
        gamma = self.env.gamma(host.e)
        got = gamma.evaluate(self.env.B, self.candidate(host.set_id), arg, stage)
        if got is None:
            return None
        self.census.note(got[1])
        return got[1]

    # ------------------------------------------------------------------
    # disarming

    def _disarm(self, q: Node, trigger: str) -> None:
        st = q.state
        if not isinstance(st, AttackerState):
            return
        if not st.theta and not st.dw and st.epoch_start is None and not st.attention_spent:
            return
        st.clear_for_disarm()
        q.epoch += 1
        q.last_injury = self.stage
        self._ev_disarm(q, trigger)
        self._announce_progress(q)

    def _dp1_scan(self, beta: Node) -> None:
        crossings: list[tuple[Node, int]] = []
        walker = beta
        while walker.parent is not None:
            parent = walker.parent
            if parent.kind == "C" and isinstance(walker.edge, tuple):
                crossings.append((parent, walker.edge[0]))
            walker = parent
        if not crossings:
            return
        for proc in list(self.processes):
            if not proc.live():
                continue
            for xi, l in crossings:
                if proc.xi is xi and l <= proc.m:
                    self._disarm(proc.q, "DP-1")
                    break

    def _dp2_scan(self) -> None:
        for proc in list(self.processes):
            if not proc.live() or proc.crossing_memo is None:
                continue
            s1, psi_use, gamma_use = proc.crossing_memo
            if gamma_use is None:
                continue
            u_set = self.candidate(self.tree.root.set_id)
            if not u_set.same(gamma_use, s1, self.stage) and self.env.B.same(
                psi_use, s1, self.stage
            ):
                proc.crossing_memo = None
                self._disarm(proc.q, "DP-2")

    def _dp3_fire(self, frame: _Frame) -> None:
        for proc in list(self.processes):
            if proc.live() and proc.xi is frame.xi and frame.n <= proc.m:
                self._disarm(proc.q, "DP-3")

    def _crossing_below(self, proc: DisarmProcess, stage: int) -> bool:
        """True when the second-column use sits below the first-column use."""
        st = proc.s_node.state
        if not isinstance(st, HunterState):
            return False
        y_val = st.params.value(proc.n, "V")
        rec = st.blocks.covering(y_val, self.env.B, stage)
        if rec is None:
            return False
        xi_state = proc.xi.state
        x_val = (
            xi_state.params.value(proc.m, "U")
            if isinstance(xi_state, SteeringState)
            else proc.m
        )
        g_use = self._gamma_converges(proc.xi.trip[0], x_val, stage)
        if g_use is None:
            return False
        return rec.use < g_use

    def _dp4_check(self, s_node: Node) -> None:
        for proc in list(self.processes):
            if not proc.live() or proc.s_node is not s_node:
                continue
            cur = self._crossing_below(proc, self.stage)
            if cur and not proc.below_prev:
                if "skip_dp4" not in self.mutations:
                    self._disarm(proc.q, "DP-4")
            proc.below_prev = cur

    def _dp2_memo_refresh(self, s_node: Node) -> None:
        """Record the state seen at a second-column definition for DP-2."""
        for proc in list(self.processes):
            if not proc.live() or proc.s_node is not s_node:
                continue
            st = proc.s_node.state
            if not isinstance(st, HunterState):
                continue
            y_val = st.params.value(proc.n, "V")
            rec = st.blocks.covering(y_val, self.env.B, self.stage)
            if rec is None or rec.stage != self.stage:
                continue
            xi_state = proc.xi.state
            x_val = (
                xi_state.params.value(proc.m, "U")
                if isinstance(xi_state, SteeringState)
                else proc.m
            )
            g_use = self._gamma_converges(proc.xi.trip[0], x_val, self.stage)
            proc.crossing_memo = (self.stage, rec.use, g_use)

    # ------------------------------------------------------------------
    # permitting centre

    def _eligible_for(self, a: int) -> Optional[Node]:
        rows = self.theta_index.get(a)
        if not rows:
            return None
        fresh: list[tuple[Node, int]] = []
        found: list[Node] = []
        for node, epoch in rows:
            if node.epoch != epoch:
                continue
            st = node.state
            if not isinstance(st, AttackerState):
                continue
            fresh.append((node, epoch))
            if theta_value(st, a) == 0 and not st.attention_spent:
                found.append(node)
        self.theta_index[a] = fresh
        if len(found) > 1:
            paths = ", ".join(n.display_path for n in found)
            raise EngineFault(f"two attackers eligible for {a}: {paths}")
        return found[0] if found else None

    def _choose_target(self, beta: Node, a: int) -> Node:
        st = beta.state
        kind = "Q" if beta.kind == "Q" else "P"
        if "skip_r_test" in self.mutations:
            return beta.e_w[0] if beta.e_w else beta.e_main
        for xi in beta.e_w:
            w = st.dw[a][xi]
            if all(self._test_all(r_node, a, w, kind) for r_node in xi.conflicts):
                return xi
        return beta.e_main

    def _permitting_center(self) -> None:
        s = self.stage
        entered = sorted(e for (_, e) in self.env.A.events_between(s - 1, s))
        for a in entered:
            self.census.note(a)
            beta = self._eligible_for(a)
            if beta is None:
                continue
            st = beta.state
            st.attention_spent = True
            target = self._choose_target(beta, a)
            witness = st.dw[a][target]
            rec = AttentionRecord(stage=s, arg=a, beta=beta, target=target, witness=witness)
            self.attention_log.append(rec)
            self._ev_attention(rec)
            if "enum_at_attention" in self.mutations:
                self._release_witness(
                    PendingWitness(witness, a, beta, beta.epoch, target, s),
                    set_host_permit(self.tree, target.set_id),
                )
            else:
                permit = set_host_permit(self.tree, target.set_id)
                self._ensure_state(permit).pending.append(
                    PendingWitness(witness, a, beta, beta.epoch, target, s)
                )
            self._announce_progress(beta)
            self._dp1_scan(beta)

    # ------------------------------------------------------------------
    # attack tests

    def _test_one(self, r_node: Node, n: int, a: int, w: int, kind: str) -> bool:
        """One index of the attack test at a hunter in the conflict set."""
        st = r_node.state
        s = self.stage
        if not isinstance(st, HunterState):
            return True
        z_w = st.params.value(n, "W")
        rec = st.blocks.covering(z_w, self.env.B, s)
        if rec is None:
            return True
        if w > rec.use:
            return True
        host = r_node.trip[0] if kind == "P" else r_node.trip[1]
        side = self.candidate(host.set_id)
        g_use = self._gamma_converges_at(host, a, rec.stage)
        if g_use is None:
            return False
        return side.same(g_use, rec.stage, s) and self.env.B.same(g_use, rec.stage, s)

    def _gamma_converges_at(self, host: Node, arg: int, stage: int) -> Optional[int]:
        gamma = self.env.gamma(host.e)
        got = gamma.evaluate(self.env.B, self.candidate(host.set_id), arg, stage)
        return got[1] if got is not None else None

    def _test_all(self, r_node: Node, a: int, w: int, kind: str) -> bool:
        st = r_node.state
        if not isinstance(st, HunterState):
            return True
        s = self.stage
        n = 0
        while n <= s + 1:
            z_w = st.params.value(n, "W")
            rec = st.blocks.covering(z_w, self.env.B, s)
            if rec is None and z_w > self._max_block_hi(st):
                return True
            if not self._test_one(r_node, n, a, w, kind):
                return False
            n += 1
        return True

    def _test_boundary(self, r_node: Node, a: int, w: int, kind: str) -> bool:
        """Same predicate via the boundary index: one above the last index
        whose block the witness clears by size."""
        st = r_node.state
        if not isinstance(st, HunterState):
            return True
        s = self.stage
        boundary = 0
        n = 0
        while n <= s + 1:
            z_w = st.params.value(n, "W")
            rec = st.blocks.covering(z_w, self.env.B, s)
            if rec is None and z_w > self._max_block_hi(st):
                break
            if rec is not None and w > rec.use:
                boundary = n + 1
            n += 1
        return self._test_one(r_node, boundary, a, w, kind)

    @staticmethod
    def _max_block_hi(st: HunterState) -> int:
        return max((rec.hi for rec in st.blocks.records), default=-1)

    # ------------------------------------------------------------------
    # witness release

    def _release_witness(self, pending: PendingWitness, permit: Node) -> None:
        set_id = pending.target.set_id
        cand = self.candidate(set_id)
        cand.add(pending.witness, self.stage)
        self._world_quiet = False
        self.census.note(pending.witness)
        self._ev_enumerate(set_id, pending.witness, permit)
        sigma = pending.target
        if not sigma.activated:
            sigma.activated = True
            d_child = self.tree.child(sigma, OUT_D)
            self._ev_activate(sigma)
            self._announce_progress(d_child)

    # ------------------------------------------------------------------
    # the stage walk

    def run_stage(self, stage: int) -> list[dict]:
        if stage != self.stage + 1:
            raise EngineFault(f"stages must advance one at a time, got {stage}")
        # the stage walk loops through quiet stretches but still recurses a
        # few frames per requirement node, and the path length is bounded by
        # the stage number
        need = 6 * stage + 2000
        if sys.getrecursionlimit() < need:
            sys.setrecursionlimit(need)
        self.stage = stage
        self.trace = []
        self.census.note(stage)
        for _, e in self.env.A.events_between(stage - 1, stage):
            self.census.note(e)
        for _, e in self.env.B.events_between(stage - 1, stage):
            self.census.note(e)
        self._frames = []
        try:
            self._permitting_center()
            self._refresh_world_sig()
            self._visit(self.tree.root)
            raise EngineFault("the stage walk returned without stopping")
        except _StopStage:
            pass
        self._maintenance()
        return self.trace

    def _refresh_world_sig(self) -> None:
        # every term is monotone, so an equal sum means nothing moved
        env = self.env
        sig = env.A.event_count + env.B.event_count
        for cand in self.candidates.values():
            sig += cand.event_count
        for gamma in env._gammas.values():
            sig += gamma.axiom_count
        for delta in env._deltas.values():
            sig += delta.entry_count
        self._world_quiet = sig == self._world_sig
        self._world_sig = sig

    def _visit(self, node: Node) -> None:
        # Permit, G and D chains are walked iteratively; they make up almost
        # the whole path on quiet stages, and looping keeps the recursion
        # depth proportional to the number of interesting nodes instead.
        s = self.stage
        child = self.tree.child
        while True:
            frame = self._frames[-1] if self._frames and self._frames[-1].active else None
            if frame is not None and node.world is frame.xi:
                if node.depth > s:
                    frame.active = False
                    if frame.xi_child.epoch != frame.mark:
                        # The steering target was initialized mid-sweep;
                        # nothing is left to do this stage.
                        raise _StopStage
                    self._steer(frame)
                    return
                if self._xi_child_precedes(frame, node):
                    frame.active = False
                    self._steer(frame)
                    return
            node.visits += 1
            node.last_visit = s
            self._ev_visit(node)
            st = self._ensure_state(node)
            kind = node.kind
            if kind in ("P", "Q") and st.epoch_start is None:
                st.epoch_start = s
            self._announce_progress(node, full=False)
            in_world_sweep = frame is not None and node.world is frame.xi
            if node.depth >= s and not in_world_sweep:
                if isinstance(st, (HunterState, SteeringState)):
                    st.last_stage = s
                raise _StopStage
            if kind == "Permit":
                pending, st.pending = st.pending, []
                for rec in pending:
                    if rec.live():
                        self._release_witness(rec, node)
                if node.parent is None:
                    self._dp2_scan()
                node = child(node, OUT_ZERO)
            elif kind == "G":
                if self._world_quiet and st.count and not st.memo_capped:
                    expansionary = st.record(st.memo_len)
                else:
                    expansionary = st.record(self._measured_length(node, st))
                node = child(node, OUT_INF if expansionary else OUT_ZERO)
            elif kind == "D":
                if node.activated:
                    node = child(node, OUT_D)
                else:
                    if self._world_quiet and st.count and not st.memo_capped:
                        expansionary = st.record(st.memo_len)
                    else:
                        expansionary = st.record(self._measured_length(node, st))
                    node = child(node, OUT_INF if expansionary else OUT_ZERO)
            elif kind in ("R", "R-"):
                self._act_hunter_r(node, st)
                return
            elif kind == "S":
                self._act_hunter_s(node, st)
                return
            elif kind == "C":
                self._act_c(node, st)
                return
            elif kind == "P":
                self._act_attacker(node, st, [node.e_main, *node.e_w])
                return
            elif kind == "Q":
                self._act_q(node, st)
                return
            else:
                raise EngineFault(f"no action defined for kind {kind!r}")

    def _xi_child_precedes(self, frame: _Frame, node: Node) -> bool:
        xi_state = frame.xi.state
        if not isinstance(xi_state, SteeringState):
            return False
        for rec in xi_state.pairs.values():
            if frame.n <= rec.n and (rec.q is node or before(rec.q, node) is True):
                return True
        return False

    def _steer(self, frame: _Frame) -> None:
        self._dp3_fire(frame)
        xi_state = frame.xi.state
        if isinstance(xi_state, SteeringState):
            xi_state.params.record_visit(frame.n, self.stage)
        self._visit(frame.xi_child)

    # ------------------------------------------------------------------
    # per-kind actions

    def _measured_length(self, node: Node, st: MeasureState) -> int:
        """Agreement length, resuming the previous scan when nothing that
        the already-agreed prefix depends on has changed.  Additions to a
        functional can never flip an argument that already converged, so
        pure functional growth resumes from the old length; set events
        force a rescan from zero only when one lands where the old scan
        looked, below the functional's longest prefix or at a compared
        argument; an unchanged picture repeats the old answer outright
        unless the old scan was cut off by the stage."""
        s = self.stage
        src = self._measure_src.get(node)
        if src is None:
            env = self.env
            if node.kind == "G":
                src = (env.gamma(node.e), self.candidate(node.set_id), env.A, env.B)
            else:
                src = (env.delta(node.e), self.candidate(node.set_id))
            self._measure_src[node] = src
        if node.kind == "G":
            gamma, x, a, b = src
            counts = (a.event_count, b.event_count, x.event_count, gamma.axiom_count)
            if st.memo_counts == counts and not st.memo_capped:
                return st.memo_len
            if st.memo_counts is None:
                m = 0
            elif st.memo_counts[:3] == counts[:3] or self._events_clear_g(st, src, s):
                m = st.memo_len
            else:
                m = 0
            while m <= s:
                got = gamma.evaluate(b, x, m, s)
                if got is None or got[0] != a.bit(m, s):
                    break
                m += 1
        else:
            delta, x = src
            counts = (x.event_count, delta.entry_count)
            if st.memo_counts == counts and not st.memo_capped:
                return st.memo_len
            if st.memo_counts is None:
                m = 0
            elif st.memo_counts[0] == counts[0] or all(
                e >= st.memo_len for _, e in x.events_between(st.memo_stage, s)
            ):
                m = st.memo_len
            else:
                m = 0
            while m <= s:
                got = delta.evaluate(m, s)
                if got is None or got != x.bit(m, s):
                    break
                m += 1
        st.memo_len = m
        st.memo_counts = counts
        st.memo_capped = m > s
        st.memo_stage = s
        return m

    @staticmethod
    def _events_clear_g(st: MeasureState, src: tuple, s: int) -> bool:
        """True when no event since the memo stage can touch the memoized
        part of the scan: target-set events only at or above the old
        length, oracle-side events only at or above every axiom prefix."""
        gamma, x, a, b = src
        since = st.memo_stage
        ceiling = gamma.max_prefix_len
        return (
            all(e >= st.memo_len for _, e in a.events_between(since, s))
            and all(e >= ceiling for _, e in b.events_between(since, s))
            and all(e >= ceiling for _, e in x.events_between(since, s))
        )

    def _scan_start(self, st: HunterState, s_star: Optional[int]) -> int:
        """Resume a hunter's index walk past blocks that cannot have died:
        every index below the stored mark held a live block last time, and
        no oracle-side event since then lands below any block's use."""
        if st.scan_n == 0:
            return 0
        b = self.env.B
        if st.scan_b_count == b.event_count:
            return st.scan_n
        if s_star is not None and all(
            e >= st.blocks.max_use
            for _, e in b.events_between(s_star, self.stage)
        ):
            return st.scan_n
        return 0

    def _act_hunter_r(self, node: Node, st: HunterState) -> None:
        s = self.stage
        s_star = st.last_stage
        st.last_stage = s
        a0, a1, a2 = node.trip
        has_u = node.kind == "R"
        b = self.env.B
        n = self._scan_start(st, s_star)
        while True:
            if n > s:
                st.scan_n, st.scan_b_count = n, b.event_count
                raise _StopStage
            z_w = st.params.value(n, "W")
            now = st.blocks.covering(z_w, b, s)
            if now is not None:
                n += 1
                continue
            old = st.blocks.covering(z_w, b, s_star) if s_star is not None else None
            if old is not None:
                if self._grew(a2, z_w, s_star, s):
                    # the dispatch shifts the parameter family, so the
                    # stored mark no longer addresses the same points
                    st.scan_n, st.scan_b_count = 0, b.event_count
                    st.params.record_visit(n, s)
                    self._visit(self.tree.child(node, (n, "W")))
                    return
                st.scan_n, st.scan_b_count = n, b.event_count
                if has_u and self._grew(a0, st.params.value(n, "U"), s_star, s):
                    self._visit(self.tree.child(node, (n, "U")))
                    return
                if self._grew(a1, st.params.value(n, "V"), s_star, s):
                    self._visit(self.tree.child(node, (n, "V")))
                    return
                lo = st.params.value(n - 1, "W")
                self._define_block(node, st, "Phi", lo, z_w, old.use)
                raise _StopStage
            use = self.census.fresh()
            use = self._raise_to_uses(
                use,
                [
                    (a2, z_w),
                    *([(a0, st.params.value(n, "U"))] if has_u else []),
                    (a1, st.params.value(n, "V")),
                ],
            )
            lo = st.params.value(n - 1, "W")
            self._define_block(node, st, "Phi", lo, z_w, use)
            n += 1

    def _act_hunter_s(self, node: Node, st: HunterState) -> None:
        s = self.stage
        s_star = st.last_stage
        st.last_stage = s
        a1 = node.trip[1]
        b = self.env.B
        self._dp4_check(node)
        n = self._scan_start(st, s_star)
        while True:
            if n > s:
                st.scan_n, st.scan_b_count = n, b.event_count
                raise _StopStage
            y_v = st.params.value(n, "V")
            now = st.blocks.covering(y_v, b, s)
            if now is not None:
                n += 1
                continue
            old = st.blocks.covering(y_v, b, s_star) if s_star is not None else None
            if old is not None:
                if self._grew(a1, y_v, s_star, s):
                    # the dispatch shifts the parameter family, so the
                    # stored mark no longer addresses the same points
                    st.scan_n, st.scan_b_count = 0, b.event_count
                    st.params.record_visit(n, s)
                    self._visit(self.tree.child(node, (n, "V")))
                    return
                st.scan_n, st.scan_b_count = n, b.event_count
                lo = st.params.value(n - 1, "V")
                self._define_block(node, st, "Psi", lo, y_v, old.use)
                self._dp2_memo_refresh(node)
                self._dp4_check(node)
                raise _StopStage
            use = self.census.fresh()
            key = self._gamma_use(a1, y_v, s)
            if key != float("inf"):
                use = max(use, int(key) + 1)
            lo = st.params.value(n - 1, "V")
            self._define_block(node, st, "Psi", lo, y_v, use)
            self._dp2_memo_refresh(node)
            self._dp4_check(node)
            n += 1

    def _grew(self, host: Node, arg: int, s_star: int, s: int) -> bool:
        return self._gamma_use(host, arg, s) > self._gamma_use(host, arg, s_star)

    def _raise_to_uses(self, use: int, wants: list[tuple[Node, int]]) -> int:
        for host, arg in wants:
            key = self._gamma_use(host, arg, self.stage)
            if key != float("inf"):
                use = max(use, int(key))
        self.census.note(use)
        return use

    def _define_block(
        self, node: Node, st: HunterState, label: str, lo: int, hi: int, use: int
    ) -> None:
        st.blocks.define(lo, hi, use, self.stage)
        self.census.note(use, max(hi, 0))
        self._ev_define(node, label, hi, self.env.A.bit(hi, self.stage), use)

    def _act_c(self, node: Node, st: SteeringState) -> None:
        s = self.stage
        s_star = st.last_stage
        st.last_stage = s
        a0 = node.trip[0]
        chosen: Optional[int] = None
        if s_star is not None:
            for n in range(s + 1):
                if self._grew(a0, st.params.value(n, "U"), s_star, s):
                    chosen = n
                    break
        limit_child = self.tree.child(node, OUT_LIMIT)
        if chosen is None:
            self._visit(limit_child)
            return
        xi_child = self.tree.child(node, (chosen, "U"))
        frame = _Frame(xi=node, n=chosen, xi_child=xi_child, mark=xi_child.epoch)
        self._frames.append(frame)
        try:
            self._visit(limit_child)
        finally:
            self._frames.pop()

    def _act_attacker(self, node: Node, st: AttackerState, members: list[Node]) -> None:
        s = self.stage
        a = st.next_theta_arg(s)
        self.census.note(a)
        if a not in st.dw:
            assign_witnesses(st, a, members, self.census)
            raise _StopStage
        for member, witness in st.dw[a].items():
            if not prepared(
                witness, self.env.delta(member.e), self.candidate(member.set_id), s
            ):
                raise _StopStage
        bit = self.env.A.bit(a, s)
        define_theta(st, a, bit, s)
        self.theta_index.setdefault(a, []).append((node, node.epoch))
        self._ev_define(node, "Theta", a, bit, None)
        raise _StopStage

    def _act_q(self, node: Node, st: AttackerState) -> None:
        if node.e_w and st.pair is None:
            self._establish_pair(node, st)
            raise _StopStage
        self._act_attacker(node, st, [node.e_main, *node.e_w])

    def _establish_pair(self, node: Node, st: AttackerState) -> None:
        s = self.stage
        xi = node.world
        if xi is None:
            raise EngineFault(f"{node.display_path} pairs without a world")
        try:
            tp = compute_tp(node)
        except ValueError as exc:
            raise EngineFault(str(exc)) from None
        self.census.note(tp)
        xi_state = xi.state
        if not isinstance(xi_state, SteeringState):
            raise EngineFault(f"{xi.display_path} steers without state")
        floor = xi_state.max_pair_index()
        n = floor + 1 if floor >= 0 else 0
        while xi_state.params.value(n, "U") <= tp:
            n += 1
        rec = PairRecord(xi=xi, n=n, q=node, established=s)
        xi_state.pairs[n] = rec
        self.live_pairs.append(rec)
        st.pair = rec
        self._ev_pair("PairSet", rec)
        x_val = xi_state.params.value(n, "U")
        for s_node, edge_n in world_edges(node):
            proc = DisarmProcess(
                xi=xi,
                m=n,
                s_node=s_node,
                n=edge_n,
                q=node,
                pair=rec,
                registered=s,
                x_snapshot=x_val,
            )
            proc.below_prev = self._crossing_below(proc, s)
            self.processes.append(proc)

    # ------------------------------------------------------------------
    # end of stage

    def _maintenance(self) -> None:
        s = self.stage
        for proc in self.processes:
            if not proc.live():
                continue
            xi_state = proc.xi.state
            cur = (
                xi_state.params.value(proc.m, "U")
                if isinstance(xi_state, SteeringState)
                else proc.m
            )
            if cur != proc.x_snapshot:
                self._disarm(proc.q, "DP-5")
            proc.x_snapshot = cur
        self.processes = [p for p in self.processes if p.live()]
        self.live_pairs = [p for p in self.live_pairs if p.canceled is None]
        self._audit_params()

    def _audit_params(self) -> None:
        survivors: dict[Node, None] = {}
        for node in self._param_nodes:
            st = node.state
            if not isinstance(st, (HunterState, SteeringState)):
                continue
            survivors[node] = None
            if isinstance(st, HunterState):
                columns = ("W", "U", "V") if node.kind == "R" else (
                    ("W", "V") if node.kind == "R-" else ("V",)
                )
            else:
                columns = ("U",)
            anchors = st.params.anchors()
            top = (anchors[-1][0] if anchors else 0) + 1
            snap: dict[tuple[str, int], int] = {}
            for col in columns:
                prev_val: Optional[int] = None
                for k in range(top + 1):
                    val = st.params.value(k, col)
                    if prev_val is not None and val <= prev_val:
                        raise EngineFault(
                            f"{node.display_path} parameter column {col} not "
                            f"strictly increasing at index {k}"
                        )
                    prev_val = val
                    snap[(col, k)] = val
            for key, val in snap.items():
                old = st.param_snapshot.get(key)
                if old is not None and val < old:
                    raise EngineFault(
                        f"{node.display_path} parameter {key} moved down "
                        f"from {old} to {val}"
                    )
            st.param_snapshot = snap
        self._param_nodes = survivors

    # ------------------------------------------------------------------
    # local priority, exposed for the monitors

    def local_prec(self, xi: Node, a: Node, b: Node) -> Optional[bool]:
        """Order across the numeric/limit split at a steering node.

        True: a comes first; False: b comes first; None: incomparable.
        One argument must extend a numeric edge of xi, the other must live
        in xi's limit world.
        """
        a_num = self._numeric_index_under(xi, a)
        b_num = self._numeric_index_under(xi, b)
        if (a_num is None) == (b_num is None):
            raise EngineFault("local order needs one numeric-side and one world node")
        if a_num is None:
            flipped = self.local_prec(xi, b, a)
            return None if flipped is None else not flipped
        xi_state = xi.state
        pairs = list(xi_state.pairs.values()) if isinstance(xi_state, SteeringState) else []
        for rec in pairs:
            if a_num <= rec.n and (rec.q is b or before(rec.q, b) is True):
                return True
        for rec in pairs:
            if (b is rec.q or before(b, rec.q) is True) and a_num > rec.n:
                return False
        return None

    @staticmethod
    def _numeric_index_under(xi: Node, node: Node) -> Optional[int]:
        walker = node
        while walker.parent is not None:
            if walker.parent is xi:
                return walker.edge[0] if isinstance(walker.edge, tuple) else None
            walker = walker.parent
        return None
