"""The strategy tree: lazy nodes, labels, orderings, structural checks.

Nodes are unique interned objects created on demand; a node's identity is
its path from the root, and its label (kind plus payload) is computed from
the parent's label and the connecting edge when the node is first built.
Edges are either the symbolic outcomes "d", "inf", "0", "om" (the limit
outcome) or numeric divergence claims (n, F) with F one of "U", "V", "W".

Kinds and their outcome orders, left to right:

* Permit  -- introduces a candidate set; single outcome "0".
* G, D    -- measure agreement of an adversary functional against the
             candidate; G orders inf < 0, D orders d < inf < 0 and takes d
             unconditionally once its diagonalization fires.
* R, R-   -- divergence hunters over three (two) candidate columns;
             outcomes (0,W) < (0,U) < (0,V) < (1,W) < ... (R- omits U).
* S       -- single-column hunter; outcomes (0,V) < (1,V) < ...
* C       -- guard that splits the tree into a guarded world below its
             limit outcome "om" and numeric escape hatches (n,U) to its
             left; order type is omega + 1.
* P, Q    -- terminal diagonalization coordinators.

A node is "guarded" when some C-ancestor's limit outcome lies on its path;
`node.world` is that C-node (None outside).  Worlds never nest, C-nodes
never sit inside a world, and R- only appears inside one; the structural
checker verifies those facts rather than assuming them.
"""

from __future__ import annotations

import sys
from dataclasses import dataclass, field
from typing import Iterator, Optional, Union

Edge = Union[str, tuple[int, str]]

OUT_D = "d"
OUT_INF = "inf"
OUT_ZERO = "0"
OUT_LIMIT = "om"

_FAMS = ("U", "V", "W")


@dataclass(frozen=True)
class SetId:
    """Identity of a candidate set: U, or V/W tagged by the hosting G-nodes."""

    kind: str
    hosts: tuple["Node", ...] = ()

    def __str__(self) -> str:
        if self.kind == "U":
            return "U"
        inner = ",".join(h.display_path for h in self.hosts)
        return f"{self.kind}[{inner}]"


class Node:
    """One tree position; label payload is fixed at creation, state is engine-owned."""

    __slots__ = (
        "parent", "edge", "depth", "kind", "set_id", "e", "trip", "e_main", "e_w",
        "world", "banned_sets", "w_edge_ancestors", "conflicts", "path_str",
        "rank", "children", "state", "live", "activated", "epoch", "visits",
        "last_visit", "last_injury",
    )

    def __init__(self, parent: Optional["Node"], edge: Optional[Edge]):
        self.parent = parent
        self.edge = edge
        self.depth = 0 if parent is None else parent.depth + 1
        self.children: dict[Edge, Node] = {}
        # label payload, filled by Tree._label
        self.kind = ""
        self.set_id: Optional[SetId] = None
        self.e = -1
        self.trip: Optional[tuple[Node, Node, Node]] = None
        self.e_main: Optional[Node] = None
        self.e_w: tuple[Node, ...] = ()
        self.world: Optional[Node] = None
        self.banned_sets: tuple[SetId, ...] = ()
        self.w_edge_ancestors: tuple[Node, ...] = ()
        self.conflicts: tuple[Node, ...] = ()
        if parent is None:
            self.path_str = ""
        else:
            piece = edge_to_str(edge)
            self.path_str = sys.intern(piece if parent.path_str == "" else f"{parent.path_str}.{piece}")
        # rank of the incoming edge among the parent's outcomes, cached at labeling
        self.rank: float = 0
        # engine-owned slots; live counts state-bearing nodes in this subtree
        self.state = None
        self.live = 0
        self.activated = False
        self.epoch = 0
        self.visits = 0
        self.last_visit = -1
        self.last_injury = -1

    @property
    def display_path(self) -> str:
        return self.path_str if self.path_str else "<root>"

    def __repr__(self) -> str:
        return f"<{label_str(self)} @ {self.display_path}>"

    def is_ancestor_of(self, other: "Node") -> bool:
        while other.depth > self.depth:
            other = other.parent
        return other is self

    def ancestors(self) -> Iterator["Node"]:
        """Proper ancestors, root first."""
        chain = []
        node = self.parent
        while node is not None:
            chain.append(node)
            node = node.parent
        return iter(reversed(chain))


def edge_to_str(edge: Edge) -> str:
    if isinstance(edge, tuple):
        return f"{edge[0]}{edge[1]}"
    return edge


def edge_from_str(text: str) -> Edge:
    if text in (OUT_D, OUT_INF, OUT_ZERO, OUT_LIMIT):
        return text
    if text and text[-1] in _FAMS and text[:-1].isdigit():
        return (int(text[:-1]), text[-1])
    raise ValueError(f"not an edge: {text!r}")


def edge_display(edge: Edge) -> str:
    if isinstance(edge, tuple):
        return f"({edge[0]},{edge[1]})"
    return edge


class Tree:
    """Lazy interned strategy tree; `rule_mutation` exists for checker tests only."""

    def __init__(self, rule_mutation: Optional[str] = None):
        if rule_mutation not in (None, "swap_worlds"):
            raise ValueError(f"unknown rule mutation: {rule_mutation}")
        self.rule_mutation = rule_mutation
        self.root = Node(None, None)
        self.root.kind = "Permit"
        self.root.set_id = SetId("U")

    def child(self, node: Node, edge: Edge) -> Node:
        """The child of node along edge, created and labeled on first access."""
        got = node.children.get(edge)
        if got is None:
            self._check_edge(node, edge)
            got = Node(node, edge)
            self._label(got)
            got.rank = outcome_rank(node, edge)
            node.children[edge] = got
        return got

    def node_at(self, edges: list[Edge] | tuple[Edge, ...]) -> Node:
        node = self.root
        for edge in edges:
            node = self.child(node, edge)
        return node

    def node_from_str(self, path: str) -> Node:
        if path == "":
            return self.root
        return self.node_at([edge_from_str(p) for p in path.split(".")])

    def _check_edge(self, node: Node, edge: Edge) -> None:
        kind = node.kind
        ok = False
        if kind == "Permit":
            ok = edge == OUT_ZERO
        elif kind == "G":
            ok = edge in (OUT_INF, OUT_ZERO)
        elif kind == "D":
            ok = edge in (OUT_D, OUT_INF, OUT_ZERO)
        elif kind in ("R", "R-"):
            fams = ("W", "U", "V") if kind == "R" else ("W", "V")
            ok = isinstance(edge, tuple) and edge[0] >= 0 and edge[1] in fams
        elif kind == "S":
            ok = isinstance(edge, tuple) and edge[0] >= 0 and edge[1] == "V"
        elif kind == "C":
            ok = edge == OUT_LIMIT or (isinstance(edge, tuple) and edge[0] >= 0 and edge[1] == "U")
        if not ok:
            raise ValueError(f"illegal edge {edge_display(edge)} at {kind}-node {node.display_path}")

    def _label(self, node: Node) -> None:
        parent = node.parent
        edge = node.edge
        node.world = parent.world
        node.banned_sets = parent.banned_sets
        node.w_edge_ancestors = parent.w_edge_ancestors
        guarded = parent.world is not None

        if parent.kind == "Permit":
            node.kind = "G"
            node.e = 0
            node.set_id = parent.set_id
        elif parent.kind == "G":
            if edge == OUT_ZERO:
                node.kind = "D"
                node.e = parent.e
                node.set_id = parent.set_id
            else:
                fam = parent.set_id.kind
                if fam == "U":
                    node.kind = "Permit"
                    node.set_id = SetId("V", (parent,))
                elif fam == "V":
                    node.kind = "Permit"
                    node.set_id = SetId("W", (parent.set_id.hosts[0], parent))
                else:
                    hosts = parent.set_id.hosts
                    plain = "R" if not guarded else "R-"
                    if self.rule_mutation == "swap_worlds":
                        plain = "R-" if not guarded else "R"
                    node.kind = plain
                    node.trip = (hosts[0], hosts[1], parent)
        elif parent.kind == "D":
            if edge in (OUT_ZERO, OUT_D):
                node.kind = "G"
                node.e = parent.e + 1
                node.set_id = parent.set_id
            else:
                node.banned_sets = parent.banned_sets + (parent.set_id,)
                fam = parent.set_id.kind
                if fam == "U":
                    node.kind = "P"
                    node.e_main = parent
                    node.e_w = tuple(c.trip[2] for c in _kind_ancestors(node, "C"))
                elif fam == "V":
                    node.kind = "Q"
                    node.e_main = parent
                    node.e_w = tuple(s.trip[2] for s in _kind_ancestors(node, "S"))
                else:
                    hosts = parent.set_id.hosts
                    node.kind = "C" if not guarded else "S"
                    node.trip = (hosts[0], hosts[1], parent)
        elif parent.kind in ("R", "R-"):
            n, fam = edge
            host = parent.trip[{"U": 0, "V": 1, "W": 2}[fam]]
            node.kind = "D"
            node.e = host.e
            node.set_id = host.set_id
            if fam == "W":
                node.w_edge_ancestors = parent.w_edge_ancestors + (parent,)
        elif parent.kind == "S":
            host = parent.trip[1]
            node.kind = "D"
            node.e = host.e
            node.set_id = host.set_id
        elif parent.kind == "C":
            if edge == OUT_LIMIT:
                node.kind = "S"
                node.trip = parent.trip
                node.world = parent
            else:
                host = parent.trip[0]
                node.kind = "D"
                node.e = host.e
                node.set_id = host.set_id
        else:
            raise AssertionError(f"terminal node {parent!r} cannot have children")

        if node.kind == "D" and node.set_id.kind == "W":
            hosts = node.set_id.hosts
            node.conflicts = tuple(
                r for r in node.w_edge_ancestors if (r.trip[0], r.trip[1]) == hosts
            )


def _kind_ancestors(node: Node, kind: str) -> list[Node]:
    found = [a for a in node.ancestors() if a.kind == kind]
    return found


def outcome_rank(node: Node, edge: Edge) -> float:
    """Position of edge in node's left-to-right outcome order (limit maps to +inf)."""
    kind = node.kind
    if kind == "Permit":
        order = {OUT_ZERO: 0}
    elif kind == "G":
        order = {OUT_INF: 0, OUT_ZERO: 1}
    elif kind == "D":
        order = {OUT_D: 0, OUT_INF: 1, OUT_ZERO: 2}
    elif kind == "R":
        if isinstance(edge, tuple):
            return 3 * edge[0] + {"W": 0, "U": 1, "V": 2}[edge[1]]
        order = {}
    elif kind == "R-":
        if isinstance(edge, tuple):
            return 2 * edge[0] + {"W": 0, "V": 1}[edge[1]]
        order = {}
    elif kind == "S":
        if isinstance(edge, tuple):
            return float(edge[0])
        order = {}
    elif kind == "C":
        if edge == OUT_LIMIT:
            return float("inf")
        if isinstance(edge, tuple):
            return float(edge[0])
        order = {}
    else:
        order = {}
    if edge not in order:
        raise ValueError(f"edge {edge_display(edge)} is not an outcome of {kind}-node")
    return order[edge]


def outcomes(node: Node, div_bound: Optional[int] = None) -> Iterator[Edge]:
    """Outcome edges left to right; numeric families up to div_bound (None = unbounded).

    For C-nodes the limit outcome comes after every numeric edge, honoring
    the omega + 1 order; it is only reachable with a bound.
    """
    kind = node.kind
    if kind == "Permit":
        yield OUT_ZERO
    elif kind == "G":
        yield OUT_INF
        yield OUT_ZERO
    elif kind == "D":
        yield OUT_D
        yield OUT_INF
        yield OUT_ZERO
    elif kind in ("R", "R-", "S", "C"):
        fams = {"R": ("W", "U", "V"), "R-": ("W", "V"), "S": ("V",), "C": ("U",)}[kind]
        n = 0
        while div_bound is None or n <= div_bound:
            for fam in fams:
                yield (n, fam)
            n += 1
        if kind == "C":
            yield OUT_LIMIT


def set_host_permit(tree: Tree, set_id: SetId) -> Node:
    """The Permit-node that introduces the candidate: sender target for witnesses."""
    if set_id.kind == "U":
        return tree.root
    return tree.child(set_id.hosts[-1], OUT_INF)


def before(a: Node, b: Node) -> Optional[bool]:
    """Global priority: True if a comes before b, False if after, None if incomparable.

    Incomparable: ancestry, and any split at a C-node whose right branch is
    the limit outcome (the guarded world is not comparable with its guard's
    numeric outcomes).
    """
    if a is b:
        return None
    x, y = a, b
    while x.depth > b.depth:
        x = x.parent
    while y.depth > a.depth:
        y = y.parent
    if x is b or y is a:
        return None
    # ascend to the children of the deepest common ancestor
    x, y = a, b
    while x.depth > y.depth:
        x = x.parent
    while y.depth > x.depth:
        y = y.parent
    while x.parent is not y.parent:
        x = x.parent
        y = y.parent
    branch = x.parent
    r0 = outcome_rank(branch, x.edge)
    r1 = outcome_rank(branch, y.edge)
    if branch.kind == "C" and (x.edge == OUT_LIMIT or y.edge == OUT_LIMIT):
        return None
    return r0 < r1


@dataclass
class ClassifyResult:
    case: str
    first_host: Optional[Node]
    second_host: Optional[Node]
    why: str


def classify_path(leaf: Node) -> ClassifyResult:
    """Which candidate the finite branch through leaf currently supports.

    U unless some G(U)-ancestor took inf with no divergence claim for it
    further along; then V hosted there, unless a G(V)-ancestor is likewise
    unresolved; then W hosted by the two of them.
    """
    chain: list[Node] = []
    node = leaf
    while node is not None:
        chain.append(node)
        node = node.parent
    chain.reverse()

    def unresolved(fam: str, host_slot: int, want_host: Optional[Node]) -> Optional[Node]:
        for i, g in enumerate(chain[:-1]):
            if g.kind != "G" or g.set_id.kind != fam:
                continue
            if want_host is not None and g.set_id.hosts[host_slot - 1] is not want_host:
                continue
            if chain[i + 1].edge != OUT_INF:
                continue
            resolved = False
            for j in range(i + 1, len(chain) - 1):
                claim = chain[j]
                step = chain[j + 1].edge
                if not isinstance(step, tuple) or step[1] != fam:
                    continue
                if claim.trip is not None and claim.trip[host_slot] is g:
                    resolved = True
                    break
            if not resolved:
                return g
        return None

    a0 = unresolved("U", 0, None)
    if a0 is None:
        return ClassifyResult("U", None, None, "every G(U)-ancestor on the branch is resolved")
    a1 = unresolved("V", 1, a0)
    if a1 is None:
        return ClassifyResult(
            "V", a0, None, f"G(U) at {a0.display_path} took inf with no divergence claim"
        )
    return ClassifyResult(
        "W", a0, a1,
        f"G(U) at {a0.display_path} and G(V) at {a1.display_path} both unresolved",
    )


def iter_region(tree: Tree, depth: int, div_bound: int = 2) -> Iterator[Node]:
    """Every legal node to the given depth, numeric edges bounded, breadth first."""
    frontier = [tree.root]
    yield tree.root
    for _ in range(depth):
        nxt: list[Node] = []
        for node in frontier:
            if node.kind in ("P", "Q"):
                continue
            for edge in outcomes(node, div_bound):
                child = tree.child(node, edge)
                nxt.append(child)
                yield child
        frontier = nxt


@dataclass
class Violation:
    rule: str
    node: Node
    detail: str


def check_structural(tree: Tree, depth: int, div_bound: int = 2) -> list[Violation]:
    """Exhaustively verify the derived structural facts on the bounded region."""
    bad: list[Violation] = []
    p_nodes: list[Node] = []
    q_by_type: dict[SetId, list[Node]] = {}
    for node in iter_region(tree, depth, div_bound):
        if node.kind == "R" and node.world is not None:
            bad.append(Violation("plain-hunter-guarded", node, "R-node inside a guarded world"))
        if node.kind == "R-" and node.world is None:
            bad.append(Violation("guarded-hunter-outside", node, "R- node outside any world"))
        if node.kind == "C" and node.world is not None:
            bad.append(Violation("nested-world", node, "C-node inside a guarded world"))
        if node.kind == "S":
            if node.world is None:
                bad.append(Violation("stray-single-hunter", node, "S-node outside any world"))
            elif node.world.trip[0] is not node.trip[0]:
                bad.append(Violation(
                    "world-host-mismatch", node,
                    "guard's first host differs from the S-node's",
                ))
        if node.kind == "Q":
            if (len(node.e_w) > 0) != (node.world is not None):
                bad.append(Violation(
                    "q-scope", node,
                    f"e_w size {len(node.e_w)} vs guarded={node.world is not None}",
                ))
            q_by_type.setdefault(node.e_main.set_id, []).append(node)
        if node.kind == "P":
            p_nodes.append(node)
            types = {w.set_id for w in node.e_w}
            if len(types) != len(node.e_w):
                bad.append(Violation("p-ew-type-clash", node, "two e_w members share a candidate"))
        if node.kind in ("Permit", "G", "D") and node.set_id in node.banned_sets:
            bad.append(Violation(
                "rehosted-candidate", node,
                f"{node.set_id} worked on again below its coordinator's inf-outcome",
            ))
    for i, a in enumerate(p_nodes):
        for b in p_nodes[i + 1:]:
            if before(a, b) is None:
                bad.append(Violation("p-incomparable", b, f"vs {a.display_path}"))
    for group in q_by_type.values():
        for i, a in enumerate(group):
            for b in group[i + 1:]:
                if before(a, b) is None:
                    bad.append(Violation("q-incomparable", b, f"vs {a.display_path}"))
    return bad


def label_str(node: Node) -> str:
    kind = node.kind
    if kind == "Permit":
        return f"Permit({node.set_id})"
    if kind in ("G", "D"):
        return f"{kind}{node.e}({node.set_id})"
    if kind in ("R", "R-", "S", "C"):
        a0, a1, a2 = node.trip
        return f"{kind}({a0.display_path}; {a1.display_path}; {a2.display_path})"
    if kind == "P":
        ew = ",".join(w.display_path for w in node.e_w)
        return f"P(EU=[{node.e_main.display_path}], EW=[{ew}])"
    if kind == "Q":
        ew = ",".join(w.display_path for w in node.e_w)
        return f"Q(EV=[{node.e_main.display_path}], EW=[{ew}])"
    raise AssertionError(f"unlabeled node {node.display_path}")
