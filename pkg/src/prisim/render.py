"""Text and DOT renderers for bounded regions of the strategy tree."""

from __future__ import annotations

from typing import Optional

from .tree import Node, Tree, edge_display, label_str, outcomes


def render_text(tree: Tree, depth: int, div_bound: int = 1, root: Optional[Node] = None) -> str:
    """Indented listing, children in outcome order, one node per line."""
    start = tree.root if root is None else root
    lines: list[str] = [label_str(start)]

    def walk(node: Node, indent: int) -> None:
        if node.depth - start.depth >= depth or node.kind in ("P", "Q"):
            return
        for edge in outcomes(node, div_bound):
            child = tree.child(node, edge)
            lines.append(f"{'  ' * indent}{edge_display(edge)} -> {label_str(child)}")
            walk(child, indent + 1)

    walk(start, 1)
    return "\n".join(lines) + "\n"


def render_dot(tree: Tree, depth: int, div_bound: int = 1) -> str:
    """Graphviz digraph of the same region."""
    lines = ["digraph strategy_tree {", '  node [shape=box, fontname="monospace"];']
    ids: dict[Node, int] = {}

    def nid(node: Node) -> int:
        if node not in ids:
            ids[node] = len(ids)
            text = label_str(node).replace('"', '\\"')
            lines.append(f'  n{ids[node]} [label="{text}"];')
        return ids[node]

    def walk(node: Node) -> None:
        me = nid(node)
        if node.depth >= depth or node.kind in ("P", "Q"):
            return
        for edge in outcomes(node, div_bound):
            child = tree.child(node, edge)
            lines.append(f'  n{me} -> n{nid(child)} [label="{edge_display(edge)}"];')
            walk(child)

    walk(tree.root)
    lines.append("}")
    return "\n".join(lines) + "\n"
