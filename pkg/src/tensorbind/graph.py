"""Explicit dataflow graph of a hardware intrinsic.

Every scalar multiply, accumulate, and input element of the intrinsic
becomes a node.  Sequential edges carry the name of the relation that
connects the two instance sets (flow, operand access); spatial edges mark
output elements that may execute in parallel, stored star-pruned (a k-node
parallel class keeps k-1 edges through one hub).
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from enum import Enum

from .domains import TupleDomain
from .workload import (
    ADD_SET,
    FLOW_REL,
    MUL_SET,
    IntrinsicSpec,
    SpecError,
    access_relation_name,
    build_instance_sets,
    build_relations,
    eval_relation,
)


class NodeKind(str, Enum):
    ADD_ACCUM = "add"  # accumulator; doubles as the output element
    MUL = "mul"
    INPUT = "input"


@dataclass(frozen=True)
class Node:
    id: int
    kind: NodeKind
    coords: tuple[int, ...]
    tensor: str = ""  # set for INPUT nodes
    operand: int = -1  # operand position for INPUT nodes


@dataclass(frozen=True)
class InstructionGraph:
    nodes: tuple[Node, ...]
    seq_edges: tuple[tuple[int, int, str], ...]  # (src, dst, relation name)
    spatial_edges: tuple[tuple[int, int], ...]
    groups: tuple[tuple[int, ...], ...]  # branching order: add, mul, inputs...

    def node(self, node_id: int) -> Node:
        return self.nodes[node_id]


def expand_intrinsic(spec: IntrinsicSpec) -> InstructionGraph:
    """Expand the intrinsic's workload into an explicit node-per-scalar DFG."""
    w = spec.workload
    product = 1
    for it in w.iterators:
        product *= it.extent
    if product > spec.expansion_cap:
        raise SpecError(
            f"expansion would create {product} scalar instances; "
            f"raise expansion_cap (currently {spec.expansion_cap}) to proceed"
        )

    sets = build_instance_sets(w)
    rels = build_relations(w)

    nodes: list[Node] = []
    add_ids: dict[tuple[int, ...], int] = {}
    mul_ids: dict[tuple[int, ...], int] = {}
    input_ids: list[dict[tuple[int, ...], int]] = []
    groups: list[tuple[int, ...]] = []

    def alloc(kind: NodeKind, coords, tensor="", operand=-1) -> int:
        node_id = len(nodes)
        nodes.append(Node(node_id, kind, coords, tensor, operand))
        return node_id

    # Dense ids in lexicographic coordinate order, group by group, so the
    # same spec always yields the same graph.
    group = []
    for p in sets[ADD_SET].domain().iter_points():
        add_ids[p] = alloc(NodeKind.ADD_ACCUM, p)
        group.append(add_ids[p])
    groups.append(tuple(group))

    group = []
    for p in sets[MUL_SET].domain().iter_points():
        mul_ids[p] = alloc(NodeKind.MUL, p)
        group.append(mul_ids[p])
    groups.append(tuple(group))

    for k, op in enumerate(w.statement.operands):
        table: dict[tuple[int, ...], int] = {}
        group = []
        shape = w.tensor(op.tensor).shape
        for p in TupleDomain.from_extents(shape).iter_points():
            table[p] = alloc(NodeKind.INPUT, p, tensor=op.tensor, operand=k)
            group.append(table[p])
        input_ids.append(table)
        groups.append(tuple(group))

    seq_edges: list[tuple[int, int, str]] = []
    for p, mid in mul_ids.items():
        flow_img = eval_relation(rels[FLOW_REL], p).assigned_value()
        seq_edges.append((mid, add_ids[flow_img], FLOW_REL))
        for k in range(len(w.statement.operands)):
            rel = rels[access_relation_name(k)]
            target = eval_relation(rel, p).assigned_value()
            if target is None:
                raise SpecError(
                    f"intrinsic operand access {rel.name} is not functional"
                )
            seq_edges.append((mid, input_ids[k][target], rel.name))

    # Parallel outputs start as a clique and get star-pruned below.
    add_list = [add_ids[p] for p in sorted(add_ids)]
    clique = tuple(
        (add_list[i], add_list[j])
        for i in range(len(add_list))
        for j in range(i + 1, len(add_list))
    )

    g = InstructionGraph(
        nodes=tuple(nodes),
        seq_edges=tuple(seq_edges),
        spatial_edges=clique,
        groups=tuple(groups),
    )
    return star_prune_spatial(g)


def star_prune_spatial(g: InstructionGraph) -> InstructionGraph:
    """Reduce each spatial parallel class to a star (hub = lowest node id).

    Connectivity (hence the parallelism information) is preserved; the
    operation is idempotent.
    """
    # union-find over the spatial edges to find parallel classes
    parent: dict[int, int] = {}

    def find(x: int) -> int:
        parent.setdefault(x, x)
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    def union(a: int, b: int):
        ra, rb = find(a), find(b)
        if ra != rb:
            parent[max(ra, rb)] = min(ra, rb)

    for a, b in g.spatial_edges:
        union(a, b)

    classes: dict[int, list[int]] = {}
    for x in parent:
        classes.setdefault(find(x), []).append(x)

    star: list[tuple[int, int]] = []
    for hub, members in sorted(classes.items()):
        for m in sorted(members):
            if m != hub:
                star.append((hub, m))
    return replace(g, spatial_edges=tuple(star))


def node_groups(g: InstructionGraph) -> tuple[tuple[int, ...], ...]:
    """Branching groups, outputs first, then muls, then operand inputs."""
    return g.groups


def dump_graph(g: InstructionGraph) -> str:
    lines = []
    for n in g.nodes:
        kind = n.kind.value if n.kind is not NodeKind.INPUT else f"input:{n.tensor}"
        lines.append(f"{n.id} {kind} {n.coords}")
    for s, t, rel in g.seq_edges:
        lines.append(f"{s} -> {t} [seq] {rel}")
    for s, t in g.spatial_edges:
        lines.append(f"{s} -> {t} [spatial] parallel")
    return "\n".join(lines)
