"""Assemble the matching problem, extract mappings, score candidates.

`assemble` turns (workload, intrinsic, mode) into a constraint problem whose
variables are the intrinsic's scalar nodes and whose domains are regions of
the workload's instance sets.  A solution places every intrinsic node on a
workload instance; `extract_mapping` reads the geometry back out as
"intrinsic dimension -> (workload iterator, tile, stride, pad)" plus
per-tensor rectangle descriptors and window flags, which is everything the
rewrite stage needs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Optional, Sequence

from . import csp
from .constraints import (
    AllDiffConstraint,
    DenseConstraint,
    EdgeConstraint,
    FixedOriginConstraint,
    HyperRectangleConstraint,
    LinearAccessConstraint,
    RectFail,
    infer_rectangle,
    padded_extent,
)
from .csp import Problem, SearchConfig, SearchStats, Solution
from .domains import TupleDomain
from .graph import InstructionGraph, NodeKind, expand_intrinsic
from .workload import (
    ADD_SET,
    MUL_SET,
    IntrinsicSpec,
    IteratorKind,
    Relation,
    Workload,
    build_instance_sets,
    build_relations,
    invert_relation,
    tensor_set_name,
)


class Mode(str, Enum):
    STRICT = "strict"
    RELAXED = "relaxed"


class InfeasibleEmbeddingError(Exception):
    """No placement can exist; reported before any search runs."""


class InternalConsistencyError(Exception):
    """A solution's tensor rectangles disagree with its iterator mapping."""


# ---------------------------------------------------------------------------
# shared context: padded extents, bounds, relations
# ---------------------------------------------------------------------------


@dataclass
class EmbeddingContext:
    workload: Workload
    intrinsic: IntrinsicSpec
    mode: Mode
    virtual_extents: dict[str, int]
    iterator_pads: dict[str, int]
    tensor_bounds: dict[str, tuple[tuple[int, int], ...]]
    relations: dict[str, Relation]
    inverses: dict[str, Relation]
    mul_bounds: tuple[tuple[int, int], ...]
    add_bounds: tuple[tuple[int, int], ...]
    mul_dim_names: tuple[str, ...]
    add_dim_names: tuple[str, ...]
    # where each axis leaves real data and enters appended extent padding;
    # strided rectangle dimensions must stay below these thresholds
    add_pad_from: tuple[int, ...] = ()
    tensor_pad_from: dict[str, tuple[int, ...]] = field(default_factory=dict)


def _smallest_wide_extent(intrinsic: IntrinsicSpec, kind: IteratorKind) -> Optional[int]:
    extents = [
        it.extent for it in intrinsic.workload.iterators
        if it.kind is kind and it.extent > 1
    ]
    return min(extents) if extents else None


def build_context(w: Workload, i: IntrinsicSpec, mode: Mode) -> EmbeddingContext:
    virtual = {}
    pads = {}
    for it in w.iterators:
        target = _smallest_wide_extent(i, it.kind)
        if mode is Mode.RELAXED and target is not None and it.extent < target:
            virt, pad = padded_extent(it.extent, target, target)
        else:
            virt, pad = it.extent, 0
        virtual[it.name] = virt
        pads[it.name] = pad

    sets = build_instance_sets(w)
    rels = build_relations(w)

    mul_names = sets[MUL_SET].names()
    add_names = sets[ADD_SET].names()
    mul_bounds = tuple((0, virtual[n]) for n in mul_names)
    add_bounds = tuple((0, virtual[n]) for n in add_names)

    # Tensor bounds: normally the declared shape; in relaxed mode a dim is
    # widened to the access image when boundary padding applies or an
    # accessing iterator got extent-padded.
    tensor_bounds: dict[str, tuple[tuple[int, int], ...]] = {}
    accesses = {w.statement.output.tensor: w.statement.output.access}
    for op in w.statement.operands:
        accesses[op.tensor] = op.access
    real_extents = {it.name: it.extent for it in w.iterators}
    tensor_pad_from: dict[str, tuple[int, ...]] = {}
    for t in w.tensors:
        dims = []
        pad_from = []
        access = accesses.get(t.name)
        for d, shape_d in enumerate(t.shape):
            lo, hi = 0, shape_d
            real_hi = shape_d
            if mode is Mode.RELAXED and access is not None:
                expr = access[d]
                widen = t.pad[d] or any(pads[n] > 0 for n in expr.iterators())
                if widen:
                    e_lo = expr.constant
                    e_hi = expr.constant
                    for n, c in expr.terms:
                        span = (virtual[n] - 1) * c
                        e_lo += min(0, span)
                        e_hi += max(0, span)
                    lo, hi = min(lo, e_lo), max(hi, e_hi + 1)
                    if t.pad[d]:
                        # boundary halo zeros sit at fixed positions, so the
                        # real-extent image (not the declared shape) is where
                        # appended extent padding begins
                        r_hi = expr.constant
                        for n, c in expr.terms:
                            r_hi += max(0, (real_extents[n] - 1) * c)
                        real_hi = max(real_hi, r_hi + 1)
            dims.append((lo, hi))
            pad_from.append(real_hi)
        tensor_bounds[t.name] = tuple(dims)
        tensor_pad_from[t.name] = tuple(pad_from)

    # Rebind relation bounds to the virtual/widened regions.
    bound_rels: dict[str, Relation] = {}
    set_bounds = {
        MUL_SET: mul_bounds,
        ADD_SET: add_bounds,
    }
    for t in w.tensors:
        set_bounds[tensor_set_name(t.name)] = tensor_bounds[t.name]
    for name, rel in rels.items():
        bound_rels[name] = rel.with_bounds(
            set_bounds[rel.source.name], set_bounds[rel.target.name]
        )
    inverses = {name: invert_relation(rel) for name, rel in bound_rels.items()}

    return EmbeddingContext(
        workload=w,
        intrinsic=i,
        mode=mode,
        virtual_extents=virtual,
        iterator_pads=pads,
        tensor_bounds=tensor_bounds,
        relations=bound_rels,
        inverses=inverses,
        mul_bounds=mul_bounds,
        add_bounds=add_bounds,
        mul_dim_names=mul_names,
        add_dim_names=add_names,
        add_pad_from=tuple(real_extents[n] for n in add_names),
        tensor_pad_from=tensor_pad_from,
    )


def check_feasible(ctx: EmbeddingContext):
    """Cheap bound argument: every intrinsic extent must fit in the product
    of same-kind workload (virtual) extents, because a single intrinsic
    dimension may at most spread across all same-kind workload iterators.
    """
    for kind in (IteratorKind.SPATIAL, IteratorKind.REDUCTION):
        capacity = 1
        for it in ctx.workload.iterators:
            if it.kind is kind:
                capacity *= ctx.virtual_extents[it.name]
        for it in ctx.intrinsic.workload.iterators:
            if it.kind is kind and it.extent > capacity:
                raise InfeasibleEmbeddingError(
                    f"instruction dimension {it.name} needs {it.extent} "
                    f"{kind.value} instances but the workload only has "
                    f"{capacity} (padding {'on' if ctx.mode is Mode.RELAXED else 'off'})"
                )


# ---------------------------------------------------------------------------
# problem assembly
# ---------------------------------------------------------------------------


@dataclass
class EmbeddingProblem:
    context: EmbeddingContext
    graph: InstructionGraph
    base_order: tuple[str, ...]

    def make_problem(self, order: Optional[Sequence[str]] = None) -> Problem:
        ctx = self.context
        g = self.graph
        problem = Problem()
        w = ctx.workload

        for group_idx, group in enumerate(g.groups):
            for node_id in group:
                node = g.node(node_id)
                if node.kind is NodeKind.ADD_ACCUM:
                    names = ctx.add_dim_names
                    bounds = ctx.add_bounds
                elif node.kind is NodeKind.MUL:
                    names = ctx.mul_dim_names
                    bounds = ctx.mul_bounds
                else:
                    tname = w.statement.operands[node.operand].tensor
                    bounds = ctx.tensor_bounds[tname]
                    names = tuple(f"{tname}.{d}" for d in range(len(bounds)))
                var_id = problem.add_variable(
                    group_idx, names, TupleDomain.from_bounds(bounds)
                )
                assert var_id == node_id  # graph ids are dense and grouped

        # Group-shape constraints first: they are the cheapest to fail and
        # the FIFO queue visits propagators in posting order.
        max_stride = 1 if ctx.mode is Mode.STRICT else None
        for group_idx, group in enumerate(g.groups):
            first = g.node(group[0])
            if first.kind is not NodeKind.MUL:
                if first.kind is NodeKind.ADD_ACCUM:
                    bounds = ctx.add_bounds
                    pad_from = ctx.add_pad_from
                else:
                    tname = w.statement.operands[first.operand].tensor
                    bounds = ctx.tensor_bounds[tname]
                    pad_from = ctx.tensor_pad_from[tname]
                origin = tuple(lo for lo, _ in bounds)
                problem.post(FixedOriginConstraint(group[0], origin))
                if len(group) >= 2:
                    problem.post(HyperRectangleConstraint(
                        group, bounds, max_stride, pad_from=pad_from))
                    if ctx.mode is Mode.STRICT:
                        problem.post(DenseConstraint(group))
            problem.post(AllDiffConstraint(group))

        for src, dst, rel_name in g.seq_edges:
            rel = ctx.relations[rel_name]
            problem.post(EdgeConstraint(src, dst, rel, ctx.inverses[rel_name]))

        if ctx.mode is Mode.STRICT:
            mul_group = next(
                grp for grp in g.groups if g.node(grp[0]).kind is NodeKind.MUL
            )
            problem.post(LinearAccessConstraint(
                mul_group,
                ctx.mul_dim_names,
                tuple(op.access for op in w.statement.operands),
            ))

        problem.set_dim_significance(order if order is not None else self.base_order)
        return problem


def assemble(w: Workload, i: IntrinsicSpec, mode: Mode) -> EmbeddingProblem:
    ctx = build_context(w, i, mode)
    check_feasible(ctx)
    graph = expand_intrinsic(i)
    base_order = tuple(it.name for it in w.iterators)
    return EmbeddingProblem(context=ctx, graph=graph, base_order=base_order)


# ---------------------------------------------------------------------------
# mapping extraction
# ---------------------------------------------------------------------------


@dataclass(frozen=True, order=True)
class MapEntry:
    iterator: str  # workload iterator name
    tile: int
    stride: int
    pad: int  # elements appended past the iterator's extent
    grid: int  # number of tile steps covering the (padded) extent


@dataclass(frozen=True, order=True)
class WindowInfo:
    tensor: str
    dim: int
    window_iterator: str  # the mapped iterator forming the window
    outer_iterator: str  # the free iterator sliding the window
    window_coeff: int
    step: int  # coefficient of the outer iterator
    span: int  # window footprint in elements
    offset: int  # constant term of the access expression


@dataclass(frozen=True)
class RectDescriptor:
    origin: tuple[int, ...]
    dims: tuple[tuple[int, int, int], ...]  # (axis, stride, size), innermost first


@dataclass(frozen=True)
class DimensionMapping:
    # per intrinsic iterator name: entries outermost -> innermost
    entries: tuple[tuple[str, tuple[MapEntry, ...]], ...]
    tensor_rects: tuple[tuple[str, RectDescriptor], ...]
    windows: tuple[WindowInfo, ...]
    flags: frozenset

    def entry_map(self) -> dict[str, tuple[MapEntry, ...]]:
        return dict(self.entries)

    def mapped_iterators(self) -> dict[str, MapEntry]:
        out = {}
        for _, ents in self.entries:
            for e in ents:
                out[e.iterator] = e
        return out

    def key(self):
        return (self.entries, self.windows, tuple(sorted(self.flags)))


def _mul_coord_index(graph: InstructionGraph, intrinsic: IntrinsicSpec):
    table = {}
    for group in graph.groups:
        if graph.node(group[0]).kind is NodeKind.MUL:
            for node_id in group:
                table[graph.node(node_id).coords] = node_id
    return table


def extract_mapping(
    sol: Solution, ep: EmbeddingProblem
) -> DimensionMapping:
    ctx = ep.context
    w, intr = ctx.workload, ctx.intrinsic
    graph = ep.graph
    i_sets = build_instance_sets(intr.workload)
    i_mul_names = i_sets[MUL_SET].names()
    mul_table = _mul_coord_index(graph, intr)
    workload_extents = w.extents()

    entries: list[tuple[str, tuple[MapEntry, ...]]] = []
    mapped_names: set[str] = set()
    deferred: list[str] = []  # extent-1 intrinsic iterators

    for it in intr.workload.iterators:
        if it.extent == 1:
            deferred.append(it.name)
            entries.append((it.name, ()))  # placeholder, filled below
            continue
        axis = i_mul_names.index(it.name)
        points = []
        for t in range(it.extent):
            coords = tuple(
                t if d == axis else 0 for d in range(len(i_mul_names))
            )
            points.append(sol[mul_table[coords]])
        try:
            info = infer_rectangle(points, it.extent, complete=True)
        except RectFail as exc:
            raise InternalConsistencyError(
                f"mul slice along {it.name} is not a rectangle: {exc}"
            ) from exc
        ents = []
        for d in reversed(info.dims):  # outermost first
            name = ctx.mul_dim_names[d.axis]
            extent = workload_extents[name]
            # a strided tile visits {o + stride*j}; covering the extent
            # takes `stride` phase offsets times the block count, each
            # invocation contributing `size` distinct indices
            span = d.size * d.stride
            grid = d.stride * -(-max(extent, span) // span)
            pad = grid * d.size - extent
            ents.append(MapEntry(name, d.size, d.stride, pad, grid))
            mapped_names.add(name)
        entries.append((it.name, tuple(ents)))

    # Extent-1 intrinsic dims leave no geometric trace; bind each to the
    # first unmapped same-kind workload iterator (tile 1).
    kind_of = {it.name: it.kind for it in intr.workload.iterators}
    for idx, (iname, ents) in enumerate(entries):
        if iname not in deferred:
            continue
        pick = None
        for it in w.iterators:
            if it.kind is kind_of[iname] and it.name not in mapped_names:
                pick = it
                break
        if pick is not None:
            mapped_names.add(pick.name)
            entries[idx] = (
                iname,
                (MapEntry(pick.name, 1, 1, 0, pick.extent),),
            )

    # Per-tensor rectangles from the assigned input/output groups.
    rects: list[tuple[str, RectDescriptor]] = []
    for group in graph.groups:
        first = graph.node(group[0])
        if first.kind is NodeKind.MUL:
            continue
        points = [sol[v] for v in group]
        if first.kind is NodeKind.ADD_ACCUM:
            label = "<output>"
        else:
            label = w.statement.operands[first.operand].tensor
        if len(points) == 1:
            rects.append((label, RectDescriptor(points[0], ())))
            continue
        try:
            info = infer_rectangle(points, len(points), complete=True)
        except RectFail as exc:
            raise InternalConsistencyError(
                f"tensor group {label} does not form a rectangle: {exc}"
            ) from exc
        rects.append((
            label,
            RectDescriptor(
                info.origin,
                tuple((d.axis, d.stride, d.size) for d in info.dims),
            ),
        ))

    # Cross-check: single-iterator access dims must show the tile size the
    # iterator mapping predicts.
    entry_by_iter = {}
    for _, ents in entries:
        for e in ents:
            entry_by_iter[e.iterator] = e
    rect_by_tensor = dict(rects)
    for op in w.statement.operands:
        rect = rect_by_tensor.get(op.tensor)
        if rect is None:
            continue
        size_by_axis = {axis: size for axis, _, size in rect.dims}
        for d, expr in enumerate(op.access):
            iters = expr.iterators()
            if len(iters) != 1:
                continue
            e = entry_by_iter.get(iters[0])
            expected = e.tile if e is not None else 1
            actual = size_by_axis.get(d, 1)
            if expected != actual:
                raise InternalConsistencyError(
                    f"tensor {op.tensor} dim {d}: rectangle size {actual} "
                    f"!= mapped tile {expected} of iterator {iters[0]}"
                )

    # Window classification on operand access dims.
    windows: list[WindowInfo] = []
    flags: set[str] = set()
    for op in w.statement.operands:
        for d, expr in enumerate(op.access):
            iters = expr.iterators()
            if len(iters) < 2:
                continue
            mapped_here = [n for n in iters if n in entry_by_iter
                           and entry_by_iter[n].tile > 1]
            free_here = [n for n in iters if n not in mapped_here]
            if len(mapped_here) != 1 or not free_here:
                continue
            k = mapped_here[0]
            o = free_here[0]
            e = entry_by_iter[k]
            ck = abs(expr.coefficient(k))
            span = (e.tile - 1) * e.stride * ck + 1
            step = abs(expr.coefficient(o))
            if step < span:
                flags.add("overlapping-window")
            elif step > 1:
                flags.add("strided-window")
            else:
                continue
            windows.append(WindowInfo(
                tensor=op.tensor, dim=d, window_iterator=k, outer_iterator=o,
                window_coeff=ck, step=step, span=span, offset=expr.constant,
            ))

    return DimensionMapping(
        entries=tuple(entries),
        tensor_rects=tuple(rects),
        windows=tuple(windows),
        flags=frozenset(flags),
    )


# ---------------------------------------------------------------------------
# overhead and candidate ranking
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class OverheadVector:
    o_mac: int
    o_data: int

    def __post_init__(self):
        if self.o_mac < 0 or self.o_data < 0:
            raise ValueError("overhead components must be nonnegative")


@dataclass(frozen=True)
class Candidate:
    mapping: DimensionMapping
    overhead: OverheadVector
    score: float
    asset_index: int = 0


def intrinsic_invocations(m: DimensionMapping, w: Workload) -> int:
    mapped = m.mapped_iterators()
    calls = 1
    for it in w.iterators:
        e = mapped.get(it.name)
        calls *= e.grid if e is not None else it.extent
    return calls


def compute_overhead(m: DimensionMapping, w: Workload, i: IntrinsicSpec) -> OverheadVector:
    mac_min = math.prod(it.extent for it in w.iterators)
    tile_macs = math.prod(it.extent for it in i.workload.iterators)
    mac_total = intrinsic_invocations(m, w) * tile_macs

    mapped = m.mapped_iterators()
    windows = {(win.tensor, win.dim): win for win in m.windows}
    data_min = 0
    data_total = 0
    accesses = {w.statement.output.tensor: w.statement.output.access}
    for op in w.statement.operands:
        accesses[op.tensor] = op.access
    for t in w.tensors:
        data_min += math.prod(t.shape)
        access = accesses.get(t.name)
        if access is None:
            data_total += math.prod(t.shape)
            continue
        count = 1
        for d, shape_d in enumerate(t.shape):
            win = windows.get((t.name, d))
            if win is not None:
                e = mapped[win.window_iterator]
                positions = w.iterator(win.outer_iterator).extent
                window_len = e.grid * e.tile * e.stride
                count *= positions * window_len
                continue
            iters = access[d].iterators()
            if len(iters) == 1 and iters[0] in mapped:
                e = mapped[iters[0]]
                count *= e.grid * e.tile * e.stride
            else:
                count *= shape_d
        data_total += count

    return OverheadVector(
        o_mac=mac_total - mac_min,
        o_data=max(0, data_total - data_min),
    )


def score(overhead: OverheadVector, weights: tuple[float, float]) -> float:
    return math.hypot(overhead.o_mac * weights[0], overhead.o_data * weights[1])


def score_and_select(
    candidates: Sequence[Candidate], k: int, weights: tuple[float, float]
) -> list[Candidate]:
    rescored = [
        Candidate(c.mapping, c.overhead, score(c.overhead, weights), c.asset_index)
        for c in candidates
    ]
    rescored.sort(key=lambda c: (c.score, c.asset_index, c.mapping.key()))
    return rescored[:k]


# ---------------------------------------------------------------------------
# strategy orchestration
# ---------------------------------------------------------------------------


@dataclass
class SearchOutcome:
    candidates: list[Candidate]
    asset_stats: list[tuple[int, tuple[str, ...], SearchStats]]
    solutions_found: int
    failure_families: dict[str, int]


def _strategy_orders(ep: EmbeddingProblem, use_portfolio: bool) -> list[tuple[str, ...]]:
    w = ep.context.workload
    if not use_portfolio:
        return [ep.base_order]
    intr = ep.context.intrinsic.workload
    k_s = sum(1 for it in intr.iterators if it.kind is IteratorKind.SPATIAL)
    k_r = sum(1 for it in intr.iterators if it.kind is IteratorKind.REDUCTION)
    return csp.asset_orders(
        [it.name for it in w.spatial_iterators()],
        [it.name for it in w.reduction_iterators()],
        k_s, k_r,
    )


def search_candidates(
    ep: EmbeddingProblem,
    config: SearchConfig,
    strategy: str = "none",
    max_assets: Optional[int] = None,
    exhaustive: bool = False,
    complete_assets: bool = False,
) -> SearchOutcome:
    """Run the configured strategy and rank the surviving mappings.

    Assets are visited in index order and the portfolio stops once the
    requested number of candidates has been collected; pass
    ``exhaustive=True`` to run every asset regardless (needed when the
    caller wants the complete solution set rather than the top-k).
    ``complete_assets`` keeps each visited asset's search exhaustive so
    node counts stay comparable across strategies.
    """
    if strategy not in ("none", "A", "B", "AB"):
        raise ValueError(f"unknown strategy {strategy!r}")
    use_a = "A" in strategy
    use_b = "B" in strategy

    orders = _strategy_orders(ep, use_a)
    if max_assets is not None:
        orders = orders[:max_assets]

    default_bound = max(it.extent for it in ep.context.intrinsic.workload.iterators)
    bound = config.bound_b if config.bound_b is not None else default_bound

    def factory(order: tuple[str, ...]) -> Problem:
        problem = ep.make_problem(order)
        if use_b:
            for group_idx in range(len(problem.groups)):
                csp.apply_domain_bound(problem, group_idx, bound, stride=1)
        return problem

    target = None if exhaustive else config.candidate_count
    results = csp.portfolio(factory, orders, config, solution_target=target,
                            truncate_assets=not complete_assets)

    candidates: list[Candidate] = []
    seen = set()
    solutions_found = 0
    failure_families: dict[str, int] = {}
    for result in results:
        solutions_found += len(result.solutions)
        for fam, n in result.stats.failure_families.items():
            failure_families[fam] = failure_families.get(fam, 0) + n
        for sol in result.solutions:
            mapping = extract_mapping(sol, ep)
            key = mapping.key()
            if key in seen:
                continue
            seen.add(key)
            overhead = compute_overhead(mapping, ep.context.workload,
                                        ep.context.intrinsic)
            candidates.append(Candidate(
                mapping, overhead,
                score(overhead, config.weights),
                result.asset_index,
            ))

    ranked = score_and_select(candidates, config.candidate_count, config.weights)
    return SearchOutcome(
        candidates=ranked,
        asset_stats=[(r.asset_index, r.order, r.stats) for r in results],
        solutions_found=solutions_found,
        failure_families=failure_families,
    )
