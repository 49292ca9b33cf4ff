"""Ground-truth evaluation and the brute-force matching oracle.

`run_naive` evaluates a workload directly from its declaration.
`run_plan` executes a rewrite plan: pack operands, loop over the emitted
nest calling the instruction model per tile, unpack the output.  Both use
wrapping 32-bit accumulation so equality is well-defined for any inputs.

`brute_force_embeddings` enumerates placements by direct definition of
every rule (no propagators anywhere in the call path), which makes it a
trustworthy reference for the constraint solver.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .domains import Point, TupleDomain
from .embedding import EmbeddingContext, Mode, build_context, check_feasible, \
    InfeasibleEmbeddingError
from .graph import NodeKind, expand_intrinsic
from .rewrite import RewritePlan, StepKind, apply_layout
from .workload import (
    ADD_SET,
    FLOW_REL,
    MUL_SET,
    IntrinsicSpec,
    IteratorKind,
    Workload,
    access_relation_name,
    build_instance_sets,
    build_relations,
    relation_holds,
)

_DTYPES = {"int8": np.int8, "int32": np.int32}


class ShapeMismatchError(ValueError):
    pass


class OracleGuardError(RuntimeError):
    """The brute-force space is too large to enumerate safely."""


# ---------------------------------------------------------------------------
# naive interpreter
# ---------------------------------------------------------------------------


def _check_inputs(w: Workload, inputs: dict) -> None:
    for op in w.statement.operands:
        t = w.tensor(op.tensor)
        if op.tensor not in inputs:
            raise ShapeMismatchError(f"missing input tensor {op.tensor!r}")
        if tuple(inputs[op.tensor].shape) != t.shape:
            raise ShapeMismatchError(
                f"tensor {op.tensor}: got shape {tuple(inputs[op.tensor].shape)}, "
                f"declared {t.shape}"
            )


def run_naive(w: Workload, inputs: dict) -> np.ndarray:
    """Direct evaluation: loop the reduction space, vectorize the spatial."""
    _check_inputs(w, inputs)
    out_def = w.tensor(w.statement.output.tensor)
    out_access = w.statement.output.access

    spatial = w.spatial_iterators()
    reduction = w.reduction_iterators()

    # Every output dim must be one spatial iterator (unit coefficient) so
    # the spatial grid can be laid out directly in output axis order.
    out_iters = []
    for d, expr in enumerate(out_access):
        if len(expr.terms) != 1 or expr.terms[0][1] != 1 or expr.constant != 0:
            raise ShapeMismatchError(
                f"output access dim {d} must be a single iterator"
            )
        out_iters.append(expr.terms[0][0])
    grids = np.indices(out_def.shape)
    grid_of = {name: grids[d] for d, name in enumerate(out_iters)}
    for it in spatial:
        if it.name not in grid_of:
            # spatial iterator absent from the output: reduce over it too
            # (not produced by the supported statement forms)
            raise ShapeMismatchError(
                f"spatial iterator {it.name} does not index the output"
            )

    acc = np.zeros(out_def.shape, dtype=np.int32)
    red_ranges = [range(it.extent) for it in reduction]
    for combo in itertools.product(*red_ranges):
        env = dict(zip((it.name for it in reduction), combo))
        factors = []
        for op in w.statement.operands:
            t = w.tensor(op.tensor)
            data = inputs[op.tensor]
            idx = []
            mask = None
            for d, expr in enumerate(op.access):
                val = np.full(out_def.shape, expr.constant, dtype=np.int64)
                for name, coeff in expr.terms:
                    if name in grid_of:
                        val = val + coeff * grid_of[name]
                    else:
                        val = val + coeff * env[name]
                in_range = (val >= 0) & (val < t.shape[d])
                if not bool(in_range.all()):
                    if not t.pad[d]:
                        raise ShapeMismatchError(
                            f"tensor {op.tensor} dim {d}: out-of-range access "
                            "on a dim without zero padding"
                        )
                    mask = in_range if mask is None else (mask & in_range)
                    val = np.clip(val, 0, t.shape[d] - 1)
                idx.append(val)
            gathered = data[tuple(idx)].astype(np.int32)
            if mask is not None:
                gathered = np.where(mask, gathered, np.int32(0))
            factors.append(gathered)
        with np.errstate(over="ignore"):
            acc = acc + factors[0] * factors[1]  # int32 wraps on overflow
    return acc


# ---------------------------------------------------------------------------
# instruction model
# ---------------------------------------------------------------------------


def run_intrinsic_model(
    i: IntrinsicSpec,
    tiles: Sequence[np.ndarray],
    acc: Optional[np.ndarray] = None,
) -> np.ndarray:
    """Exact integer tile contraction, written independently of run_naive."""
    w = i.workload
    letters = {}
    for idx, it in enumerate(w.iterators):
        letters[it.name] = chr(ord("a") + idx)

    def subscript(access) -> str:
        out = []
        for d, expr in enumerate(access):
            if len(expr.terms) != 1 or abs(expr.terms[0][1]) != 1 or expr.constant:
                raise ShapeMismatchError(
                    "instruction accesses must be plain iterators"
                )
            out.append(letters[expr.terms[0][0]])
        return "".join(out)

    subs = []
    for op, tile in zip(w.statement.operands, tiles):
        expected = w.tensor(op.tensor).shape
        if tuple(tile.shape) != expected:
            raise ShapeMismatchError(
                f"tile for {op.tensor}: shape {tuple(tile.shape)} != {expected}"
            )
        subs.append(subscript(op.access))
    out_sub = subscript(w.statement.output.access)
    spec = f"{subs[0]},{subs[1]}->{out_sub}"
    with np.errstate(over="ignore"):
        result = np.einsum(
            spec, tiles[0].astype(np.int32), tiles[1].astype(np.int32),
            dtype=np.int32,
        ).astype(np.int32)
    if acc is not None:
        if tuple(acc.shape) != tuple(result.shape):
            raise ShapeMismatchError("accumulator tile shape mismatch")
        with np.errstate(over="ignore"):
            return (acc + result).astype(np.int32)
    return result


# ---------------------------------------------------------------------------
# plan executor
# ---------------------------------------------------------------------------


@dataclass
class ExecStats:
    intrinsic_calls: int = 0


class PlanIntegrityError(RuntimeError):
    pass


def run_plan(
    plan: RewritePlan,
    w: Workload,
    i: IntrinsicSpec,
    inputs: dict,
    stats: Optional[ExecStats] = None,
) -> np.ndarray:
    _check_inputs(w, inputs)
    stats = stats if stats is not None else ExecStats()

    packed = {}
    for op in w.statement.operands:
        packed[op.tensor] = apply_layout(plan.tensor_steps[op.tensor],
                                         inputs[op.tensor])
        expected = plan.transformed_shapes[op.tensor]
        if tuple(packed[op.tensor].shape) != tuple(expected):
            raise PlanIntegrityError(
                f"packed {op.tensor} has shape {packed[op.tensor].shape}, "
                f"plan says {expected}"
            )

    out_name = w.statement.output.tensor
    out_t = np.zeros(plan.transformed_shapes[out_name], dtype=np.int32)

    # instruction-side geometry: tile dims per operand, in instruction
    # declaration order (how the plan ordered the packed tile slots)
    intr_w = i.workload
    intr_order = [it.name for it in intr_w.iterators]

    def tile_axis_names(access) -> list[str]:
        return [expr.terms[0][0] for expr in access]

    operand_axis_order = [
        tile_axis_names(op.access) for op in intr_w.statement.operands
    ]
    output_axis_order = tile_axis_names(intr_w.statement.output.access)

    def compile_selectors(selectors):
        """Precompute (affine dims, tile positions) for fast indexing."""
        affine = []
        tile_positions = []
        for d, sel in enumerate(selectors):
            if sel["kind"] == "tile":
                tile_positions.append(d)
            else:
                affine.append((d, [(n, c) for n, c in sel["terms"]],
                               sel["constant"]))
        return affine, tile_positions

    compiled_ops = [
        compile_selectors(sel) for sel in plan.loop_nest.operand_selectors
    ]
    compiled_out = compile_selectors(plan.loop_nest.output_selectors)

    def sorted_tile_order(arr_tile_dims: int, axis_names: list[str]) -> list[int]:
        # packed tile axes are sorted by instruction declaration order;
        # transpose them into the operand's access order
        present = sorted(
            (n for n in axis_names), key=lambda n: intr_order.index(n)
        )
        return [present.index(n) for n in axis_names]

    loop_names = [n for n, _ in plan.loop_nest.loops]
    loop_extents = [e for _, e in plan.loop_nest.loops]

    operand_arrays = [packed[op.tensor] for op in w.statement.operands]
    operand_names = [op.tensor for op in w.statement.operands]
    intr_shapes = [intr_w.tensor(op.tensor).shape
                   for op in intr_w.statement.operands]
    out_tile_shape = intr_w.tensor(intr_w.statement.output.tensor).shape

    for combo in itertools.product(*(range(e) for e in loop_extents)):
        env = dict(zip(loop_names, combo))

        def build_index(arr, affine, tile_positions):
            idx = [slice(None)] * arr.ndim
            in_range = True
            for d, terms, const in affine:
                v = const + sum(c * env.get(n, 0) for n, c in terms)
                if not (0 <= v < arr.shape[d]):
                    in_range = False
                    break
                idx[d] = v
            return tuple(idx), in_range

        tiles = []
        for pos, (arr, (affine, tile_positions)) in enumerate(
            zip(operand_arrays, compiled_ops)
        ):
            idx, ok = build_index(arr, affine, tile_positions)
            if ok:
                tile = arr[idx]
            else:
                tile = None  # fully out-of-range: zero contribution
            axis_names = operand_axis_order[pos]
            if tile is None:
                tile = np.zeros(intr_shapes[pos], dtype=arr.dtype)
            else:
                perm = sorted_tile_order(tile.ndim, axis_names)
                tile = np.transpose(tile, perm)
                if tuple(tile.shape) != tuple(intr_shapes[pos]):
                    raise PlanIntegrityError(
                        f"tile for {operand_names[pos]} has shape "
                        f"{tuple(tile.shape)}, instruction wants "
                        f"{tuple(intr_shapes[pos])}"
                    )
            tiles.append(tile)

        out_idx, ok = build_index(out_t, compiled_out[0], compiled_out[1])
        if not ok:
            raise PlanIntegrityError("output tile indexed out of range")
        out_perm = sorted_tile_order(len(compiled_out[1]), output_axis_order)
        acc_view = np.transpose(out_t[out_idx], out_perm)
        result = run_intrinsic_model(i, tiles, acc=acc_view)
        stats.intrinsic_calls += 1
        # write back through the inverse permutation
        inv_perm = [0] * len(out_perm)
        for a, b in enumerate(out_perm):
            inv_perm[b] = a
        out_t[out_idx] = np.transpose(result, inv_perm)

    unpacked = apply_layout(plan.output_inverse, out_t)
    declared = w.tensor(out_name).shape
    if tuple(unpacked.shape) != declared:
        raise PlanIntegrityError(
            f"unpacked output shape {tuple(unpacked.shape)} != declared {declared}"
        )
    return unpacked.astype(np.int32)


# ---------------------------------------------------------------------------
# brute-force matching oracle
# ---------------------------------------------------------------------------


def _rect_traversal_oracle(
    points: list[Point],
    pad_from: Optional[Sequence[int]] = None,
) -> bool:
    """Is `points` a lexicographic traversal of a strided rectangle?

    Brute force by construction: infer candidate (axes, sizes, strides)
    combos from the coordinate spans and compare the generated traversal
    against the given sequence.  `pad_from[a]` marks where axis `a` enters
    appended zero padding; a dimension may reach that region only with
    stride 1.
    """
    total = len(points)
    if total == 0:
        return False
    if total == 1:
        return True
    if len(set(points)) != total:
        return False
    arity = len(points[0])
    varying = [a for a in range(arity)
               if any(p[a] != points[0][a] for p in points)]
    if not varying:
        return False
    origin = points[0]

    def ordered_factorizations(n: int, max_parts: int):
        if max_parts == 0:
            if n == 1:
                yield ()
            return
        for first in range(2, n + 1):
            if n % first == 0:
                for rest in ordered_factorizations(n // first, max_parts - 1):
                    yield (first,) + rest
        if n == 1:
            yield ()

    for sizes in ordered_factorizations(total, len(varying)):
        if len(sizes) != len(varying):
            continue
        for axes in itertools.permutations(varying):
            # axes[0] innermost; infer stride per axis from spans
            ok = True
            strides = []
            for axis, size in zip(axes, sizes):
                top = max(p[axis] for p in points)
                span = top - origin[axis]
                if size == 1 or span <= 0 or span % (size - 1) != 0:
                    ok = False
                    break
                stride = span // (size - 1)
                if (pad_from is not None and stride > 1
                        and top >= pad_from[axis]):
                    ok = False
                    break
                strides.append(stride)
            if not ok:
                continue
            generated = []
            # outermost axis varies slowest: iterate sizes reversed
            for combo in itertools.product(
                *(range(s) for s in reversed(sizes))
            ):
                p = list(origin)
                for (axis, stride), c in zip(
                    zip(reversed(axes), reversed(strides)), combo
                ):
                    p[axis] += stride * c
                generated.append(tuple(p))
            if generated == points:
                return True
    return False


def brute_force_embeddings(
    w: Workload,
    i: IntrinsicSpec,
    mode: Mode,
    limit: int = 10**7,
) -> set[tuple[Point, ...]]:
    """All placements satisfying the mode's rules, by direct definition."""
    ctx = build_context(w, i, mode)
    try:
        check_feasible(ctx)
    except InfeasibleEmbeddingError:
        return set()
    graph = expand_intrinsic(i)

    mul_group = next(g for g in graph.groups
                     if graph.node(g[0]).kind is NodeKind.MUL)
    other_groups = [g for g in graph.groups
                    if graph.node(g[0]).kind is not NodeKind.MUL]

    mul_values = list(TupleDomain.from_bounds(ctx.mul_bounds).iter_points())
    space = len(mul_values) ** len(mul_group)
    if space > limit:
        raise OracleGuardError(
            f"{len(mul_values)}^{len(mul_group)} = {space} candidate "
            f"assignments exceed the {limit} guard; shrink the instance"
        )

    # forced values: flow and access images of each mul point
    flow = ctx.relations[FLOW_REL]
    accesses = [
        ctx.relations[access_relation_name(k)]
        for k in range(len(w.statement.operands))
    ]

    def project_flow(p: Point) -> Point:
        env = dict(zip(flow.source.names(), p))
        return tuple(rule.evaluate(env) for rule in flow.rules)

    def project_access(rel, p: Point) -> Optional[Point]:
        env = dict(zip(rel.source.names(), p))
        out = []
        for d, rule in enumerate(rel.rules):
            v = rule.evaluate(env)
            lo, hi = rel.tgt_bounds()[d]
            if not (lo <= v < hi):
                return None
            out.append(v)
        return tuple(out)

    n_nodes = len(graph.nodes)
    solutions: set[tuple[Point, ...]] = set()
    assignment: list[Optional[Point]] = [None] * n_nodes
    iter_names = ctx.mul_dim_names

    strict = mode is Mode.STRICT
    operand_accesses = [op.access for op in w.statement.operands]

    def complete_check() -> bool:
        # per-group rules, by direct definition
        for group in graph.groups:
            pts = [assignment[v] for v in group]
            if len(set(pts)) != len(pts):
                return False
            first = graph.node(group[0])
            if first.kind is NodeKind.MUL:
                continue
            if first.kind is NodeKind.ADD_ACCUM:
                bounds = ctx.add_bounds
                pad_from = ctx.add_pad_from
            else:
                tname = w.statement.operands[first.operand].tensor
                bounds = ctx.tensor_bounds[tname]
                pad_from = ctx.tensor_pad_from[tname]
            origin = tuple(lo for lo, _ in bounds)
            if pts[0] != origin:
                return False
            if len(pts) > 1 and not _rect_traversal_oracle(pts, pad_from):
                return False
            if strict and len(pts) > 1:
                # dense: every used axis is a gap-free coordinate range
                for a in range(len(pts[0])):
                    coords = sorted({p[a] for p in pts})
                    if any(b - x != 1 for x, b in zip(coords, coords[1:])):
                        return False
        if strict:
            mul_pts = [assignment[v] for v in mul_group]
            mapped = set()
            for p in mul_pts[1:]:
                for d, name in enumerate(iter_names):
                    if p[d] != mul_pts[0][d]:
                        mapped.add(name)
            for access in operand_accesses:
                for expr in access:
                    iters = expr.iterators()
                    if len(iters) > 1 and any(n in mapped for n in iters):
                        return False
        # edge semantics, by direct relation check
        for s, t, rel_name in graph.seq_edges:
            if not relation_holds(ctx.relations[rel_name],
                                  assignment[s], assignment[t]):
                return False
        return True

    def dfs(pos: int):
        if pos == len(mul_group):
            if complete_check():
                solutions.add(tuple(assignment))  # type: ignore[arg-type]
            return
        var = mul_group[pos]
        for p in mul_values:
            assignment[var] = p
            # force the dependent nodes; reject on conflicts immediately
            ok = True
            forced: list[tuple[int, Optional[Point]]] = []

            def force(node_id: int, value: Optional[Point]) -> bool:
                if value is None:
                    return False
                old = assignment[node_id]
                if old is not None:
                    return old == value
                forced.append((node_id, old))
                assignment[node_id] = value
                return True

            for s, t, rel_name in graph.seq_edges:
                if s != var:
                    continue
                if rel_name == FLOW_REL:
                    ok = force(t, project_flow(p))
                else:
                    k = int(rel_name.split(":")[1])
                    ok = force(t, project_access(accesses[k], p))
                if not ok:
                    break
            if ok:
                dfs(pos + 1)
            for node_id, old in forced:
                assignment[node_id] = old
            assignment[var] = None

    dfs(0)
    return solutions


def canonical_solution(sol: Sequence[Point]) -> tuple[Point, ...]:
    return tuple(sol)


# ---------------------------------------------------------------------------
# tensor fixtures
# ---------------------------------------------------------------------------

_MAGIC = b"TBINTNS1"


def random_operand(shape: Sequence[int], seed: int,
                   lo: int = -4, hi: int = 4) -> np.ndarray:
    """Range-limited int8 data; narrow enough to keep int32 sums exact."""
    rng = np.random.default_rng(seed)
    return rng.integers(lo, hi + 1, size=tuple(shape), dtype=np.int8)


def write_tensor(path, arr: np.ndarray):
    path = Path(path)
    arr = np.ascontiguousarray(arr)
    code = {np.dtype(np.int8): 1, np.dtype(np.int32): 4}[arr.dtype]
    with open(path, "wb") as f:
        f.write(_MAGIC)
        f.write(np.uint32(arr.ndim).tobytes())
        f.write(np.uint32(code).tobytes())
        f.write(np.asarray(arr.shape, dtype="<i8").tobytes())
        f.write(arr.astype(arr.dtype.newbyteorder("<")).tobytes())
    meta = path.with_suffix(path.suffix + ".meta")
    meta.write_text(
        f"shape: {list(arr.shape)}\ndtype: {arr.dtype.name}\n"
        f"layout: row-major little-endian\n"
    )


def read_tensor(path) -> np.ndarray:
    with open(path, "rb") as f:
        magic = f.read(8)
        if magic != _MAGIC:
            raise ValueError(f"bad magic {magic!r} in {path}")
        ndim = int(np.frombuffer(f.read(4), dtype="<u4")[0])
        code = int(np.frombuffer(f.read(4), dtype="<u4")[0])
        shape = tuple(np.frombuffer(f.read(8 * ndim), dtype="<i8"))
        dtype = {1: np.int8, 4: np.int32}[code]
        data = np.frombuffer(f.read(), dtype=np.dtype(dtype).newbyteorder("<"))
    return data.reshape(shape).astype(dtype)
