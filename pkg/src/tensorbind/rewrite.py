"""Turn an extracted mapping into an executable layout + loop rewrite plan.

Per tensor the plan applies, in a fixed phase order:

1. window materialisation (StencilUnroll for overlapping windows, ImagePack
   for disjoint strided sub-images),
2. zero padding up to the tiled extent,
3. splitting mapped dims into grid x tile,
4. reordering so the tile slots sit innermost (instruction dim order), and
5. fusing multiple tile slots that feed one instruction dimension.

The loop nest iterates the free iterators and the tile grids and performs
one instruction call per iteration; operand slices select one tile per
call.  Outputs are never window-transformed and get an inverse recipe so
results can be unpacked back to the declared layout.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional, Sequence

import numpy as np

from .embedding import DimensionMapping, MapEntry, WindowInfo
from .workload import AffineExpr, IntrinsicSpec, Workload

SCHEMA_VERSION = 1


class PlanUnsupportedError(Exception):
    """The mapping's geometry is outside what plans can express."""


class StepKind(str, Enum):
    STENCIL_UNROLL = "stencil_unroll"
    IMAGE_PACK = "image_pack"
    PAD = "pad"
    SPLIT = "split"
    REORDER = "reorder"
    FUSE = "fuse"
    # inverse-only kinds
    CROP = "crop"
    IMAGE_UNPACK = "image_unpack"


STEP_ORDER = {
    StepKind.STENCIL_UNROLL: 1,
    StepKind.IMAGE_PACK: 1,
    StepKind.PAD: 2,
    StepKind.SPLIT: 3,
    StepKind.REORDER: 4,
    StepKind.FUSE: 5,
}


@dataclass(frozen=True)
class RewriteStep:
    kind: StepKind
    tensor: str
    params: dict

    def to_json(self) -> dict:
        return {"kind": self.kind.value, "tensor": self.tensor, "params": self.params}

    @classmethod
    def from_json(cls, doc: dict) -> "RewriteStep":
        return cls(StepKind(doc["kind"]), doc["tensor"], dict(doc["params"]))


# ---------------------------------------------------------------------------
# step application (numpy, element exact)
# ---------------------------------------------------------------------------


def apply_step(step: RewriteStep, arr: np.ndarray) -> np.ndarray:
    p = step.params
    kind = step.kind
    if kind is StepKind.PAD:
        dim, before, after = p["dim"], p.get("before", 0), p["after"]
        widths = [(0, 0)] * arr.ndim
        widths[dim] = (before, after)
        return np.pad(arr, widths, mode="constant")
    if kind is StepKind.CROP:
        dim, before, after = p["dim"], p.get("before", 0), p["after"]
        idx = [slice(None)] * arr.ndim
        idx[dim] = slice(before, arr.shape[dim] - after)
        return arr[tuple(idx)]
    if kind is StepKind.SPLIT:
        dim, factor = p["dim"], p["factor"]
        if arr.shape[dim] % factor != 0:
            raise PlanUnsupportedError(
                f"split of size {arr.shape[dim]} by {factor} is not exact"
            )
        shape = arr.shape[:dim] + (arr.shape[dim] // factor, factor) + arr.shape[dim + 1:]
        return arr.reshape(shape)
    if kind is StepKind.FUSE:
        dim, count = p["dim"], p["count"]
        merged = 1
        for s in arr.shape[dim:dim + count]:
            merged *= s
        shape = arr.shape[:dim] + (merged,) + arr.shape[dim + count:]
        return arr.reshape(shape)
    if kind is StepKind.REORDER:
        return np.transpose(arr, p["perm"]).copy()
    if kind is StepKind.STENCIL_UNROLL:
        dim = p["dim"]
        positions, taps = p["positions"], p["taps"]
        pos_step, tap_stride, offset = p["step"], p["tap_stride"], p.get("offset", 0)
        src = np.moveaxis(arr, dim, 0)
        out = np.zeros((positions, taps) + src.shape[1:], dtype=arr.dtype)
        size = src.shape[0]
        for pos in range(positions):
            for t in range(taps):
                idx = pos * pos_step + t * tap_stride + offset
                if 0 <= idx < size:
                    out[pos, t] = src[idx]
        out = np.moveaxis(out, (0, 1), (dim, dim + 1))
        return out
    if kind is StepKind.IMAGE_PACK:
        dim, factor, batch_dim = p["dim"], p["factor"], p["batch_dim"]
        if arr.shape[dim] % factor != 0:
            raise PlanUnsupportedError("image pack requires an exact phase split")
        # index i = q*factor + phase; new batch index = b*factor + phase
        split_shape = (
            arr.shape[:dim] + (arr.shape[dim] // factor, factor) + arr.shape[dim + 1:]
        )
        tmp = arr.reshape(split_shape)  # ..., q, phase, ...
        phase_axis = dim + 1
        tmp = np.moveaxis(tmp, phase_axis, batch_dim + 1)  # ..., b, phase, ...
        merged = (
            tmp.shape[:batch_dim]
            + (tmp.shape[batch_dim] * factor,)
            + tmp.shape[batch_dim + 2:]
        )
        return tmp.reshape(merged)
    if kind is StepKind.IMAGE_UNPACK:
        dim, factor, batch_dim = p["dim"], p["factor"], p["batch_dim"]
        split_shape = (
            arr.shape[:batch_dim]
            + (arr.shape[batch_dim] // factor, factor)
            + arr.shape[batch_dim + 1:]
        )
        tmp = arr.reshape(split_shape)  # ..., b, phase, ...
        tmp = np.moveaxis(tmp, batch_dim + 1, dim + 1)  # ..., q, phase, ...
        merged = tmp.shape[:dim] + (tmp.shape[dim] * factor,) + tmp.shape[dim + 2:]
        return tmp.reshape(merged)
    raise ValueError(f"unknown step kind {kind}")


def apply_layout(steps: Sequence[RewriteStep], arr: np.ndarray) -> np.ndarray:
    for step in steps:
        arr = apply_step(step, arr)
    return arr


def invert_step(step: RewriteStep) -> RewriteStep:
    p = step.params
    if step.kind is StepKind.PAD:
        return RewriteStep(StepKind.CROP, step.tensor, dict(p))
    if step.kind is StepKind.CROP:
        return RewriteStep(StepKind.PAD, step.tensor, dict(p))
    if step.kind is StepKind.SPLIT:
        return RewriteStep(StepKind.FUSE, step.tensor,
                           {"dim": p["dim"], "count": 2})
    if step.kind is StepKind.FUSE:
        # fusing k dims inverts to a chain of splits; see invert_layout
        raise PlanUnsupportedError("fuse inverts to a split chain; use invert_layout")
    if step.kind is StepKind.REORDER:
        perm = p["perm"]
        inv = [0] * len(perm)
        for i, x in enumerate(perm):
            inv[x] = i
        return RewriteStep(StepKind.REORDER, step.tensor, {"perm": inv})
    if step.kind is StepKind.IMAGE_PACK:
        return RewriteStep(StepKind.IMAGE_UNPACK, step.tensor, dict(p))
    if step.kind is StepKind.IMAGE_UNPACK:
        return RewriteStep(StepKind.IMAGE_PACK, step.tensor, dict(p))
    raise PlanUnsupportedError(f"{step.kind.value} has no inverse")


def invert_layout(steps: Sequence[RewriteStep]) -> list[RewriteStep]:
    """Inverse recipe: apply(inverse, apply(steps, x)) == x."""
    out: list[RewriteStep] = []
    for step in reversed(steps):
        if step.kind is StepKind.FUSE:
            sizes = step.params.get("sizes")
            if sizes is None:
                raise PlanUnsupportedError("fuse without recorded sizes")
            # split the fused dim back, inner sizes first
            dim = step.params["dim"]
            for inner in reversed(sizes[1:]):
                out.append(RewriteStep(StepKind.SPLIT, step.tensor,
                                       {"dim": dim, "factor": inner}))
        elif step.kind in (StepKind.STENCIL_UNROLL,):
            raise PlanUnsupportedError("window transforms are not invertible")
        else:
            out.append(invert_step(step))
    return out


# ---------------------------------------------------------------------------
# plan derivation
# ---------------------------------------------------------------------------


@dataclass
class _DimState:
    size: int
    expr: Optional[AffineExpr]  # index expression over loop variables
    tile_of: Optional[tuple[int, int]] = None  # (intrinsic dim idx, entry idx)


@dataclass(frozen=True)
class LoopNest:
    loops: tuple[tuple[str, int], ...]
    # selectors per tensor, outermost dim first; each selector is either
    # {"kind": "tile"} or {"kind": "affine", "terms": [[name, coeff]...],
    #  "constant": c}
    operand_selectors: tuple[tuple[dict, ...], ...]
    output_selectors: tuple[dict, ...]
    tile_elements: tuple[int, ...]  # per operand + output, elements moved per call

    def to_json(self) -> dict:
        return {
            "loops": [[n, e] for n, e in self.loops],
            "operand_selectors": [list(s) for s in self.operand_selectors],
            "output_selectors": list(self.output_selectors),
            "tile_elements": list(self.tile_elements),
        }

    @classmethod
    def from_json(cls, doc: dict) -> "LoopNest":
        return cls(
            loops=tuple((n, e) for n, e in doc["loops"]),
            operand_selectors=tuple(
                tuple(dict(s) for s in sel) for sel in doc["operand_selectors"]
            ),
            output_selectors=tuple(dict(s) for s in doc["output_selectors"]),
            tile_elements=tuple(doc["tile_elements"]),
        )


@dataclass
class RewritePlan:
    workload_name: str
    intrinsic_name: str
    tensor_steps: dict  # tensor name -> list[RewriteStep]
    output_inverse: list
    loop_nest: LoopNest
    transformed_shapes: dict  # tensor name -> tuple
    schema_version: int = SCHEMA_VERSION

    def to_json(self) -> dict:
        return {
            "schema_version": self.schema_version,
            "workload": self.workload_name,
            "intrinsic": self.intrinsic_name,
            "steps": {
                t: [s.to_json() for s in steps]
                for t, steps in self.tensor_steps.items()
            },
            "output_inverse": [s.to_json() for s in self.output_inverse],
            "loop_nest": self.loop_nest.to_json(),
            "intrinsic_call": {
                "operand_slices": [list(s) for s in self.loop_nest.operand_selectors],
                "output_slices": list(self.loop_nest.output_selectors),
            },
            "transformed_shapes": {t: list(s) for t, s in self.transformed_shapes.items()},
        }

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, doc: dict) -> "RewritePlan":
        return cls(
            workload_name=doc["workload"],
            intrinsic_name=doc["intrinsic"],
            tensor_steps={
                t: [RewriteStep.from_json(s) for s in steps]
                for t, steps in doc["steps"].items()
            },
            output_inverse=[RewriteStep.from_json(s) for s in doc["output_inverse"]],
            loop_nest=LoopNest.from_json(doc["loop_nest"]),
            transformed_shapes={
                t: tuple(s) for t, s in doc["transformed_shapes"].items()
            },
            schema_version=doc.get("schema_version", SCHEMA_VERSION),
        )


def _loop_name(iterator: str) -> str:
    return f"{iterator}_out"


def _plan_tensor(
    tensor_name: str,
    shape: tuple[int, ...],
    access: tuple[AffineExpr, ...],
    entry_by_iter: dict[str, MapEntry],
    windows: dict[tuple[str, int], WindowInfo],
    intrinsic_dim_of: dict[str, tuple[int, int]],
    extents: dict[str, int],
    target_layout: Optional[Sequence[str]],
    mapped_grid_iters: set[str],
) -> tuple[list[RewriteStep], list[_DimState], tuple[int, ...]]:
    """Steps + symbolic final dims for one tensor."""
    steps: list[RewriteStep] = []
    dims: list[_DimState] = []
    for d, size in enumerate(shape):
        dims.append(_DimState(size=size, expr=access[d]))

    # phase 1: window materialisation
    for d in range(len(dims) - 1, -1, -1):
        win = windows.get((tensor_name, d))
        if win is None:
            continue
        expr = dims[d].expr
        if len(expr.terms) != 2:
            raise PlanUnsupportedError(
                f"{tensor_name} dim {d}: window with more than two iterators"
            )
        if win.step >= win.span and win.step > 1:
            raise PlanUnsupportedError(
                "disjoint strided windows (image pack) are not wired into plans"
            )
        k, o = win.window_iterator, win.outer_iterator
        positions, taps = extents[o], extents[k]
        steps.append(RewriteStep(StepKind.STENCIL_UNROLL, tensor_name, {
            "dim": d,
            "positions": positions,
            "taps": taps,
            "step": win.step,
            "tap_stride": win.window_coeff,
            "offset": win.offset,
        }))
        dims[d:d + 1] = [
            _DimState(size=positions, expr=AffineExpr(((o, 1),))),
            _DimState(size=taps, expr=AffineExpr(((k, 1),))),
        ]

    # phase 2: zero padding up to the tiled extent
    for d in range(len(dims)):
        st = dims[d]
        expr = st.expr
        before = after = 0
        if expr is not None and len(expr.terms) == 1:
            name, coeff = expr.terms[0]
            e = entry_by_iter.get(name)
            if e is not None and e.tile > 1:
                if abs(coeff) != 1:
                    raise PlanUnsupportedError(
                        f"{tensor_name} dim {d}: mapped iterator with stride "
                        f"coefficient {coeff}"
                    )
                if e.stride != 1:
                    raise PlanUnsupportedError(
                        f"{tensor_name} dim {d}: strided tile rectangles are "
                        "not expressible as plans"
                    )
                target = e.grid * e.tile
                if st.size < target:
                    after = target - st.size
        if before or after:
            steps.append(RewriteStep(StepKind.PAD, tensor_name, {
                "dim": d, "before": before, "after": after,
            }))
            st.size += before + after

    # phase 3: split mapped dims into grid x tile
    out_dims: list[_DimState] = []
    for d, st in enumerate(dims):
        expr = st.expr
        e = None
        if expr is not None and len(expr.terms) == 1:
            e = entry_by_iter.get(expr.terms[0][0])
        if e is not None and e.tile > 1:
            name = expr.terms[0][0]
            slot = intrinsic_dim_of[name]
            if e.grid > 1:
                steps.append(RewriteStep(StepKind.SPLIT, tensor_name, {
                    "dim": len(out_dims), "factor": e.tile,
                }))
                out_dims.append(_DimState(
                    size=e.grid, expr=AffineExpr(((_loop_name(name), 1),)),
                ))
                mapped_grid_iters.add(name)
                out_dims.append(_DimState(size=e.tile, expr=None, tile_of=slot))
            else:
                out_dims.append(_DimState(size=e.tile, expr=None, tile_of=slot))
        elif e is not None and e.tile == 1:
            # tile-1 mapping: the iterator stays an ordinary loop, but the
            # instruction still expects a unit-sized tile axis for its dim
            slot = intrinsic_dim_of[expr.terms[0][0]]
            steps.append(RewriteStep(StepKind.SPLIT, tensor_name, {
                "dim": len(out_dims), "factor": 1,
            }))
            out_dims.append(st)
            out_dims.append(_DimState(size=1, expr=None, tile_of=slot))
        else:
            out_dims.append(st)
    dims = out_dims

    # a mapped iterator can hide inside a multi-term access (e.g. a window
    # dim traversed at tile 1); its instruction dim still needs a unit tile
    # axis so every packed tensor carries one axis per instruction dim
    required = set()
    for expr in access:
        for name, _ in expr.terms:
            slot = intrinsic_dim_of.get(name)
            if slot is not None:
                required.add(slot[0])
    present = {st.tile_of[0] for st in dims if st.tile_of is not None}
    for dim_idx in sorted(required - present):
        steps.append(RewriteStep(StepKind.SPLIT, tensor_name, {
            "dim": len(dims) - 1, "factor": 1,
        }))
        dims.append(_DimState(size=1, expr=None, tile_of=(dim_idx, 0)))

    # phase 4: reorder - free/grid dims first (target layout order), tile
    # slots innermost sorted by instruction dimension
    def sort_key(pos):
        st = dims[pos]
        if st.tile_of is not None:
            return (2, st.tile_of[0], st.tile_of[1], pos)
        if target_layout and st.expr is not None and len(st.expr.terms) == 1:
            name = st.expr.terms[0][0]
            base = name[:-4] if name.endswith("_out") else name
            if base in target_layout:
                return (1, target_layout.index(base), 0, pos)
        return (0, 0, 0, pos)

    order = sorted(range(len(dims)), key=sort_key)
    if order != list(range(len(dims))):
        steps.append(RewriteStep(StepKind.REORDER, tensor_name, {"perm": order}))
        dims = [dims[p] for p in order]

    # phase 5: fuse multiple tile slots of one instruction dim
    d = 0
    while d < len(dims):
        st = dims[d]
        if st.tile_of is None:
            d += 1
            continue
        run = d + 1
        while run < len(dims) and dims[run].tile_of is not None \
                and dims[run].tile_of[0] == st.tile_of[0]:
            run += 1
        if run - d > 1:
            sizes = [dims[j].size for j in range(d, run)]
            steps.append(RewriteStep(StepKind.FUSE, tensor_name, {
                "dim": d, "count": run - d, "sizes": sizes,
            }))
            merged = 1
            for s in sizes:
                merged *= s
            dims[d:run] = [_DimState(size=merged, expr=None,
                                     tile_of=(st.tile_of[0], 0))]
        d += 1

    final_shape = tuple(st.size for st in dims)
    return steps, dims, final_shape


def _selector(st: _DimState) -> dict:
    if st.tile_of is not None:
        return {"kind": "tile"}
    expr = st.expr
    return {
        "kind": "affine",
        "terms": [[n, c] for n, c in expr.terms],
        "constant": expr.constant,
    }


def derive_plan(
    m: DimensionMapping,
    w: Workload,
    i: IntrinsicSpec,
    target_layout: Optional[Sequence[str]] = None,
) -> RewritePlan:
    entry_by_iter = m.mapped_iterators()
    extents = w.extents()
    windows = {(win.tensor, win.dim): win for win in m.windows}

    # instruction dim index + entry position per workload iterator
    intrinsic_order = [it.name for it in i.workload.iterators]
    intrinsic_dim_of: dict[str, tuple[int, int]] = {}
    for iname, ents in m.entries:
        for pos, e in enumerate(ents):
            intrinsic_dim_of[e.iterator] = (intrinsic_order.index(iname), pos)

    out_access = w.statement.output
    for d, expr in enumerate(out_access.access):
        if (out_access.tensor, d) in windows:
            raise PlanUnsupportedError("output tensors are never window-transformed")

    mapped_grid_iters: set[str] = set()
    tensor_steps: dict[str, list[RewriteStep]] = {}
    final_dims: dict[str, list[_DimState]] = {}
    transformed_shapes: dict[str, tuple[int, ...]] = {}

    plan_targets = [(op.tensor, op.access) for op in w.statement.operands]
    plan_targets.append((out_access.tensor, out_access.access))
    for tensor_name, access in plan_targets:
        shape = w.tensor(tensor_name).shape
        steps, dims, final_shape = _plan_tensor(
            tensor_name, shape, access, entry_by_iter, windows,
            intrinsic_dim_of, extents, target_layout, mapped_grid_iters,
        )
        for st in dims:
            if st.expr is None:
                continue
            for name, _ in st.expr.terms:
                e = entry_by_iter.get(name)
                if e is not None and e.tile > 1:
                    raise PlanUnsupportedError(
                        f"{tensor_name}: residual access through tiled "
                        f"iterator {name} cannot be expressed as a plan"
                    )
        tensor_steps[tensor_name] = steps
        final_dims[tensor_name] = dims
        transformed_shapes[tensor_name] = final_shape

    # loop nest: declared iterator order; mapped iterators iterate their
    # grid (if >1), free iterators their extent, singleton loops omitted
    loops: list[tuple[str, int]] = []
    for it in w.iterators:
        e = entry_by_iter.get(it.name)
        if e is not None and e.tile > 1:
            if e.grid > 1:
                loops.append((_loop_name(it.name), e.grid))
        else:
            if it.extent > 1:
                loops.append((it.name, it.extent))

    operand_selectors = tuple(
        tuple(_selector(st) for st in final_dims[op.tensor])
        for op in w.statement.operands
    )
    output_selectors = tuple(_selector(st) for st in final_dims[out_access.tensor])

    def tile_elems(dims: list[_DimState]) -> int:
        r = 1
        for st in dims:
            if st.tile_of is not None:
                r *= st.size
        return r

    tile_elements = tuple(
        [tile_elems(final_dims[op.tensor]) for op in w.statement.operands]
        + [tile_elems(final_dims[out_access.tensor])]
    )

    loop_nest = LoopNest(
        loops=tuple(loops),
        operand_selectors=operand_selectors,
        output_selectors=output_selectors,
        tile_elements=tile_elements,
    )

    output_inverse = invert_layout(tensor_steps[out_access.tensor])

    return RewritePlan(
        workload_name=w.name,
        intrinsic_name=i.workload.name,
        tensor_steps=tensor_steps,
        output_inverse=output_inverse,
        loop_nest=loop_nest,
        transformed_shapes=transformed_shapes,
    )


def emit_loop_nest(plan: RewritePlan) -> LoopNest:
    return plan.loop_nest
