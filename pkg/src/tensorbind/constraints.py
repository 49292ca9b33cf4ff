"""Propagators that define the embedding solution space.

* edge: a binary relation between two variables' values, propagated in both
  directions through precomputed inverses.
* alldiff: injectivity within a node group.
* hyper_rectangle: the group must traverse an axis-aligned (possibly
  strided) rectangle in lexicographic order; propagates bounding boxes
  incrementally as the assigned prefix grows.
* fixed_origin: pins a group's first variable to the domain corner.
* dense / linear_access: full-assignment checkers used in strict mode.
* padding: not a propagator but the domain-extension arithmetic used when
  an extent is too small for the instruction shape.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

from .csp import Constraint, SearchState, Status
from .domains import Box, Point, TupleDomain
from .workload import AffineExpr, Relation, eval_relation, relation_holds


# ---------------------------------------------------------------------------
# rectangle inference
# ---------------------------------------------------------------------------


class RectFail(Exception):
    """The assigned prefix cannot be a lexicographic rectangle traversal."""


@dataclass
class RectDim:
    axis: int
    stride: int
    size: Optional[int]  # None while the dimension is still open


@dataclass
class RectInfo:
    origin: Point
    dims: list[RectDim]  # innermost first
    counters: list[int]


def infer_rectangle(
    points: Sequence[Point],
    total: int,
    max_stride: Optional[int] = None,
    complete: bool = False,
    pad_from: Optional[Sequence[int]] = None,
) -> RectInfo:
    """Interpret `points` as the start of a lex rectangle traversal.

    The traversal visits `total` points overall.  Dimensions are discovered
    innermost first; a dimension closes (its size becomes known) the first
    time an outer dimension steps.  Raises RectFail when no axis-aligned
    strided rectangle is consistent with the prefix.

    `pad_from[a]` marks where axis `a` leaves real data and enters appended
    zero padding.  Padding is contiguous filler, so a dimension may only
    reach coordinates >= pad_from[a] with stride 1; strided dimensions must
    stay inside the real region.
    """
    if not points:
        raise RectFail("no points")
    v0 = points[0]
    arity = len(v0)
    dims: list[RectDim] = []
    counters: list[int] = []

    def closed_product() -> int:
        r = 1
        for d in dims:
            if d.size is not None:
                r *= d.size
        return r

    for n in range(1, len(points)):
        prev, cur = points[n - 1], points[n]
        delta = tuple(c - p for c, p in zip(cur, prev))
        if all(d == 0 for d in delta):
            raise RectFail("repeated point")

        moved = False
        blocked = False  # an inner dim below the candidate is mid-run
        for i in range(len(dims)):
            if any(counters[j] != dims[j].size - 1 for j in range(i)):
                blocked = True
                break
            expected = [0] * arity
            expected[dims[i].axis] += dims[i].stride
            for j in range(i):
                expected[dims[j].axis] -= dims[j].stride * (dims[j].size - 1)
            if tuple(expected) == delta:
                if dims[i].size is not None and counters[i] + 1 >= dims[i].size:
                    raise RectFail(f"dimension {i} overflows its size")
                if (pad_from is not None and dims[i].stride > 1
                        and v0[dims[i].axis] + dims[i].stride * (counters[i] + 1)
                        >= pad_from[dims[i].axis]):
                    raise RectFail("strided dimension runs into padding")
                for j in range(i):
                    counters[j] = 0
                counters[i] += 1
                moved = True
                break
        if moved:
            if dims and dims[-1].size is None:
                if closed_product() * (counters[-1] + 1) > total:
                    raise RectFail("open dimension exceeds remaining point count")
            continue

        # Not a step in any known dimension: must open a new one.  Legal
        # only from the running far corner (all counters at their max).
        if blocked or any(
            d.size is not None and c != d.size - 1 for d, c in zip(dims, counters)
        ):
            raise RectFail("jump with nonzero inner counter")
        if dims:
            open_dim = dims[-1]
            assert open_dim.size is None
            open_dim.size = counters[-1] + 1
            if total % closed_product() != 0:
                raise RectFail(
                    f"closing size {open_dim.size} does not divide remaining count"
                )
        u = tuple(c - o for c, o in zip(cur, v0))
        hot = [a for a, x in enumerate(u) if x != 0]
        if len(hot) != 1 or u[hot[0]] < 0:
            raise RectFail("step is not a positive move along a single new axis")
        axis = hot[0]
        if any(d.axis == axis for d in dims):
            raise RectFail("axis reused by a second dimension")
        stride = u[axis]
        if max_stride is not None and stride > max_stride:
            raise RectFail(f"stride {stride} exceeds cap {max_stride}")
        if (pad_from is not None and stride > 1
                and cur[axis] >= pad_from[axis]):
            raise RectFail("strided dimension runs into padding")
        if closed_product() * 2 > total:
            raise RectFail("no room for a new dimension")
        dims.append(RectDim(axis, stride, None))
        counters = [0] * (len(dims) - 1) + [1]

    if max_stride is not None:
        for d in dims:
            if d.stride > max_stride:
                raise RectFail(f"stride {d.stride} exceeds cap {max_stride}")

    if complete:
        if len(points) != total:
            raise RectFail("complete check requires all points")
        if dims and dims[-1].size is None:
            dims[-1].size = counters[-1] + 1
        product = 1
        for d in dims:
            product *= d.size or 1
        if product != total:
            raise RectFail(f"rectangle holds {product} points, expected {total}")

    return RectInfo(origin=v0, dims=dims, counters=counters)


def rect_next_boxes(
    info: RectInfo,
    total: int,
    axis_bounds: Sequence[tuple[int, int]],
    max_stride: Optional[int],
    pad_from: Optional[Sequence[int]] = None,
) -> list[Box]:
    """All points the traversal may visit next, as single-point/line boxes.

    Either a step in a known dimension (inner counters permitting) or, from
    the running far corner, a positive jump along an unused axis (which
    opens a new dimension).
    """
    arity = len(axis_bounds)
    dims, counters = info.dims, info.counters
    closed = 1
    for d in dims:
        if d.size is not None:
            closed *= d.size
    last = list(info.origin)
    for d, c in zip(dims, counters):
        last[d.axis] += d.stride * c

    boxes: list[Box] = []
    for i, d in enumerate(dims):
        if any(counters[j] != dims[j].size - 1 for j in range(i)):
            continue  # an inner dimension is mid-run
        if d.size is not None:
            if counters[i] + 1 >= d.size:
                continue
        elif closed * (counters[i] + 2) > total:
            continue
        p = list(last)
        p[d.axis] += d.stride
        for j in range(i):
            p[dims[j].axis] -= dims[j].stride * (dims[j].size - 1)
        if (pad_from is not None and d.stride > 1
                and p[d.axis] >= pad_from[d.axis]):
            continue
        if all(lo <= v < hi for v, (lo, hi) in zip(p, axis_bounds)):
            boxes.append(Box(tuple((v, 1, 1) for v in p)))

    # opening a new axis: only from the far corner, only if the (possibly
    # open) outermost dimension can close into a divisor of the total
    open_ok = True
    if dims:
        if any(d.size is not None and c != d.size - 1
               for d, c in zip(dims, counters)):
            open_ok = False
        else:
            cp = closed
            if dims[-1].size is None:
                cp = closed * (counters[-1] + 1)
            if total % cp != 0 or cp * 2 > total:
                open_ok = False
    elif total < 2:
        open_ok = False
    if open_ok:
        used = {d.axis for d in dims}
        for a in range(arity):
            if a in used:
                continue
            lo, hi = axis_bounds[a]
            start = info.origin[a] + 1
            stop = hi
            if max_stride is not None:
                stop = min(stop, info.origin[a] + max_stride + 1)
            if pad_from is not None:
                # strides > 1 may not land in padding; the stride-1
                # candidate (origin + 1) is always kept
                stop = min(stop, max(pad_from[a], start + 1))
            if start >= stop:
                continue
            dim_spec = tuple(
                (start, 1, stop - start) if ax == a else (info.origin[ax], 1, 1)
                for ax in range(arity)
            )
            boxes.append(Box(dim_spec))
    return boxes


def rect_bounding_box(
    info: RectInfo,
    total: int,
    axis_bounds: Sequence[tuple[int, int]],
) -> Box:
    """Smallest box guaranteed to contain every point of any completion.

    Closed dims are exact; the open dim is capped by the remaining point
    count; axes not (yet) used stay at their full bounds.
    """
    arity = len(axis_bounds)
    out: list[Optional[tuple[int, int, int]]] = [None] * arity
    prod_closed = 1
    for d in info.dims:
        if d.size is not None:
            prod_closed *= d.size
    for d in info.dims:
        if d.size is not None:
            out[d.axis] = (info.origin[d.axis], d.stride, d.size)
        else:
            cap = max(1, total // prod_closed)
            lo, hi = axis_bounds[d.axis]
            span_cap = (hi - 1 - info.origin[d.axis]) // d.stride + 1
            out[d.axis] = (info.origin[d.axis], d.stride, min(cap, span_cap))
    for a in range(arity):
        if out[a] is None:
            lo, hi = axis_bounds[a]
            out[a] = (lo, 1, hi - lo)
    return Box(tuple(out))


# ---------------------------------------------------------------------------
# propagators
# ---------------------------------------------------------------------------


class EdgeConstraint(Constraint):
    """t ∈ relation(s); propagates images and preimages on assignment."""

    def __init__(self, s: int, t: int, relation: Relation, inverse: Relation):
        self.s = s
        self.t = t
        self.relation = relation
        self.inverse = inverse
        # eval_relation is pure, and the same assigned point is re-imaged at
        # every node of the subtree below its assignment; memoise per edge
        self._image_cache: dict = {}
        self._preimage_cache: dict = {}

    @property
    def family(self) -> str:
        return f"edge:{self.relation.name}"

    def variables(self):
        return (self.s, self.t)

    def propagate(self, state: SearchState, triggers=None) -> Status:
        s_val = state.value(self.s)
        t_val = state.value(self.t)
        if s_val is not None and t_val is not None:
            return Status.OK if relation_holds(self.relation, s_val, t_val) \
                else Status.FAILED
        if s_val is not None:
            image = self._image_cache.get(s_val)
            if image is None:
                image = eval_relation(self.relation, s_val)
                self._image_cache[s_val] = image
            narrowed = state.domain(self.t).intersect(image)
            return state.set_domain(self.t, narrowed)
        if t_val is not None:
            image = self._preimage_cache.get(t_val)
            if image is None:
                image = eval_relation(self.inverse, t_val)
                self._preimage_cache[t_val] = image
            narrowed = state.domain(self.s).intersect(image)
            return state.set_domain(self.s, narrowed)
        return Status.OK


class AllDiffConstraint(Constraint):
    def __init__(self, var_ids: Sequence[int]):
        self.var_ids = tuple(var_ids)

    @property
    def family(self) -> str:
        return "alldiff"

    def variables(self):
        return self.var_ids

    # Removing one point from a domain this large prunes nothing; duplicate
    # assignments are still rejected by the pairwise check below, because a
    # domain must pass through assignment before it can violate injectivity.
    REMOVE_SIZE_CAP = 100_000

    def propagate(self, state: SearchState, triggers=None) -> Status:
        if triggers is not None:
            # incremental: only the newly assigned values need removing
            domains = state.domains
            for t in triggers:
                val = domains[t].assigned_value()
                if val is None:
                    continue
                for v in self.var_ids:
                    if v == t:
                        continue
                    dom = domains[v]
                    other = dom.assigned_value()
                    if other is not None:
                        if other == val:
                            return Status.FAILED
                        continue
                    if dom.size() > self.REMOVE_SIZE_CAP:
                        continue
                    if dom.contains(val):
                        if state.set_domain(v, dom.remove_point(val)) \
                                is Status.FAILED:
                            return Status.FAILED
            return Status.OK
        assigned: dict[Point, int] = {}
        for v in self.var_ids:
            val = state.value(v)
            if val is None:
                continue
            if val in assigned:
                return Status.FAILED
            assigned[val] = v
        if not assigned:
            return Status.OK
        for v in self.var_ids:
            if state.value(v) is not None:
                continue
            dom = state.domain(v)
            if dom.size() > self.REMOVE_SIZE_CAP:
                continue
            for val in assigned:
                if dom.contains(val):
                    dom = dom.remove_point(val)
            if state.set_domain(v, dom) is Status.FAILED:
                return Status.FAILED
        return Status.OK


class HyperRectangleConstraint(Constraint):
    """The group, in variable order, traverses a strided rectangle."""

    def __init__(
        self,
        var_ids: Sequence[int],
        axis_bounds: Sequence[tuple[int, int]],
        max_stride: Optional[int] = None,
        pad_from: Optional[Sequence[int]] = None,
    ):
        if len(var_ids) < 2:
            raise ValueError("hyper rectangle needs at least two variables")
        self.var_ids = tuple(var_ids)
        self.axis_bounds = tuple(axis_bounds)
        self.max_stride = max_stride
        self.pad_from = tuple(pad_from) if pad_from is not None else None

    @property
    def family(self) -> str:
        return "hyper_rectangle"

    def variables(self):
        return self.var_ids

    def propagate(self, state: SearchState, triggers=None) -> Status:
        prefix: list[Point] = []
        for v in self.var_ids:
            val = state.value(v)
            if val is None:
                break
            prefix.append(val)
        if not prefix:
            return Status.OK
        total = len(self.var_ids)
        try:
            info = infer_rectangle(
                prefix, total,
                max_stride=self.max_stride,
                complete=(len(prefix) == total),
                pad_from=self.pad_from,
            )
        except RectFail:
            return Status.FAILED
        if len(prefix) == total:
            return Status.OK
        # the immediately following variable has few legal continuations
        nxt = self.var_ids[len(prefix)]
        candidates = TupleDomain.from_boxes(
            len(self.axis_bounds),
            rect_next_boxes(info, total, self.axis_bounds, self.max_stride,
                            pad_from=self.pad_from),
        )
        if state.set_domain(nxt, state.domain(nxt).intersect(candidates)) \
                is Status.FAILED:
            return Status.FAILED
        if len(prefix) < 2:
            return Status.OK
        box = rect_bounding_box(info, total, self.axis_bounds)
        if len(prefix) > 2:
            # the box only tightens when a dimension opens or closes;
            # skip the mass intersection when this step changed nothing
            prev = infer_rectangle(prefix[:-1], total,
                                   max_stride=self.max_stride,
                                   pad_from=self.pad_from)
            if rect_bounding_box(prev, total, self.axis_bounds) == box:
                return Status.OK
        for v in self.var_ids[len(prefix) + 1:]:
            narrowed = state.domain(v).intersect_box(box)
            if state.set_domain(v, narrowed) is Status.FAILED:
                return Status.FAILED
        return Status.OK


class FixedOriginConstraint(Constraint):
    def __init__(self, var_id: int, origin: Point):
        self.var_id = var_id
        self.origin = origin

    @property
    def family(self) -> str:
        return "fixed_origin"

    def variables(self):
        return (self.var_id,)

    def propagate(self, state: SearchState, triggers=None) -> Status:
        if not state.domain(self.var_id).contains(self.origin):
            return Status.FAILED
        return state.set_domain(self.var_id, TupleDomain.singleton(self.origin))


class DenseConstraint(Constraint):
    """Checker: the completed group rectangle must be stride-free."""

    def __init__(self, var_ids: Sequence[int]):
        self.var_ids = tuple(var_ids)

    @property
    def family(self) -> str:
        return "dense"

    def variables(self):
        return self.var_ids

    def propagate(self, state: SearchState, triggers=None) -> Status:
        points = []
        for v in self.var_ids:
            val = state.value(v)
            if val is None:
                return Status.OK
            points.append(val)
        if len(points) == 1:
            return Status.OK
        try:
            info = infer_rectangle(points, len(points), complete=True)
        except RectFail:
            return Status.FAILED
        if any(d.stride > 1 for d in info.dims):
            return Status.FAILED
        return Status.OK


class LinearAccessConstraint(Constraint):
    """Checker: mapped iterators read memory through single-iterator dims.

    An access dimension containing an iterator that varies across the
    completed multiply tile must reference exactly one iterator; this is
    what rules out stencil windows (e.g. oh*s + kh) in strict mode.
    """

    def __init__(
        self,
        mul_var_ids: Sequence[int],
        iterator_names: Sequence[str],
        operand_accesses: Sequence[tuple[AffineExpr, ...]],
    ):
        self.mul_var_ids = tuple(mul_var_ids)
        self.iterator_names = tuple(iterator_names)
        self.operand_accesses = tuple(operand_accesses)

    @property
    def family(self) -> str:
        return "linear_access"

    def variables(self):
        return self.mul_var_ids

    def propagate(self, state: SearchState, triggers=None) -> Status:
        points = []
        for v in self.mul_var_ids:
            val = state.value(v)
            if val is None:
                return Status.OK
            points.append(val)
        mapped = set()
        base = points[0]
        for p in points[1:]:
            for d, name in enumerate(self.iterator_names):
                if p[d] != base[d]:
                    mapped.add(name)
        for access in self.operand_accesses:
            for expr in access:
                iters = expr.iterators()
                if len(iters) > 1 and any(n in mapped for n in iters):
                    return Status.FAILED
        return Status.OK


# ---------------------------------------------------------------------------
# padding arithmetic (domain extension, applied at assembly time)
# ---------------------------------------------------------------------------


def padded_extent(extent: int, threshold: int, divisor: int) -> tuple[int, int]:
    """(virtual extent, pad amount) after the padding rule.

    Activates when the extent is below `threshold` or not a multiple of
    `divisor`; extends to the next multiple of divisor that is >= threshold.
    """
    if extent >= threshold and extent % divisor == 0:
        return extent, 0
    virtual = -(-extent // divisor) * divisor
    if virtual < threshold:
        virtual = -(-threshold // divisor) * divisor
    return virtual, virtual - extent
