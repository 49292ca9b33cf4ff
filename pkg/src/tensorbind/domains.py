"""Integer tuple domains represented as unions of strided boxes.

A *strided box* is an axis-aligned lattice product: per dimension an
(offset, stride, count) arithmetic progression.  Unions of such boxes can
represent the huge-but-structured domains that show up when matching
instruction shapes against loop-nest instance sets, without ever
materialising the points.

All operations keep boxes pairwise disjoint.  If a domain would exceed
``MAX_BOXES`` boxes it is *widened* to its bounding box union; widening only
ever grows the set, so it is sound for pruning (a propagator intersecting
with a widened image removes fewer values, never more).
"""

from __future__ import annotations

import heapq
import itertools
import math
from dataclasses import dataclass
from typing import Iterator, Optional, Sequence

Point = tuple[int, ...]

MAX_BOXES = 4096

_UNKNOWN = object()  # sentinel for the lazily cached assigned value


def _progression_intersect(
    a: int, s: int, n: int, b: int, t: int, m: int
) -> Optional[tuple[int, int, int]]:
    """Intersect the progressions {a + s*i, i<n} and {b + t*j, j<m}.

    Returns (offset, stride, count) of the common progression or None.
    """
    lo = max(a, b)
    hi = min(a + s * (n - 1), b + t * (m - 1))
    if lo > hi:
        return None
    g = math.gcd(s, t)
    if (b - a) % g != 0:
        return None
    lcm = s // g * t
    # solve a + s*k ≡ b (mod t)  =>  k ≡ ((b-a)//g) * inv(s//g) (mod t//g)
    tg = t // g
    if tg == 1:
        k0 = 0
    else:
        k0 = ((b - a) // g % tg) * pow(s // g, -1, tg) % tg
    x0 = a + s * k0
    if x0 < lo:
        x0 += (lo - x0 + lcm - 1) // lcm * lcm
    if x0 > hi:
        return None
    count = (hi - x0) // lcm + 1
    return (x0, lcm, count)


@dataclass(frozen=True)
class Box:
    """A strided axis-aligned box: per-dim (offset, stride, count)."""

    dims: tuple[tuple[int, int, int], ...]

    def __post_init__(self):
        for off, stride, count in self.dims:
            if stride < 1 or count < 1:
                raise ValueError(f"bad box dim (offset={off}, stride={stride}, count={count})")

    @property
    def arity(self) -> int:
        return len(self.dims)

    def size(self) -> int:
        r = 1
        for _, _, count in self.dims:
            r *= count
        return r

    def contains(self, p: Point) -> bool:
        if len(p) != len(self.dims):
            return False
        for v, (off, stride, count) in zip(p, self.dims):
            if v < off or (v - off) % stride != 0 or (v - off) // stride >= count:
                return False
        return True

    def intersect(self, other: "Box") -> Optional["Box"]:
        dims = []
        for (a, s, n), (b, t, m) in zip(self.dims, other.dims):
            hit = _progression_intersect(a, s, n, b, t, m)
            if hit is None:
                return None
            dims.append(hit)
        return Box(tuple(dims))

    def bounds(self) -> tuple[tuple[int, int], ...]:
        """Per-dim inclusive (lo, hi)."""
        return tuple((off, off + stride * (count - 1)) for off, stride, count in self.dims)

    def corner(self) -> Point:
        return tuple(off for off, _, _ in self.dims)

    def split_out_point(self, p: Point) -> list["Box"]:
        """Boxes covering self minus {p}; p must be a member."""
        assert self.contains(p)
        out = []
        # Peel one dimension at a time: dims before d are pinned at p, dim d
        # excludes p's index, dims after d stay full.
        for d, (off, stride, count) in enumerate(self.dims):
            idx = (p[d] - off) // stride
            pre = tuple((p[j], 1, 1) for j in range(d))
            post = self.dims[d + 1:]
            if idx > 0:
                out.append(Box(pre + ((off, stride, idx),) + post))
            if idx < count - 1:
                out.append(Box(pre + ((off + stride * (idx + 1), stride, count - 1 - idx),) + post))
        return out

    def iter_points(self, order: Sequence[int]) -> Iterator[Point]:
        """Lexicographic enumeration, `order` = dims most→least significant."""
        ranges = []
        for d in order:
            off, stride, count = self.dims[d]
            ranges.append(range(off, off + stride * count, stride))
        inv = {d: i for i, d in enumerate(order)}
        for combo in itertools.product(*ranges):
            yield tuple(combo[inv[d]] for d in range(len(self.dims)))


def _bounding_box(boxes: Sequence[Box]) -> Box:
    arity = boxes[0].arity
    dims = []
    for d in range(arity):
        lo = min(b.dims[d][0] for b in boxes)
        hi = max(b.dims[d][0] + b.dims[d][1] * (b.dims[d][2] - 1) for b in boxes)
        dims.append((lo, 1, hi - lo + 1))
    return Box(tuple(dims))


class TupleDomain:
    """A finite set of integer tuples: disjoint strided boxes minus points.

    The subtractive `excluded` set keeps point removal O(1) instead of
    splitting boxes; every excluded point lies inside the box union.
    """

    __slots__ = ("arity", "boxes", "excluded", "_size", "_assigned")

    def __init__(self, arity: int, boxes: Sequence[Box] = (),
                 excluded: frozenset = frozenset()):
        self.arity = arity
        for b in boxes:
            if b.arity != arity:
                raise ValueError("box arity mismatch")
        self.boxes = tuple(boxes)
        self.excluded = excluded
        self._size: Optional[int] = None
        self._assigned: object = _UNKNOWN

    # -- constructors -------------------------------------------------

    @classmethod
    def empty(cls, arity: int) -> "TupleDomain":
        return cls(arity, ())

    @classmethod
    def from_extents(cls, extents: Sequence[int]) -> "TupleDomain":
        return cls(len(extents), (Box(tuple((0, 1, e) for e in extents)),))

    @classmethod
    def from_bounds(cls, bounds: Sequence[tuple[int, int]]) -> "TupleDomain":
        """Dense box from per-dim half-open [lo, hi) bounds."""
        return cls(len(bounds), (Box(tuple((lo, 1, hi - lo) for lo, hi in bounds)),))

    @classmethod
    def singleton(cls, p: Point) -> "TupleDomain":
        return cls(len(p), (Box(tuple((v, 1, 1) for v in p)),))

    @classmethod
    def from_boxes(cls, arity: int, boxes: Sequence[Box]) -> "TupleDomain":
        """Union of possibly-overlapping boxes, made disjoint."""
        dom = cls.empty(arity)
        for b in boxes:
            dom = dom.union_box(b)
        return dom

    # -- queries ------------------------------------------------------

    def size(self) -> int:
        if self._size is None:
            self._size = sum(b.size() for b in self.boxes) - len(self.excluded)
        return self._size

    def is_empty(self) -> bool:
        return self.size() == 0

    def contains(self, p: Point) -> bool:
        if p in self.excluded:
            return False
        return any(b.contains(p) for b in self.boxes)

    def assigned_value(self) -> Optional[Point]:
        """The single member if this domain is a singleton, else None."""
        if self._assigned is _UNKNOWN:
            if not self.excluded and len(self.boxes) == 1 \
                    and self.boxes[0].size() == 1:
                self._assigned = self.boxes[0].corner()
            elif self.size() == 1:
                self._assigned = next(iter(self.iter_points()))
            else:
                self._assigned = None
        return self._assigned

    def bounds(self) -> tuple[tuple[int, int], ...]:
        """Per-dim inclusive (lo, hi) of the bounding box."""
        if not self.boxes:
            raise ValueError("empty domain has no bounds")
        return _bounding_box(self.boxes).bounds()

    # -- set algebra ---------------------------------------------------

    def _carry_excluded(self, boxes: Sequence[Box]) -> frozenset:
        if not self.excluded:
            return self.excluded
        return frozenset(
            p for p in self.excluded if any(b.contains(p) for b in boxes)
        )

    def intersect_box(self, box: Box) -> "TupleDomain":
        out = []
        for b in self.boxes:
            hit = b.intersect(box)
            if hit is not None:
                out.append(hit)
        return TupleDomain(
            self.arity, out, self._carry_excluded(out)
        )._maybe_widen()

    def intersect(self, other: "TupleDomain") -> "TupleDomain":
        out = []
        for b in self.boxes:
            for o in other.boxes:
                hit = b.intersect(o)
                if hit is not None:
                    out.append(hit)
        kept = frozenset(
            p for p in (self.excluded | other.excluded)
            if any(b.contains(p) for b in out)
        ) if (self.excluded or other.excluded) else frozenset()
        return TupleDomain(self.arity, out, kept)._maybe_widen()

    def union_box(self, box: Box) -> "TupleDomain":
        """Add a box, carving it down to the part not already covered."""
        pending = [box]
        for b in self.boxes:
            nxt = []
            for piece in pending:
                hit = piece.intersect(b)
                if hit is None:
                    nxt.append(piece)
                else:
                    nxt.extend(_box_subtract(piece, hit))
            pending = nxt
            if not pending:
                break
        kept = frozenset(p for p in self.excluded if not box.contains(p))
        return TupleDomain(
            self.arity, self.boxes + tuple(pending), kept
        )._maybe_widen()

    def remove_point(self, p: Point) -> "TupleDomain":
        if not self.contains(p):
            return self
        return TupleDomain(self.arity, self.boxes, self.excluded | {p})

    def _maybe_widen(self) -> "TupleDomain":
        if len(self.boxes) <= MAX_BOXES or not self.boxes:
            return self
        # excluded points stay inside the (larger) bounding box
        return TupleDomain(
            self.arity, (_bounding_box(self.boxes),), self.excluded
        )

    # -- enumeration ---------------------------------------------------

    def iter_points(self, order: Optional[Sequence[int]] = None) -> Iterator[Point]:
        """Lazy lexicographic enumeration under a dim significance order.

        `order` lists dimension indices most-significant first; default is
        the natural dimension order.
        """
        if order is None:
            order = range(self.arity)
        order = list(order)
        if len(self.boxes) == 1:
            it = self.boxes[0].iter_points(order)
        else:
            def keyed(box: Box) -> Iterator[tuple[Point, Point]]:
                for p in box.iter_points(order):
                    yield (tuple(p[d] for d in order), p)

            it = (p for _, p in heapq.merge(*(keyed(b) for b in self.boxes)))
        if not self.excluded:
            yield from it
        else:
            for p in it:
                if p not in self.excluded:
                    yield p

    def __eq__(self, other) -> bool:
        if not isinstance(other, TupleDomain):
            return NotImplemented
        if self.arity != other.arity or self.size() != other.size():
            return False
        if self.boxes == other.boxes and self.excluded == other.excluded:
            return True
        return list(self.iter_points()) == list(other.iter_points())

    def __repr__(self) -> str:
        return (f"TupleDomain(arity={self.arity}, boxes={len(self.boxes)}, "
                f"size={self.size()})")


def _box_subtract(box: Box, inner: Box) -> list[Box]:
    """box minus inner, where inner ⊆ box as progressions per dim."""
    out = []
    pin: list[tuple[int, int, int]] = []
    for d in range(box.arity):
        off, stride, count = box.dims[d]
        ioff, istride, icount = inner.dims[d]
        pre = tuple(pin)
        post = box.dims[d + 1:]
        # part of this dim's progression not in inner's progression
        remainder = _progression_subtract(off, stride, count, ioff, istride, icount)
        for seg in remainder:
            out.append(Box(pre + (seg,) + post))
        pin.append((ioff, istride, icount))
    return out


def _progression_subtract(
    a: int, s: int, n: int, b: int, t: int, m: int
) -> list[tuple[int, int, int]]:
    """Progression difference, as a list of progressions.

    The subtrahend is assumed to be a sub-progression of the minuend
    (guaranteed when it came out of an intersection).
    """
    if m == n and a == b and s == t:
        return []
    out = []
    values = set(b + t * j for j in range(m))
    run_start = None
    run_len = 0
    for i in range(n):
        v = a + s * i
        if v in values:
            if run_len:
                out.append((run_start, s, run_len))
                run_len = 0
        else:
            if not run_len:
                run_start = v
            run_len += 1
    if run_len:
        out.append((run_start, s, run_len))
    return out
