"""Loop-nest workload model and its compressed set/relation form.

A workload is a single perfectly-nested tensor statement (multiply +
commutative accumulate).  It compiles into:

* one instance set per operation (the multiply gets the full iteration
  domain, the accumulate only the spatial part), and one per tensor;
* binary relations between those sets: dataflow (mul -> add), one access
  relation per operand, the output access, and a spatial-parallelism
  relation among outputs.

Relations map a source point to a set of target points: each target
dimension is either an affine function of the source point or free within
the target bounds; extra equality guards express non-invertible couplings
(e.g. the preimage of h = oh*stride + kh).
"""

from __future__ import annotations

import itertools
import json
import re
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional, Sequence

from .domains import Box, Point, TupleDomain


class SpecError(ValueError):
    """Malformed workload/intrinsic document; carries a field path."""

    def __init__(self, message: str, where: str = ""):
        self.where = where
        super().__init__(f"{where}: {message}" if where else message)


class IteratorKind(str, Enum):
    SPATIAL = "spatial"
    REDUCTION = "reduction"


@dataclass(frozen=True)
class IteratorDef:
    name: str
    extent: int
    kind: IteratorKind


_IDENT_RE = re.compile(r"[A-Za-z_][A-Za-z_0-9]*$")


@dataclass(frozen=True)
class AffineExpr:
    """Sum of integer-coefficient iterator terms plus a constant."""

    terms: tuple[tuple[str, int], ...]
    constant: int = 0

    def __post_init__(self):
        seen = set()
        for name, _ in self.terms:
            if name in seen:
                raise SpecError(f"iterator {name!r} repeated in affine expression")
            seen.add(name)

    def evaluate(self, env: dict[str, int]) -> int:
        return self.constant + sum(c * env[n] for n, c in self.terms)

    def iterators(self) -> tuple[str, ...]:
        return tuple(n for n, _ in self.terms)

    def coefficient(self, name: str) -> int:
        for n, c in self.terms:
            if n == name:
                return c
        return 0

    @classmethod
    def parse(cls, text: str, where: str = "") -> "AffineExpr":
        """Parse `term (("+"|"-") term)*`, term = int"*"ident | ident | int."""
        src = text.replace(" ", "")
        if not src:
            raise SpecError("empty access expression", where)
        # split into signed terms
        pieces = re.findall(r"[+-]?[^+-]+", src)
        if "".join(pieces) != src:
            raise SpecError(f"cannot tokenize access expression {text!r}", where)
        terms: list[tuple[str, int]] = []
        constant = 0
        for piece in pieces:
            sign = 1
            body = piece
            if body[0] in "+-":
                sign = -1 if body[0] == "-" else 1
                body = body[1:]
            if "*" in body:
                lhs, _, rhs = body.partition("*")
                if not lhs.lstrip("-").isdigit() or not _IDENT_RE.match(rhs):
                    raise SpecError(f"term {piece!r} is not int*ident", where)
                terms.append((rhs, sign * int(lhs)))
            elif body.isdigit():
                constant += sign * int(body)
            elif _IDENT_RE.match(body):
                terms.append((body, sign))
            else:
                raise SpecError(f"term {piece!r} is not affine", where)
        merged: dict[str, int] = {}
        for n, c in terms:
            if n in merged:
                raise SpecError(f"iterator {n!r} repeated in {text!r}", where)
            merged[n] = c
        return cls(tuple(merged.items()), constant)

    def __str__(self) -> str:
        parts = []
        for n, c in self.terms:
            if c == 1:
                parts.append(n)
            else:
                parts.append(f"{c}*{n}")
        if self.constant or not parts:
            parts.append(str(self.constant))
        out = " + ".join(parts)
        return out.replace("+ -", "- ")


@dataclass(frozen=True)
class TensorDef:
    name: str
    shape: tuple[int, ...]
    pad: tuple[bool, ...]
    elem_type: str = "int8"  # "int8" operand or "int32" accumulator

    def __post_init__(self):
        if any(s < 1 for s in self.shape):
            raise SpecError(f"tensor {self.name}: shape dims must be >= 1")
        if len(self.pad) != len(self.shape):
            raise SpecError(f"tensor {self.name}: pad flags must match shape rank")
        if self.elem_type not in ("int8", "int32"):
            raise SpecError(f"tensor {self.name}: elem_type must be int8 or int32")


@dataclass(frozen=True)
class TensorAccess:
    tensor: str
    access: tuple[AffineExpr, ...]


@dataclass(frozen=True)
class Statement:
    """One multiply feeding one commutative accumulation."""

    output: TensorAccess
    operands: tuple[TensorAccess, ...]
    ops: tuple[str, ...] = ("mul", "add")

    def __post_init__(self):
        if self.ops != ("mul", "add"):
            raise SpecError("statement op chain must be (mul, add)")
        if len(self.operands) != 2:
            raise SpecError("multiply takes exactly two operands")


@dataclass(frozen=True)
class Workload:
    name: str
    iterators: tuple[IteratorDef, ...]
    tensors: tuple[TensorDef, ...]
    statement: Statement

    def __post_init__(self):
        names = [it.name for it in self.iterators]
        if len(set(names)) != len(names):
            raise SpecError("duplicate iterator names")
        tnames = [t.name for t in self.tensors]
        if len(set(tnames)) != len(tnames):
            raise SpecError("duplicate tensor names")
        for it in self.iterators:
            if it.extent < 1:
                raise SpecError(f"iterator {it.name}: extent must be >= 1")
        declared = set(names)
        reductions = {it.name for it in self.iterators if it.kind is IteratorKind.REDUCTION}
        for where, acc in [("output", self.statement.output)] + [
            (f"operand {i}", op) for i, op in enumerate(self.statement.operands)
        ]:
            if acc.tensor not in set(tnames):
                raise SpecError(f"{where}: unknown tensor {acc.tensor!r}")
            tensor = self.tensor(acc.tensor)
            if len(acc.access) != len(tensor.shape):
                raise SpecError(f"{where}: access rank != tensor rank")
            for expr in acc.access:
                for it_name in expr.iterators():
                    if it_name not in declared:
                        raise SpecError(f"{where}: unknown iterator {it_name!r}")
        for expr in self.statement.output.access:
            for it_name in expr.iterators():
                if it_name in reductions:
                    raise SpecError(
                        f"reduction iterator {it_name!r} appears in output access"
                    )

    def tensor(self, name: str) -> TensorDef:
        for t in self.tensors:
            if t.name == name:
                return t
        raise KeyError(name)

    def iterator(self, name: str) -> IteratorDef:
        for it in self.iterators:
            if it.name == name:
                return it
        raise KeyError(name)

    def spatial_iterators(self) -> tuple[IteratorDef, ...]:
        return tuple(it for it in self.iterators if it.kind is IteratorKind.SPATIAL)

    def reduction_iterators(self) -> tuple[IteratorDef, ...]:
        return tuple(it for it in self.iterators if it.kind is IteratorKind.REDUCTION)

    def extents(self) -> dict[str, int]:
        return {it.name: it.extent for it in self.iterators}


@dataclass(frozen=True)
class IntrinsicSpec:
    """A fixed-shape hardware instruction described as a tiny Workload."""

    workload: Workload
    operand_roles: tuple[str, ...]  # hardware buffer name per operand position
    transposed_operands: tuple[bool, ...]
    accumulate_in_place: bool = True
    expansion_cap: int = 10**6

    def __post_init__(self):
        product = 1
        for it in self.workload.iterators:
            product *= it.extent
        if product > self.expansion_cap:
            raise SpecError(
                f"intrinsic iteration space {product} exceeds expansion cap "
                f"{self.expansion_cap}"
            )

    def extents(self) -> dict[str, int]:
        return self.workload.extents()


# ---------------------------------------------------------------------------
# instance sets and relations
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class InstanceSet:
    name: str
    dims: tuple[tuple[str, int], ...]  # (dim name, extent)

    @property
    def arity(self) -> int:
        return len(self.dims)

    def extents(self) -> tuple[int, ...]:
        return tuple(e for _, e in self.dims)

    def names(self) -> tuple[str, ...]:
        return tuple(n for n, _ in self.dims)

    def domain(self) -> TupleDomain:
        return TupleDomain.from_extents(self.extents())

    def index(self, dim_name: str) -> int:
        for i, (n, _) in enumerate(self.dims):
            if n == dim_name:
                return i
        raise KeyError(dim_name)


FREE = None  # rule sentinel: target dim unconstrained within bounds


@dataclass(frozen=True)
class Guard:
    """Equality coupling: target_expr(target point) == source_expr(source point)."""

    target_expr: AffineExpr
    source_expr: AffineExpr


@dataclass(frozen=True)
class Relation:
    name: str
    source: InstanceSet
    target: InstanceSet
    rules: tuple[Optional[AffineExpr], ...]  # per target dim; None = Free
    guards: tuple[Guard, ...] = ()
    # Half-open [lo, hi) per dim; default = [0, extent).  Padding-aware
    # problem assembly substitutes wider bounds here.
    source_bounds: Optional[tuple[tuple[int, int], ...]] = None
    target_bounds: Optional[tuple[tuple[int, int], ...]] = None

    def __post_init__(self):
        if len(self.rules) != self.target.arity:
            raise ValueError(f"relation {self.name}: one rule per target dim required")

    def src_bounds(self) -> tuple[tuple[int, int], ...]:
        if self.source_bounds is not None:
            return self.source_bounds
        return tuple((0, e) for e in self.source.extents())

    def tgt_bounds(self) -> tuple[tuple[int, int], ...]:
        if self.target_bounds is not None:
            return self.target_bounds
        return tuple((0, e) for e in self.target.extents())

    def with_bounds(
        self,
        source_bounds: tuple[tuple[int, int], ...],
        target_bounds: tuple[tuple[int, int], ...],
    ) -> "Relation":
        return Relation(
            self.name, self.source, self.target, self.rules, self.guards,
            source_bounds, target_bounds,
        )

    def is_functional(self) -> bool:
        return all(rule is not None for rule in self.rules)


class ContractViolation(ValueError):
    pass


def _in_bounds(p: Point, bounds: tuple[tuple[int, int], ...]) -> bool:
    return all(lo <= v < hi for v, (lo, hi) in zip(p, bounds))


def eval_relation(r: Relation, p: Point) -> TupleDomain:
    """Image of source point p under r, as a tuple domain over the target."""
    sbounds = r.src_bounds()
    if len(p) != r.source.arity or not _in_bounds(p, sbounds):
        raise ContractViolation(
            f"point {p} outside source set of relation {r.name!r}"
        )
    env = dict(zip(r.source.names(), p))
    tbounds = r.tgt_bounds()
    tnames = r.target.names()

    dims: list[Optional[tuple[int, int, int]]] = []
    free_dims: list[int] = []
    for d, rule in enumerate(r.rules):
        lo, hi = tbounds[d]
        if rule is None:
            dims.append(None)
            free_dims.append(d)
        else:
            v = rule.evaluate(env)
            if not (lo <= v < hi):
                return TupleDomain.empty(r.target.arity)
            dims.append((v, 1, 1))

    if not r.guards:
        filled = [
            dim if dim is not None else (tbounds[d][0], 1, tbounds[d][1] - tbounds[d][0])
            for d, dim in enumerate(dims)
        ]
        return TupleDomain(r.target.arity, (Box(tuple(filled)),))

    # Guards couple some free dims to the source point.  Pick one "solve"
    # dimension per guard (the widest of its free dims); enumerate every
    # other guard-involved free dim and solve per combination.
    def guard_free_dims(g: Guard) -> list[int]:
        return sorted(
            {tnames.index(n) for n in g.target_expr.iterators() if dims[tnames.index(n)] is None}
        )

    solve_dim_of: dict[int, Optional[int]] = {}
    taken: set[int] = set()
    for gi, g in enumerate(r.guards):
        candidates = [d for d in guard_free_dims(g) if d not in taken]
        if candidates:
            chosen = max(candidates, key=lambda d: tbounds[d][1] - tbounds[d][0])
            solve_dim_of[gi] = chosen
            taken.add(chosen)
        else:
            solve_dim_of[gi] = None

    all_guard_dims = sorted({d for g in r.guards for d in guard_free_dims(g)})
    enum_dims = [d for d in all_guard_dims if d not in taken]

    boxes: list[Box] = []
    enum_ranges = [range(tbounds[d][0], tbounds[d][1]) for d in enum_dims]
    for combo in itertools.product(*enum_ranges):
        known: dict[int, int] = dict(zip(enum_dims, combo))
        ok = True
        pending = list(enumerate(r.guards))
        progress = True
        while pending and ok and progress:
            progress = False
            still = []
            for gi, g in pending:
                sd = solve_dim_of[gi]
                sd_name = tnames[sd] if sd is not None else None
                unknown = [
                    n for n in g.target_expr.iterators()
                    if dims[tnames.index(n)] is None
                    and tnames.index(n) not in known
                    and n != sd_name
                ]
                if unknown:
                    still.append((gi, g))
                    continue
                progress = True
                rhs = g.source_expr.evaluate(env)
                tenv = {tnames[d]: v for d, v in known.items()}
                for d, dim in enumerate(dims):
                    if dim is not None:
                        tenv[tnames[d]] = dim[0]
                base = g.target_expr.constant + sum(
                    c * tenv[n] for n, c in g.target_expr.terms if n != sd_name
                )
                coeff = g.target_expr.coefficient(sd_name) if sd_name else 0
                if coeff == 0 or (sd in known):
                    total = base + (coeff * known[sd] if sd in known else 0)
                    if total != rhs:
                        ok = False
                        break
                else:
                    num = rhs - base
                    if num % coeff != 0:
                        ok = False
                        break
                    v = num // coeff
                    lo, hi = tbounds[sd]
                    if not (lo <= v < hi):
                        ok = False
                        break
                    known[sd] = v
            pending = still
        if not ok or pending:
            continue
        filled = []
        for d, dim in enumerate(dims):
            if dim is not None:
                filled.append(dim)
            elif d in known:
                filled.append((known[d], 1, 1))
            else:
                lo, hi = tbounds[d]
                filled.append((lo, 1, hi - lo))
        boxes.append(Box(tuple(filled)))
    return TupleDomain.from_boxes(r.target.arity, boxes)


def relation_holds(r: Relation, s: Point, t: Point) -> bool:
    """Direct membership check: t ∈ r(s)."""
    sbounds, tbounds = r.src_bounds(), r.tgt_bounds()
    if not _in_bounds(s, sbounds) or not _in_bounds(t, tbounds):
        return False
    env = dict(zip(r.source.names(), s))
    tenv = dict(zip(r.target.names(), t))
    for d, rule in enumerate(r.rules):
        if rule is not None and t[d] != rule.evaluate(env):
            return False
    for g in r.guards:
        if g.target_expr.evaluate(tenv) != g.source_expr.evaluate(env):
            return False
    return True


def invert_relation(r: Relation) -> Relation:
    """Relation mapping target points back to source supersets.

    Single-term unit-coefficient rules invert exactly; everything else turns
    into a Free dimension plus an equality guard, which loses per-point
    precision but never drops a preimage.
    """
    src_names = r.source.names()
    tgt_names = r.target.names()
    inv_rules: list[Optional[AffineExpr]] = [None] * r.source.arity
    inv_guards: list[Guard] = []
    claimed: set[int] = set()
    for d, rule in enumerate(r.rules):
        if rule is None:
            continue
        terms = rule.terms
        invertible = (
            len(terms) == 1
            and abs(terms[0][1]) == 1
            and src_names.index(terms[0][0]) not in claimed
        )
        if invertible:
            name, coeff = terms[0]
            si = src_names.index(name)
            # src = coeff * (tgt_d - constant); coeff in {1,-1}
            inv_rules[si] = AffineExpr(((tgt_names[d], coeff),), -coeff * rule.constant)
            claimed.add(si)
        else:
            # guard over the *inverse's* target (= original source) dims
            inv_guards.append(
                Guard(target_expr=rule, source_expr=AffineExpr(((tgt_names[d], 1),)))
            )
    return Relation(
        name=f"{r.name}^-1",
        source=r.target,
        target=r.source,
        rules=tuple(inv_rules),
        guards=tuple(inv_guards),
        source_bounds=r.target_bounds,
        target_bounds=r.source_bounds,
    )


# ---------------------------------------------------------------------------
# workload compilation
# ---------------------------------------------------------------------------

MUL_SET = "mul"
ADD_SET = "add"

FLOW_REL = "flow"
PARALLEL_REL = "parallel"
OUTPUT_REL = "output"


def access_relation_name(operand_index: int) -> str:
    return f"access:{operand_index}"


def tensor_set_name(tensor: str) -> str:
    return f"tensor:{tensor}"


def build_instance_sets(w: Workload) -> dict[str, InstanceSet]:
    """Instance sets for the multiply, the accumulate, and each tensor."""
    spatial = [(it.name, it.extent) for it in w.spatial_iterators()]
    reduction = [(it.name, it.extent) for it in w.reduction_iterators()]
    sets = {
        MUL_SET: InstanceSet(MUL_SET, tuple(spatial + reduction)),
        ADD_SET: InstanceSet(ADD_SET, tuple(spatial)),
    }
    for t in w.tensors:
        sets[tensor_set_name(t.name)] = InstanceSet(
            tensor_set_name(t.name),
            tuple((f"d{i}", e) for i, e in enumerate(t.shape)),
        )
    return sets


def build_relations(w: Workload) -> dict[str, Relation]:
    """Flow, per-operand access, output access, and output parallelism."""
    sets = build_instance_sets(w)
    mul, add = sets[MUL_SET], sets[ADD_SET]
    rels: dict[str, Relation] = {}

    rels[FLOW_REL] = Relation(
        FLOW_REL, mul, add,
        rules=tuple(AffineExpr(((n, 1),)) for n, _ in add.dims),
    )
    for k, op in enumerate(w.statement.operands):
        rels[access_relation_name(k)] = Relation(
            access_relation_name(k), mul, sets[tensor_set_name(op.tensor)],
            rules=tuple(op.access),
        )
    out = w.statement.output
    rels[OUTPUT_REL] = Relation(
        OUTPUT_REL, add, sets[tensor_set_name(out.tensor)],
        rules=tuple(out.access),
    )
    rels[PARALLEL_REL] = Relation(
        PARALLEL_REL, add, add, rules=(FREE,) * add.arity,
    )
    return rels


# ---------------------------------------------------------------------------
# document parsing / serialization
# ---------------------------------------------------------------------------


def _require(doc: dict, key: str, where: str):
    if key not in doc:
        raise SpecError(f"missing field {key!r}", where)
    return doc[key]


def workload_from_dict(doc: dict, where: str = "workload") -> Workload:
    try:
        iterators = tuple(
            IteratorDef(
                name=_require(it, "name", f"{where}.iterators[{i}]"),
                extent=int(_require(it, "extent", f"{where}.iterators[{i}]")),
                kind=IteratorKind(_require(it, "kind", f"{where}.iterators[{i}]")),
            )
            for i, it in enumerate(_require(doc, "iterators", where))
        )
        tensors = tuple(
            TensorDef(
                name=_require(t, "name", f"{where}.tensors[{i}]"),
                shape=tuple(int(x) for x in _require(t, "shape", f"{where}.tensors[{i}]")),
                pad=tuple(bool(x) for x in t.get("pad", [False] * len(t["shape"]))),
                elem_type=t.get("elem_type", "int8"),
            )
            for i, t in enumerate(_require(doc, "tensors", where))
        )
        stmt_doc = _require(doc, "statement", where)

        def parse_access(acc_doc: dict, label: str) -> TensorAccess:
            return TensorAccess(
                tensor=_require(acc_doc, "tensor", label),
                access=tuple(
                    AffineExpr.parse(str(a), f"{label}.access[{i}]")
                    for i, a in enumerate(_require(acc_doc, "access", label))
                ),
            )

        statement = Statement(
            output=parse_access(_require(stmt_doc, "output", f"{where}.statement"),
                                f"{where}.statement.output"),
            operands=tuple(
                parse_access(op, f"{where}.statement.operands[{i}]")
                for i, op in enumerate(_require(stmt_doc, "operands", f"{where}.statement"))
            ),
            ops=tuple(stmt_doc.get("ops", ["mul", "add"])),
        )
        return Workload(
            name=_require(doc, "name", where),
            iterators=iterators,
            tensors=tensors,
            statement=statement,
        )
    except (TypeError, ValueError) as exc:
        if isinstance(exc, SpecError):
            raise
        raise SpecError(str(exc), where) from exc


def workload_to_dict(w: Workload) -> dict:
    return {
        "name": w.name,
        "iterators": [
            {"name": it.name, "extent": it.extent, "kind": it.kind.value}
            for it in w.iterators
        ],
        "tensors": [
            {
                "name": t.name,
                "shape": list(t.shape),
                "pad": list(t.pad),
                "elem_type": t.elem_type,
            }
            for t in w.tensors
        ],
        "statement": {
            "output": {
                "tensor": w.statement.output.tensor,
                "access": [str(e) for e in w.statement.output.access],
            },
            "ops": list(w.statement.ops),
            "operands": [
                {"tensor": op.tensor, "access": [str(e) for e in op.access]}
                for op in w.statement.operands
            ],
        },
    }


def parse_workload(text: str) -> Workload:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SpecError(f"invalid JSON at line {exc.lineno}, column {exc.colno}: {exc.msg}")
    return workload_from_dict(doc)


def serialize_workload(w: Workload) -> str:
    return json.dumps(workload_to_dict(w), indent=2)


def intrinsic_from_dict(doc: dict) -> IntrinsicSpec:
    w = workload_from_dict(_require(doc, "workload", "intrinsic"), "intrinsic.workload")
    n_operands = len(w.statement.operands)
    roles = tuple(doc.get("operand_roles", [f"buf{i}" for i in range(n_operands)]))
    transposed = tuple(bool(x) for x in doc.get("transposed_operands", [False] * n_operands))
    if len(roles) != n_operands or len(transposed) != n_operands:
        raise SpecError("operand_roles/transposed_operands must match operand count",
                        "intrinsic")
    return IntrinsicSpec(
        workload=w,
        operand_roles=roles,
        transposed_operands=transposed,
        accumulate_in_place=bool(doc.get("accumulate_in_place", True)),
        expansion_cap=int(doc.get("expansion_cap", 10**6)),
    )


def parse_intrinsic(text: str) -> IntrinsicSpec:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SpecError(f"invalid JSON at line {exc.lineno}, column {exc.colno}: {exc.msg}")
    return intrinsic_from_dict(doc)
