"""Finite-domain constraint kernel over tuple-valued variables.

Variables hold TupleDomain domains.  Propagators run to fixpoint through a
FIFO queue with per-propagator dedup, triggered when a variable becomes
assigned (singleton domain).  Search is depth-first backtracking with
group-ordered variable selection and lexicographic value selection; the
per-variable lexicographic dimension order is what a search *asset*
changes, which is the basis of the portfolio strategy.
"""

from __future__ import annotations

import logging
import math
import time
from collections import deque
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Callable, Optional, Sequence

from .domains import Box, Point, TupleDomain

log = logging.getLogger("tensorbind.csp")


class Status(Enum):
    OK = "ok"
    FAILED = "failed"


class SetupError(ValueError):
    pass


@dataclass
class SearchStats:
    nodes_expanded: int = 0
    failures: int = 0
    propagator_runs: int = 0
    solutions_found: int = 0
    wall_ms: float = 0.0
    failure_families: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        return {
            "nodes": self.nodes_expanded,
            "failures": self.failures,
            "propagations": self.propagator_runs,
            "solutions": self.solutions_found,
            "wall_ms": round(self.wall_ms, 3),
        }


@dataclass(frozen=True)
class SearchConfig:
    strategies: frozenset = frozenset()  # subset of {"A", "B"}
    bound_b: Optional[int] = None  # domain-bound threshold (strategy B)
    candidate_count: int = 1
    weights: tuple[float, float] = (1.0, 1.0)
    asset_parallelism: int = 1
    seed: int = 0
    node_limit: Optional[int] = None
    time_limit_s: Optional[float] = None
    max_solutions: Optional[int] = None  # stop a search after this many

    def __post_init__(self):
        if self.candidate_count < 1:
            raise SetupError("candidate_count must be >= 1")
        if any(w < 0 for w in self.weights):
            raise SetupError("weights must be nonnegative")
        if not self.strategies <= {"A", "B"}:
            raise SetupError(f"unknown strategies {self.strategies}")


@dataclass(frozen=True)
class Variable:
    id: int
    group: int
    dim_names: tuple[str, ...]  # used for asset-driven value ordering

    @property
    def arity(self) -> int:
        return len(self.dim_names)


class Constraint:
    """Base propagator.  Subclasses override variables() and propagate().

    `triggers` lists the variables whose assignment scheduled this run;
    None means "recheck everything" (the root fixpoint).  Propagators may
    ignore it; it exists so incremental ones avoid full rescans.
    """

    def variables(self) -> Sequence[int]:
        raise NotImplementedError

    def propagate(self, state: "SearchState",
                  triggers: Optional[Sequence[int]] = None) -> Status:
        raise NotImplementedError

    @property
    def family(self) -> str:
        return type(self).__name__


class Problem:
    def __init__(self):
        self.variables: list[Variable] = []
        self.domains: list[TupleDomain] = []
        self.constraints: list[Constraint] = []
        self.groups: list[list[int]] = []
        # Significance order (most significant dim name first) per variable;
        # None means natural dim order.
        self.value_orders: list[Optional[tuple[int, ...]]] = []

    def add_variable(self, group: int, dim_names: Sequence[str],
                     domain: TupleDomain) -> int:
        if domain.arity != len(dim_names):
            raise SetupError("domain arity does not match dim names")
        var_id = len(self.variables)
        self.variables.append(Variable(var_id, group, tuple(dim_names)))
        self.domains.append(domain)
        while len(self.groups) <= group:
            self.groups.append([])
        self.groups[group].append(var_id)
        self.value_orders.append(None)
        return var_id

    def post(self, constraint: Constraint) -> Constraint:
        var_ids = list(constraint.variables())
        if not var_ids:
            raise SetupError("constraint references no variables")
        for v in var_ids:
            if not (0 <= v < len(self.variables)):
                raise SetupError(f"constraint references unknown variable {v}")
        self.constraints.append(constraint)
        return constraint

    def set_dim_significance(self, significance: Sequence[str]):
        """Reorder value enumeration per variable.

        `significance` lists dim names most-significant first (the last
        name varies fastest during lexicographic enumeration).  Dims whose
        name is absent keep their relative order and precede all named
        dims in significance.
        """
        rank = {name: i for i, name in enumerate(significance)}
        for var in self.variables:
            names = var.dim_names
            order = sorted(
                range(len(names)),
                key=lambda d: (names[d] in rank, rank.get(names[d], 0), d),
            )
            self.value_orders[var.id] = tuple(order)

    def watchers(self) -> list[list[int]]:
        table: list[list[int]] = [[] for _ in self.variables]
        for ci, c in enumerate(self.constraints):
            for v in c.variables():
                table[v].append(ci)
        return table


class SearchState:
    """One node of the search tree: a domain per variable plus stats."""

    __slots__ = ("problem", "domains", "stats", "_watchers", "_changed",
                 "check_monotone")

    def __init__(self, problem: Problem, stats: SearchStats,
                 watchers: list[list[int]], check_monotone: bool = False):
        self.problem = problem
        self.domains: list[TupleDomain] = list(problem.domains)
        self.stats = stats
        self._watchers = watchers
        self._changed: list[int] = []
        self.check_monotone = check_monotone

    def clone(self) -> "SearchState":
        child = SearchState.__new__(SearchState)
        child.problem = self.problem
        child.domains = list(self.domains)
        child.stats = self.stats
        child._watchers = self._watchers
        child._changed = []
        child.check_monotone = self.check_monotone
        return child

    # -- domain updates (called by propagators) -------------------------

    def domain(self, var_id: int) -> TupleDomain:
        return self.domains[var_id]

    def value(self, var_id: int) -> Optional[Point]:
        return self.domains[var_id].assigned_value()

    def is_assigned(self, var_id: int) -> bool:
        return self.domains[var_id].size() == 1

    def set_domain(self, var_id: int, new: TupleDomain) -> Status:
        old = self.domains[var_id]
        if new.size() == old.size():
            return Status.OK
        if self.check_monotone and new.size() > old.size():
            raise AssertionError(
                f"propagator grew domain of variable {var_id}: "
                f"{old.size()} -> {new.size()}"
            )
        self.domains[var_id] = new
        if new.is_empty():
            return Status.FAILED
        if new.size() == 1:
            self._changed.append(var_id)
        return Status.OK

    # -- propagation -----------------------------------------------------

    def propagate(self, trigger_vars: Optional[Sequence[int]] = None) -> Status:
        """Run to fixpoint; FIFO queue with dedup, assignment-triggered."""
        queue: deque[int] = deque()
        # queued[ci] = set of trigger vars, or None for a full recheck
        queued: dict[int, Optional[set[int]]] = {}

        def enqueue(ci: int, trigger: Optional[int]):
            if ci in queued:
                if trigger is None:
                    queued[ci] = None
                elif queued[ci] is not None:
                    queued[ci].add(trigger)
                return
            queued[ci] = None if trigger is None else {trigger}
            queue.append(ci)

        if trigger_vars is None:
            for ci in range(len(self.problem.constraints)):
                enqueue(ci, None)
        else:
            for v in trigger_vars:
                for ci in self._watchers[v]:
                    enqueue(ci, v)

        while queue:
            ci = queue.popleft()
            triggers = queued.pop(ci)
            constraint = self.problem.constraints[ci]
            self.stats.propagator_runs += 1
            self._changed = []
            status = constraint.propagate(
                self, None if triggers is None else tuple(triggers)
            )
            if status is Status.FAILED:
                fams = self.stats.failure_families
                fams[constraint.family] = fams.get(constraint.family, 0) + 1
                return Status.FAILED
            # a variable becomes singleton at most once per path, so
            # re-enqueueing the running constraint cannot loop
            for v in self._changed:
                for watcher in self._watchers[v]:
                    enqueue(watcher, v)
        return Status.OK


Solution = tuple[Point, ...]


class SearchAbort(Exception):
    """Raised internally when a node/time budget is exhausted."""


def _iter_domain(state: SearchState, var_id: int):
    order = state.problem.value_orders[var_id]
    return state.domains[var_id].iter_points(order)


def _select_variable(state: SearchState) -> Optional[int]:
    for group in state.problem.groups:
        for v in group:
            if not state.is_assigned(v):
                return v
    return None


def search(
    problem: Problem,
    config: Optional[SearchConfig] = None,
    on_solution: Optional[Callable[[Solution, SearchState], None]] = None,
    check_monotone: bool = False,
) -> tuple[list[Solution], SearchStats]:
    """Enumerate all solutions (complete unless a budget aborts early)."""
    config = config or SearchConfig()
    stats = SearchStats()
    watchers = problem.watchers()
    t0 = time.perf_counter()
    deadline = t0 + config.time_limit_s if config.time_limit_s else None

    root = SearchState(problem, stats, watchers, check_monotone)
    solutions: list[Solution] = []

    def budget_check():
        if config.node_limit is not None and stats.nodes_expanded >= config.node_limit:
            raise SearchAbort("node limit")
        if deadline is not None and time.perf_counter() > deadline:
            raise SearchAbort("time limit")

    def dfs(state: SearchState):
        stats.nodes_expanded += 1
        budget_check()
        var = _select_variable(state)
        if var is None:
            sol = tuple(state.value(v) for v in range(len(problem.variables)))
            stats.solutions_found += 1
            solutions.append(sol)
            if on_solution is not None:
                on_solution(sol, state)
            if (config.max_solutions is not None
                    and len(solutions) >= config.max_solutions):
                raise SearchAbort("solution limit")
            return
        for point in _iter_domain(state, var):
            child = state.clone()
            child.domains[var] = TupleDomain.singleton(point)
            if child.propagate([var]) is Status.FAILED:
                stats.failures += 1
                continue
            dfs(child)

    try:
        if root.propagate() is Status.FAILED:
            stats.failures += 1
        else:
            dfs(root)
    except SearchAbort as abort:
        log.info("search aborted: %s", abort)
    stats.wall_ms = (time.perf_counter() - t0) * 1000.0
    return solutions, stats


def branch_and_bound(
    problem: Problem,
    config: SearchConfig,
    objective: Callable[[Solution], float],
    lower_bound: Optional[Callable[[SearchState], float]] = None,
) -> tuple[list[tuple[float, Solution]], SearchStats]:
    """Top-K solutions by ascending objective; ties keep discovery order.

    The default partial-assignment lower bound is 0, i.e. pure enumeration
    plus re-ranking, which is complete.  A caller may plug in a sharper
    bound; it must never exceed the true objective of any completion.
    """
    k = config.candidate_count
    incumbents: list[tuple[float, int, Solution]] = []

    def on_solution(sol: Solution, _state: SearchState):
        score = objective(sol)
        incumbents.append((score, len(incumbents), sol))

    solutions, stats = search(problem, config, on_solution=on_solution)
    del solutions
    incumbents.sort(key=lambda item: (item[0], item[1]))
    return [(score, sol) for score, _, sol in incumbents[:k]], stats


def apply_domain_bound(problem: Problem, group: int, b: int, stride: int = 1):
    """Pre-search clip of every domain dimension in a group to b*stride values.

    Incomplete on purpose: solutions using coordinates at or beyond the clip
    are lost.  Clipping happens relative to each dimension's lower bound.
    """
    if b < 1:
        raise SetupError("bound must be >= 1")
    for var_id in problem.groups[group]:
        dom = problem.domains[var_id]
        if dom.is_empty():
            continue
        bounds = dom.bounds()
        clip = Box(tuple(
            (lo, 1, min(hi - lo + 1, b * stride)) for lo, hi in bounds
        ))
        problem.domains[var_id] = dom.intersect_box(clip)


# ---------------------------------------------------------------------------
# portfolio (asset) search
# ---------------------------------------------------------------------------


def asset_count(n_s: int, n_r: int, k_s: int, k_r: int) -> int:
    """Number of distinct dimension-order assets."""
    return (math.factorial(n_s) // math.factorial(n_s - k_s)) * (
        math.factorial(n_r) // math.factorial(n_r - k_r)
    )


def asset_orders(
    spatial_dims: Sequence[str],
    reduction_dims: Sequence[str],
    k_s: int,
    k_r: int,
) -> list[tuple[str, ...]]:
    """All dimension-significance orders the portfolio runs.

    Each asset picks an ordered selection of k_s spatial and k_r reduction
    dims and makes them the least significant (fastest varying), so value
    enumeration sweeps them first; unchosen dims stay most significant in
    declaration order.
    """
    import itertools

    if k_s > len(spatial_dims) or k_r > len(reduction_dims):
        return [tuple(spatial_dims) + tuple(reduction_dims)]
    orders = []
    for s_sel in itertools.permutations(spatial_dims, k_s):
        rest_s = [d for d in spatial_dims if d not in s_sel]
        for r_sel in itertools.permutations(reduction_dims, k_r):
            rest_r = [d for d in reduction_dims if d not in r_sel]
            orders.append(tuple(rest_s) + tuple(s_sel) + tuple(rest_r) + tuple(r_sel))
    return orders


@dataclass
class AssetResult:
    asset_index: int
    order: tuple[str, ...]
    solutions: list[Solution]
    stats: SearchStats


def portfolio(
    problem_factory: Callable[[tuple[str, ...]], Problem],
    orders: Sequence[tuple[str, ...]],
    config: SearchConfig,
    solution_target: Optional[int] = None,
    truncate_assets: bool = True,
) -> list[AssetResult]:
    """Run one search per asset order; results keep asset index order.

    `problem_factory` builds a fresh problem with the given dimension
    significance, so assets never share mutable state.  With a
    `solution_target`, assets are visited in index order and the portfolio
    stops once the accumulated solution count reaches the target
    (first-success semantics); pass None to always run every asset.
    `truncate_assets` additionally aborts an asset's own search once the
    remaining target is met; disable it to keep per-asset searches complete
    (comparable node counts) while still skipping later assets.
    """

    def run_one(index_order, cfg=config):
        index, order = index_order
        prob = problem_factory(order)
        solutions, stats = search(prob, cfg)
        return AssetResult(index, order, solutions, stats)

    jobs = list(enumerate(orders))
    if solution_target is not None:
        results = []
        found = 0
        for job in jobs:
            cfg = config
            if truncate_assets:
                remaining = solution_target - found
                if config.max_solutions is not None:
                    remaining = min(remaining, config.max_solutions)
                cfg = replace(config, max_solutions=remaining)
            result = run_one(job, cfg)
            results.append(result)
            found += len(result.solutions)
            if found >= solution_target:
                break
        return results
    if config.asset_parallelism > 1 and len(jobs) > 1:
        with ThreadPoolExecutor(max_workers=config.asset_parallelism) as pool:
            results = list(pool.map(run_one, jobs))
    else:
        results = [run_one(job) for job in jobs]
    results.sort(key=lambda r: r.asset_index)
    return results


def merge_asset_solutions(
    results: Sequence[AssetResult],
    dedup_key: Callable[[Solution], object] = lambda sol: sol,
) -> list[tuple[int, Solution]]:
    """Concatenate asset solutions in asset order, dropping duplicates."""
    seen: set = set()
    merged: list[tuple[int, Solution]] = []
    for result in results:
        for sol in result.solutions:
            key = dedup_key(sol)
            if key in seen:
                continue
            seen.add(key)
            merged.append((result.asset_index, sol))
    return merged


EFFORT_CSV_HEADER = "asset,layout_order,strategy,nodes,failures,propagations,solutions,wall_ms"


def effort_csv_row(asset: int, layout_order: str, strategy: str,
                   stats: SearchStats) -> str:
    d = stats.as_dict()
    return (
        f"{asset},{layout_order},{strategy},{d['nodes']},{d['failures']},"
        f"{d['propagations']},{d['solutions']},{d['wall_ms']}"
    )
