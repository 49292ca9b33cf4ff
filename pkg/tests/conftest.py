"""Shared helpers for the test suite."""

from pathlib import Path

import pytest

from tensorbind import SearchConfig, assemble, csp
from tensorbind.embedding import _strategy_orders

WORKLOADS = Path(__file__).resolve().parent.parent / "workloads"


@pytest.fixture(scope="session")
def workloads_dir() -> Path:
    return WORKLOADS


def exhaustive_solution_set(w, i, mode, strategy="none"):
    """Union of all CSP solutions over every asset (no early stopping).

    Strategy "B" clips domains before the search, so its set may be a
    strict subset of the complete one; "none" and "A" are complete.
    """
    ep = assemble(w, i, mode)
    use_b = "B" in strategy
    bound = max(it.extent for it in ep.context.intrinsic.workload.iterators)

    def factory(order):
        problem = ep.make_problem(order)
        if use_b:
            for group_idx in range(len(problem.groups)):
                csp.apply_domain_bound(problem, group_idx, bound, stride=1)
        return problem

    orders = _strategy_orders(ep, "A" in strategy)
    out = set()
    for result in csp.portfolio(factory, orders,
                                SearchConfig(candidate_count=10**9)):
        out.update(result.solutions)
    return out
