"""Command-line front end.

Subcommands: embed (search + plan), verify (plan vs naive interpreter),
effort (conv2d channel/layout/strategy sweep as CSV), oracle (CSP vs
brute-force solution sets).

Exit codes are a stable contract:
  0 ok, 1 bad input, 2 no feasible embedding, 3 verification mismatch,
  4 oracle guard exceeded.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import csp, presets
from .csp import EFFORT_CSV_HEADER, SearchConfig, effort_csv_row
from .embedding import (
    Candidate,
    DimensionMapping,
    InfeasibleEmbeddingError,
    Mode,
    assemble,
    search_candidates,
)
from .executor import (
    OracleGuardError,
    brute_force_embeddings,
    random_operand,
    run_naive,
    run_plan,
)
from .rewrite import PlanUnsupportedError, RewritePlan, derive_plan
from .workload import SpecError, parse_intrinsic, parse_workload

REPORT_SCHEMA_VERSION = 1

EXIT_OK = 0
EXIT_INPUT = 1
EXIT_INFEASIBLE = 2
EXIT_VERIFY = 3
EXIT_GUARD = 4

log = logging.getLogger("tensorbind.cli")


def _setup_logging():
    level = os.environ.get("TENSORBIND_LOG", "WARNING").upper()
    logging.basicConfig(
        level=getattr(logging, level, logging.WARNING),
        format="%(levelname)s %(name)s: %(message)s",
    )


def _read_file(path: str) -> str:
    try:
        return Path(path).read_text()
    except OSError as exc:
        raise SpecError(f"cannot read {path}: {exc.strerror}")


def _load_pair(args):
    w = parse_workload(_read_file(args.workload))
    i = parse_intrinsic(_read_file(args.intrinsic))
    return w, i


def _parse_weights(text: str) -> tuple[float, float]:
    parts = text.split(",")
    if len(parts) != 2:
        raise SpecError("--weights expects two comma-separated numbers")
    try:
        return float(parts[0]), float(parts[1])
    except ValueError:
        raise SpecError(f"--weights: {text!r} is not numeric")


def _search_config(args) -> SearchConfig:
    strategies = frozenset(c for c in args.strategy if c in "AB")
    return SearchConfig(
        strategies=strategies,
        bound_b=args.bound,
        candidate_count=args.k,
        weights=_parse_weights(args.weights),
        asset_parallelism=args.asset_parallelism,
        seed=args.seed,
        time_limit_s=args.time_limit,
    )


def _mapping_json(m: DimensionMapping) -> dict:
    return {
        "dims": {
            iname: [
                {"iterator": e.iterator, "tile": e.tile, "stride": e.stride,
                 "pad": e.pad, "grid": e.grid}
                for e in ents
            ]
            for iname, ents in m.entries
        },
        "windows": [
            {"tensor": win.tensor, "dim": win.dim,
             "window_iterator": win.window_iterator,
             "outer_iterator": win.outer_iterator, "step": win.step,
             "span": win.span, "offset": win.offset}
            for win in m.windows
        ],
        "flags": sorted(m.flags),
    }


def _candidate_json(c: Candidate, plan, plan_error) -> dict:
    return {
        "score": c.score,
        "overhead": {"o_mac": c.overhead.o_mac, "o_data": c.overhead.o_data},
        "asset": c.asset_index,
        "mapping": _mapping_json(c.mapping),
        "plan": plan.to_json() if plan is not None else None,
        "plan_error": plan_error,
    }


def _emit(doc: dict, out_path):
    text = json.dumps(doc, indent=2, sort_keys=True)
    if out_path:
        Path(out_path).write_text(text + "\n")
    else:
        print(text)


def _nearest_miss(failure_families: dict) -> str:
    if not failure_families:
        return "search space was empty before any constraint fired"
    fam, n = max(failure_families.items(), key=lambda kv: kv[1])
    return (f"no embedding; constraint family {fam!r} eliminated the most "
            f"candidates ({n} failures)")


def cmd_embed(args) -> int:
    try:
        w, i = _load_pair(args)
        config = _search_config(args)
    except SpecError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT

    mode = Mode(args.mode)
    layout = args.layout.split(",") if args.layout else None
    try:
        ep = assemble(w, i, mode)
    except InfeasibleEmbeddingError as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE

    outcome = search_candidates(ep, config, strategy=args.strategy,
                                max_assets=args.assets_max,
                                exhaustive=args.exhaustive)

    candidates_json = []
    for c in outcome.candidates:
        plan, plan_error = None, None
        try:
            plan = derive_plan(c.mapping, w, i, target_layout=layout)
        except PlanUnsupportedError as exc:
            plan_error = str(exc)
        candidates_json.append(_candidate_json(c, plan, plan_error))

    report = {
        "schema_version": REPORT_SCHEMA_VERSION,
        "workload": w.name,
        "intrinsic": i.workload.name,
        "mode": mode.value,
        "strategy": args.strategy,
        "solutions_found": outcome.solutions_found,
        "candidates": candidates_json,
        "assets": [
            {"asset": idx, "order": list(order), "stats": stats.as_dict()}
            for idx, order, stats in outcome.asset_stats
        ],
        "failure_families": dict(sorted(outcome.failure_families.items())),
    }

    if not outcome.candidates:
        report["diagnostic"] = _nearest_miss(outcome.failure_families)
        _emit(report, args.out)
        print(report["diagnostic"], file=sys.stderr)
        return EXIT_INFEASIBLE

    _emit(report, args.out)
    return EXIT_OK


def cmd_verify(args) -> int:
    try:
        w, i = _load_pair(args)
        plan_doc = json.loads(_read_file(args.plan))
        plan = RewritePlan.from_json(plan_doc)
    except (SpecError, json.JSONDecodeError, KeyError, TypeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT

    for s in range(args.seeds):
        seed = args.seed + s
        inputs = {
            op.tensor: random_operand(w.tensor(op.tensor).shape, seed + 1000 * k)
            for k, op in enumerate(w.statement.operands)
        }
        want = run_naive(w, inputs)
        try:
            got = run_plan(plan, w, i, inputs)
        except Exception as exc:  # corrupted plans can fail arbitrarily
            print(f"seed {seed}: plan execution failed: {exc}", file=sys.stderr)
            return EXIT_VERIFY
        if not np.array_equal(got, want):
            bad = np.argwhere(got != want)[0]
            print(
                f"seed {seed}: mismatch at index {tuple(int(x) for x in bad)}: "
                f"plan={got[tuple(bad)]} naive={want[tuple(bad)]}",
                file=sys.stderr,
            )
            return EXIT_VERIFY
    print(f"verified: {args.seeds} seeds exact")
    return EXIT_OK


def cmd_effort(args) -> int:
    try:
        channels = [int(c) for c in args.channels.split(",")]
        layouts = args.layouts.split(",")
        strategies = args.strategies.split(",")
        weights = _parse_weights(args.weights)
    except (ValueError, SpecError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    for lay in layouts:
        if lay not in presets.CONV_LAYOUTS:
            print(f"error: unknown layout {lay!r}", file=sys.stderr)
            return EXIT_INPUT
    for s in strategies:
        if s not in ("none", "A", "B", "AB"):
            print(f"error: unknown strategy {s!r}", file=sys.stderr)
            return EXIT_INPUT

    intr = presets.gemm_intrinsic(args.gx, args.gy, args.gz)
    rows = [EFFORT_CSV_HEADER]
    for layout in layouts:
        for c in channels:
            w = presets.conv2d(
                f"conv_{layout}_c{c}", 1, args.hw, args.hw, c, c, 3, 3,
                layout=layout,
            )
            for strategy in strategies:
                config = SearchConfig(
                    strategies=frozenset(x for x in strategy if x in "AB"),
                    bound_b=args.bound,
                    candidate_count=args.k,
                    weights=weights,
                    asset_parallelism=args.asset_parallelism,
                    seed=args.seed,
                    time_limit_s=args.cell_timeout,
                )
                label = f"{layout}/c{c}"
                t0 = time.perf_counter()
                try:
                    ep = assemble(w, intr, Mode(args.mode))
                    outcome = search_candidates(
                        ep, config, strategy=strategy,
                        max_assets=args.assets_max,
                        complete_assets=True,
                    )
                except InfeasibleEmbeddingError:
                    rows.append(f"-1,{label},{strategy}!infeasible,0,0,0,0,0")
                    continue
                wall = time.perf_counter() - t0
                agg = csp.SearchStats()
                for _, _, stats in outcome.asset_stats:
                    agg.nodes_expanded += stats.nodes_expanded
                    agg.failures += stats.failures
                    agg.propagator_runs += stats.propagator_runs
                    agg.solutions_found += stats.solutions_found
                    agg.wall_ms += stats.wall_ms
                timed_out = (
                    args.cell_timeout is not None and wall >= args.cell_timeout
                )
                tag = f"{strategy}!timeout" if timed_out else strategy
                rows.append(effort_csv_row(
                    len(outcome.asset_stats), label, tag, agg,
                ))
    text = "\n".join(rows) + "\n"
    if args.out:
        Path(args.out).write_text(text)
    else:
        print(text, end="")
    return EXIT_OK


def cmd_oracle(args) -> int:
    try:
        w, i = _load_pair(args)
        config = _search_config(args)
    except SpecError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT

    mode = Mode(args.mode)
    try:
        oracle_set = brute_force_embeddings(w, i, mode, limit=args.limit)
    except OracleGuardError as exc:
        print(f"guard: {exc}", file=sys.stderr)
        return EXIT_GUARD

    try:
        ep = assemble(w, i, mode)
    except InfeasibleEmbeddingError:
        csp_set = set()
    else:
        csp_set = set()
        use_b = "B" in args.strategy
        default_bound = max(
            it.extent for it in ep.context.intrinsic.workload.iterators
        )
        bound = config.bound_b if config.bound_b is not None else default_bound

        def factory(order):
            problem = ep.make_problem(order)
            if use_b:
                for gi in range(len(problem.groups)):
                    csp.apply_domain_bound(problem, gi, bound, stride=1)
            return problem

        from .embedding import _strategy_orders
        all_orders = _strategy_orders(ep, "A" in args.strategy)
        if args.assets_max is not None:
            all_orders = all_orders[:args.assets_max]
        for result in csp.portfolio(factory, all_orders, config):
            csp_set.update(result.solutions)

    only_oracle = sorted(oracle_set - csp_set)
    only_csp = sorted(csp_set - oracle_set)
    report = {
        "schema_version": REPORT_SCHEMA_VERSION,
        "workload": w.name,
        "intrinsic": i.workload.name,
        "mode": mode.value,
        "strategy": args.strategy,
        "oracle_count": len(oracle_set),
        "csp_count": len(csp_set),
        "only_in_oracle": [[list(p) for p in sol] for sol in only_oracle[:20]],
        "only_in_csp": [[list(p) for p in sol] for sol in only_csp[:20]],
    }
    if only_oracle and "B" in args.strategy:
        report["note"] = "expected incompleteness: strategy B clips domains"
    _emit(report, args.out)
    if only_csp or (only_oracle and "B" not in args.strategy):
        print("solution sets differ", file=sys.stderr)
        return EXIT_VERIFY
    return EXIT_OK


def _add_common_search_flags(p: argparse.ArgumentParser):
    p.add_argument("--mode", choices=["strict", "relaxed"], default="strict")
    p.add_argument("--strategy", choices=["none", "A", "B", "AB"], default="none")
    p.add_argument("--k", type=int, default=1, help="candidates to keep")
    p.add_argument("--weights", default="1,1", help="overhead weights 'a,b'")
    p.add_argument("--bound", type=int, default=None,
                   help="domain-bound threshold for strategy B")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--assets-max", type=int, default=None)
    p.add_argument("--asset-parallelism", type=int, default=1)
    p.add_argument("--time-limit", type=float, default=None,
                   help="per-search wall-clock budget in seconds")
    p.add_argument("--out", default=None, help="write the report to a file")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tensorbind",
        description="Embed a fixed-shape GEMM instruction into loop-nest "
                    "workloads via constraint search.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_embed = sub.add_parser("embed", help="search embeddings and emit plans")
    p_embed.add_argument("--workload", required=True)
    p_embed.add_argument("--intrinsic", required=True)
    p_embed.add_argument("--exhaustive", action="store_true",
                         help="enumerate every asset completely before "
                              "ranking (slower, exact top-k)")
    p_embed.add_argument("--layout", default=None,
                         help="comma-separated free-dim order for packed layouts")
    _add_common_search_flags(p_embed)
    p_embed.set_defaults(func=cmd_embed)

    p_verify = sub.add_parser("verify", help="check a plan against the "
                                             "naive interpreter")
    p_verify.add_argument("--plan", required=True)
    p_verify.add_argument("--workload", required=True)
    p_verify.add_argument("--intrinsic", required=True)
    p_verify.add_argument("--seeds", type=int, default=10)
    p_verify.add_argument("--seed", type=int, default=0)
    p_verify.set_defaults(func=cmd_verify)

    p_effort = sub.add_parser("effort", help="conv2d channel sweep as CSV")
    p_effort.add_argument("--channels", default="16,32,64,128")
    p_effort.add_argument("--layouts", default="NCHW,NHWC,HWNC")
    p_effort.add_argument("--strategies", default="none,A,B,AB")
    p_effort.add_argument("--hw", type=int, default=8,
                          help="spatial input size (square)")
    p_effort.add_argument("--gx", type=int, default=1)
    p_effort.add_argument("--gy", type=int, default=16)
    p_effort.add_argument("--gz", type=int, default=16)
    p_effort.add_argument("--mode", choices=["strict", "relaxed"],
                          default="strict")
    p_effort.add_argument("--k", type=int, default=1)
    p_effort.add_argument("--weights", default="1,1")
    p_effort.add_argument("--bound", type=int, default=None)
    p_effort.add_argument("--seed", type=int, default=0)
    p_effort.add_argument("--assets-max", type=int, default=None)
    p_effort.add_argument("--asset-parallelism", type=int, default=1)
    p_effort.add_argument("--cell-timeout", type=float, default=None,
                          help="per-cell budget in seconds; overruns are "
                               "flagged in the strategy column")
    p_effort.add_argument("--out", default=None)
    p_effort.set_defaults(func=cmd_effort)

    p_oracle = sub.add_parser("oracle", help="compare CSP and brute-force "
                                             "solution sets")
    p_oracle.add_argument("--workload", required=True)
    p_oracle.add_argument("--intrinsic", required=True)
    p_oracle.add_argument("--limit", type=int, default=10**7,
                          help="brute-force enumeration guard")
    _add_common_search_flags(p_oracle)
    p_oracle.set_defaults(func=cmd_oracle)

    return parser


def main(argv=None) -> int:
    _setup_logging()
    parser = build_parser()
    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
