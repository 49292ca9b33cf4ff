#!/usr/bin/env python3
"""End-to-end correctness run over the bundled workload fixtures.

For each (workload, instruction, mode) pair: search for candidates, derive
a rewrite plan from the best plannable one, execute it through the tile
interpreter, and compare bit-exactly against the naive interpreter on a
handful of random inputs.  Prints one line per layer and exits nonzero on
any mismatch.
"""

import sys
import time
from pathlib import Path

import numpy as np

from tensorbind import (
    Mode,
    PlanUnsupportedError,
    SearchConfig,
    assemble,
    derive_plan,
    parse_intrinsic,
    parse_workload,
    random_operand,
    run_naive,
    run_plan,
    search_candidates,
)

WORKLOADS = Path(__file__).resolve().parent.parent / "workloads"

# (workload fixture, instruction fixture, mode, candidates to try)
CORPUS = [
    ("conv3x3_nchw_c64", "gemm_1x16x16", Mode.STRICT, 1),
    ("conv3x3_nhwc_c32", "gemm_1x16x16", Mode.STRICT, 1),
    ("conv3x3_hwnc_c16", "gemm_1x16x16", Mode.STRICT, 1),
    ("matmul_32", "gemm_1x16x16", Mode.STRICT, 1),
    ("matmul_16x16x32_tb", "gemm_1x16x16", Mode.STRICT, 1),
    ("matmul_4", "gemm_1x2x2", Mode.STRICT, 1),
    ("conv3x3_speech_ic1", "gemm_1x16x16", Mode.RELAXED, 2),
    ("conv20x5_speech_ic1", "gemm_1x16x16", Mode.RELAXED, 2),
    ("matmul_k1", "gemm_1x16x16", Mode.RELAXED, 1),
]


def run_layer(wname: str, iname: str, mode: Mode, k: int, seeds: int) -> bool:
    w = parse_workload((WORKLOADS / f"{wname}.json").read_text())
    intr = parse_intrinsic((WORKLOADS / f"{iname}.json").read_text())
    t0 = time.perf_counter()
    outcome = search_candidates(
        assemble(w, intr, mode), SearchConfig(candidate_count=k), strategy="AB")
    plan = None
    for cand in outcome.candidates:
        try:
            plan = derive_plan(cand.mapping, w, intr)
            break
        except PlanUnsupportedError:
            continue
    if plan is None:
        print(f"{wname:24s} NO PLANNABLE CANDIDATE")
        return False
    for seed in range(seeds):
        inputs = {
            op.tensor: random_operand(w.tensor(op.tensor).shape, seed * 31 + 7)
            for op in w.statement.operands
        }
        if not np.array_equal(run_plan(plan, w, intr, inputs),
                              run_naive(w, inputs)):
            print(f"{wname:24s} MISMATCH at seed {seed}")
            return False
    print(f"{wname:24s} {mode.value:7s} ok   "
          f"({seeds} seeds, {time.perf_counter() - t0:.1f}s)")
    return True


if __name__ == "__main__":
    seeds = int(sys.argv[1]) if len(sys.argv) > 1 else 5
    ok = all([run_layer(*case, seeds) for case in CORPUS])
    sys.exit(0 if ok else 1)
