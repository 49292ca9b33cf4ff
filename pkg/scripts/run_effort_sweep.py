#!/usr/bin/env python3
"""Run the conv2d channel-sweep effort benchmark and write a CSV.

Thin wrapper over `tensorbind effort` with defaults that finish in a few
minutes on a laptop; pass extra CLI flags after `--` to override anything.

    python3 scripts/run_effort_sweep.py --out results/effort.csv
    python3 scripts/run_effort_sweep.py -- --channels 16,32 --hw 8
"""

import sys
from pathlib import Path

from tensorbind.cli import main

DEFAULTS = [
    "effort",
    "--channels", "16,32,64,128",
    "--layouts", "NCHW,NHWC,HWNC",
    "--strategies", "none,A,B,AB",
    "--hw", "6",
    "--k", "1",
]


if __name__ == "__main__":
    argv = sys.argv[1:]
    extra = []
    if "--" in argv:
        split = argv.index("--")
        argv, extra = argv[:split], argv[split + 1:]
    if "--out" not in argv and "--out" not in extra:
        out = Path("results/effort.csv")
        out.parent.mkdir(exist_ok=True)
        argv += ["--out", str(out)]
    sys.exit(main(DEFAULTS + argv + extra))
