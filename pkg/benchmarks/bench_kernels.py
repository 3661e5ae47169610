"""Time the compiled and pure-numpy kernel paths side by side.

    python benchmarks/bench_kernels.py [--repeat 5]

The backend is fixed at import time, so each path runs in its own
subprocess (``SYNTHBREAK_NO_NUMBA=1`` for the numpy one).
"""
import argparse
import json
import os
import subprocess
import sys
import time

import numpy as np


def _time(fn, repeat):
    fn()  # warm-up, includes JIT compilation
    best = np.inf
    for _ in range(repeat):
        t = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t)
    return best


def worker(repeat):
    from synthbreak import _kernels
    from synthbreak.breaks import zivot_andrews

    rng = np.random.default_rng(0)
    problems = [(rng.normal(size=(12, 40)), rng.normal(size=12)) for _ in range(200)]

    def simplex():
        for A, b in problems:
            _kernels.simplex_lsq(A, b, 1e-10, 1000)

    y = np.cumsum(rng.normal(size=200))
    out = {
        "backend": _kernels.BACKEND,
        "simplex_lsq_200x(12x40)": _time(simplex, repeat),
        "zivot_andrews_n200": _time(lambda: zivot_andrews(y, max_lags=4), repeat),
    }
    print(json.dumps(out))


def run(repeat):
    rows = []
    for disable in ("0", "1"):
        env = dict(os.environ, SYNTHBREAK_NO_NUMBA=disable)
        proc = subprocess.run([sys.executable, __file__, "--worker", "--repeat", str(repeat)],
                              env=env, capture_output=True, text=True, check=True)
        rows.append(json.loads(proc.stdout.strip().splitlines()[-1]))
    fast, slow = rows
    print(f"{'kernel':<28}{fast['backend']:>12}{slow['backend']:>12}{'speedup':>10}")
    for key in fast:
        if key == "backend":
            continue
        print(f"{key:<28}{fast[key]:>11.4f}s{slow[key]:>11.4f}s{slow[key] / fast[key]:>9.1f}x")


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--worker", action="store_true", help=argparse.SUPPRESS)
    args = ap.parse_args(argv)
    worker(args.repeat) if args.worker else run(args.repeat)


if __name__ == "__main__":
    main()
