"""Compare the numba and numpy kernel backends.

Kernel timings run both backends in one process. End-to-end sampling timings
re-run this script in a child process per backend, because the backend is
fixed at import time by ``SCOREUQ_DISABLE_NUMBA``.

    python benchmarks/bench_backends.py --sizes 1000 10000 100000 --samples 2000
"""

import argparse
import json
import os
import subprocess
import sys

from scoreuq import kernels
from scoreuq.experiments import RunSetup, bench_kernels, bench_sampling, benchmark
from scoreuq.schedule import build_linear_schedule, plan_timesteps
from scoreuq.score import GmmPredictor


def sampling_rows(n_samples, M_values, repeats):
    schedule = build_linear_schedule()
    dist = benchmark("gmm2d")
    run = RunSetup(schedule, dist, GmmPredictor(dist, schedule), 2, plan_timesteps(schedule.T, 50))
    return bench_sampling(run, n_samples, M_values, repeats)


def child(args):
    rows = sampling_rows(args.samples, args.M, args.repeats)
    print(json.dumps({"backend": kernels.BACKEND, "rows": rows}))


def parent(args):
    print(f"{'kernel':24s} {'n':>8s} {'numpy s':>10s} {'numba s':>10s} {'speedup':>8s}")
    table = {}
    for r in bench_kernels(args.sizes, args.repeats):
        table.setdefault((r["kernel"], r["n"]), {})[r["backend"]] = r["seconds"]
    for (name, n), t in table.items():
        nb = t.get("numba")
        extra = f"{nb:10.5f} {t['numpy'] / nb:8.2f}" if nb else f"{'n/a':>10s} {'':>8s}"
        print(f"{name:24s} {n:8d} {t['numpy']:10.5f} {extra}")

    print(f"\nsampling {args.samples} samples, 50 DDIM steps, exact mixture predictor")
    for disable in ("1", "0"):
        env = dict(os.environ, SCOREUQ_DISABLE_NUMBA=disable)
        cmd = [sys.executable, __file__, "--child", "--samples", str(args.samples), "--repeats", str(args.repeats),
               "--M", *map(str, args.M)]
        out = json.loads(subprocess.run(cmd, env=env, check=True, capture_output=True, text=True).stdout)
        for r in out["rows"]:
            print(f"  {out['backend']:6s} {r['mode']:15s} M={r['M']:<3d} {r['seconds']:8.3f} s  x{r['overhead']:.2f}")


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--sizes", type=int, nargs="+", default=[1000, 10000, 100000])
    ap.add_argument("--samples", type=int, default=2000)
    ap.add_argument("--M", type=int, nargs="+", default=[5])
    ap.add_argument("--repeats", type=int, default=3)
    ap.add_argument("--child", action="store_true", help=argparse.SUPPRESS)
    args = ap.parse_args()
    child(args) if args.child else parent(args)


if __name__ == "__main__":
    main()
