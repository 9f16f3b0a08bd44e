"""Time the compiled kernels against the numpy fallback.

    python benchmarks/bench_kernels.py --N 200 --repeat 5
"""

import argparse
import json
import sys
import timeit

import numpy as np

from umtree import kernels
from umtree.mmspace import random_ultrametric
from umtree.moran import draw_events


def cases(N, m, reps, seed):
    rng = np.random.default_rng(seed)
    founder = random_ultrametric(N, rng, scale=0.5)
    ev = draw_events(N, 1.0, 0.0, 1.0, rng)
    times = ev.times
    donors = ev.donors.astype(np.int_)
    recipients = ev.recipients.astype(np.int_)
    grid = np.linspace(0.0, 1.0, 101)
    mats = np.ascontiguousarray(np.stack([random_ultrametric(m, rng).dist for _ in range(reps)]))
    b0 = np.ascontiguousarray(-0.5 * founder.dist)

    def apply_events(mod):
        mod.apply_events(b0.copy(), np.arange(N, dtype=np.int_), times, donors, recipients, np.zeros(0))

    def exp_path(mod):
        outs = [np.zeros(len(grid)) for _ in range(3)]
        mod.exp_functional_path(founder.dist, times, donors, recipients, 1.0, grid, *outs)

    def drops(mod):
        mod.lineage_drop_times(N, times, donors, recipients, 1.0, np.full(N - 1, np.inf))

    def lengths(mod):
        mod.subtree_lengths(mats, np.zeros((reps, m)))

    return {
        f"apply_events (N={N}, {len(times)} events)": apply_events,
        f"exp_functional_path (N={N})": exp_path,
        f"lineage_drop_times (N={N})": drops,
        f"subtree_lengths ({reps} x m={m})": lengths,
    }


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--N", type=int, default=200)
    ap.add_argument("--m", type=int, default=8)
    ap.add_argument("--reps", type=int, default=20_000)
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--json", action="store_true", help="print results as JSON")
    args = ap.parse_args(argv)

    if "cython" not in kernels.BACKENDS:
        print("compiled extension not built; only the fallback is available", file=sys.stderr)
    rows = []
    for name, fn in cases(args.N, args.m, args.reps, args.seed).items():
        row = {"kernel": name}
        for backend, mod in kernels.BACKENDS.items():
            row[backend] = min(timeit.repeat(lambda: fn(mod), number=1, repeat=args.repeat))
        if "cython" in row:
            row["speedup"] = row["python"] / row["cython"]
        rows.append(row)

    if args.json:
        print(json.dumps(rows, indent=1))
        return 0
    print(f"{'kernel':48s} {'python [s]':>11s} {'cython [s]':>11s} {'speedup':>8s}")
    for r in rows:
        cy = f"{r['cython']:11.4f}" if "cython" in r else f"{'-':>11s}"
        sp = f"{r['speedup']:7.1f}x" if "speedup" in r else f"{'-':>8s}"
        print(f"{r['kernel']:48s} {r['python']:11.4f} {cy} {sp}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
