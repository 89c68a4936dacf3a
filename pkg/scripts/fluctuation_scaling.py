#!/usr/bin/env python3
"""Cluster radius fluctuations versus particle count.

Launches n explorers from the origin, measures inner/outer radii against
the disk prediction sqrt(n/pi), and tabulates the max outer error divided
by log n across a sweep of n.
"""

import argparse
import math
from pathlib import Path

from idlalab.estimate import write_csv, write_result_json
from idlalab.idla import fluctuation_run
from idlalab.walk import SeedSpec


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--ns", type=int, nargs="+", default=[1000, 10_000, 100_000])
    ap.add_argument("--runs", type=int, default=50)
    ap.add_argument("--seed", type=int, default=1)
    ap.add_argument("--out", default="fluctuation_scaling")
    ap.add_argument("--quick", action="store_true", help="drop the largest n, 10 runs")
    args = ap.parse_args()
    ns = args.ns[:-1] if args.quick and len(args.ns) > 1 else args.ns
    runs = 10 if args.quick else args.runs

    seed = SeedSpec(args.seed)
    rows = []
    summary = []
    for j, n in enumerate(ns):
        target = math.sqrt(n / math.pi)
        outer_errs, inner_errs = [], []
        for i in range(runs):
            res = fluctuation_run(n, seed.child(1000 * j + i))
            rows.append([i, n, res.inner_radius, res.outer_radius, target,
                         res.outer_radius - target, target - res.inner_radius])
            outer_errs.append(res.outer_radius - target)
            inner_errs.append(target - res.inner_radius)
        ratio = max(outer_errs) / math.log(n)
        summary.append({"n": n, "runs": runs, "max_outer_error": max(outer_errs),
                        "max_inner_error": max(inner_errs),
                        "outer_error_over_log_n": ratio})
        print(f"n={n}: max outer err={max(outer_errs):.2f}  "
              f"max inner err={max(inner_errs):.2f}  ratio/log n={ratio:.3f}")

    out = Path(args.out)
    write_csv(out.with_suffix(".csv"),
              ["run", "n", "inner_radius", "outer_radius", "target_radius",
               "outer_error", "inner_error"], rows)
    write_result_json(out.with_suffix(".json"), {
        "experiment": "fluctuation-scaling", "ns": ns, "runs": runs,
        "master_seed": args.seed, "per_n": summary,
    })
    print(f"wrote {out.with_suffix('.csv')} and {out.with_suffix('.json')}")


if __name__ == "__main__":
    main()
