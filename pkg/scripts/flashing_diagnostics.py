#!/usr/bin/env python3
"""Flashing-explorer diagnostics: traces, flash uniformity, hitting density.

Runs trace batches over a few obstacle-set shapes (reporting per-shell
passage frequencies and the pathwise domination counters), the flash-site
uniformity sweep, and the sphere-hitting density constant.
"""

import argparse
from pathlib import Path

from idlalab.estimate import write_result_json
from idlalab.flashing import (
    FlashingPlan,
    default_start,
    flash_uniformity_diagnostic,
    flashing_traces,
    hitting_density_diagnostic,
)
from idlalab.lattice import BallSpec, SiteSet, boundary_sites
from idlalab.walk import SeedSpec


def trace_settings(seed: SeedSpec):
    full = FlashingPlan(16, 6, 2)
    half_plan = FlashingPlan(16, 6, 3)
    half = SiteSet([s for s in half_plan.shell() if s[0] >= 0], d=2)
    dens_plan = FlashingPlan(32, 12, 4)
    rng = seed.child(0xD3).numpy_rng()
    sites = dens_plan.shell().sorted_sites()
    dens = SiteSet([s for s, keep in zip(sites, rng.random(len(sites)) < 0.5) if keep], d=2)
    return [("full-shell r16 h6 n2", full, full.shell()),
            ("half-shell r16 h6 n3", half_plan, half),
            ("half-density r32 h12 n4", dens_plan, dens)]


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--trials", type=int, default=30_000)
    ap.add_argument("--samples", type=int, default=1_000_000)
    ap.add_argument("--seed", type=int, default=1)
    ap.add_argument("--out", default="flashing_diagnostics")
    ap.add_argument("--quick", action="store_true")
    args = ap.parse_args()
    trials = max(1000, args.trials // 30) if args.quick else args.trials
    samples = max(10_000, args.samples // 100) if args.quick else args.samples
    seed = SeedSpec(args.seed)

    report = {"experiment": "flashing-diagnostics", "master_seed": args.seed,
              "trials": trials, "samples": samples, "traces": [], "uniformity": [],
              "hitting_density": []}

    for i, (name, plan, v) in enumerate(trace_settings(seed)):
        batch = flashing_traces(default_start(plan.r), plan, v, seed.child(10 + i), trials)
        print(f"{name}: crossed={batch.crossed} violations={batch.violations} "
              f"(relaxed {batch.violations_relaxed}) capped={batch.capped}")
        print(f"  per-shell pass: {[round(p, 4) for p in batch.per_shell_pass]}")
        report["traces"].append({
            "setting": name, "trials": trials, "crossed": batch.crossed,
            "violations": batch.violations,
            "violations_relaxed": batch.violations_relaxed,
            "capped": batch.capped, "per_shell_pass": batch.per_shell_pass,
            "cumulative_pass": batch.cumulative_pass,
        })

    for delta in (2.0, 4.0, 8.0):
        rep = flash_uniformity_diagnostic(delta, 2, samples, seed.child(100))
        print(f"uniformity delta={delta:g}: max/min ratio={rep.max_min_ratio:.4f} "
              f"over {rep.interior_sites} interior sites")
        report["uniformity"].append({"delta": delta, "ratio": rep.max_min_ratio,
                                     "interior_sites": rep.interior_sites})

    for delta in (4.0, 8.0):
        sigma = boundary_sites(BallSpec((0.0, 0.0), 15.0))
        start = (0, int(15 + 2 * delta))
        rep = hitting_density_diagnostic(sigma, delta, SiteSet([start]),
                                         max(5000, samples // 50), seed.child(200))
        print(f"hitting density delta={delta:g}: kappa_delta={rep.kappa_delta:.3f} "
              f"max point prob={rep.max_point_prob:.5f}")
        report["hitting_density"].append({"delta": delta, "kappa_delta": rep.kappa_delta,
                                          "max_point_prob": rep.max_point_prob})

    out = Path(args.out)
    write_result_json(out.with_suffix(".json"), report)
    print(f"wrote {out.with_suffix('.json')}")


if __name__ == "__main__":
    main()
