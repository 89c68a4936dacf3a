"""Batch front-end: JSON-configured experiments emitting CSV + JSON summaries.

Usage:
    idlalab run CONFIG.json [--seed N] [--trials N] [--out PREFIX] [--threads N]
    idlalab sweep CONFIG.json --axis NAME --values 4,6,8 [same overrides]

Exit codes: 0 success, 1 configuration or runtime error, 2 statistical FAIL
(for experiments that embed a pass/fail test, e.g. the cloud domination
check).  Outputs are PREFIX.csv and PREFIX.json; the CSV body is a pure
function of (config, master_seed) regardless of thread count, while wall
clock metadata lives only in the JSON.
"""

from __future__ import annotations

import argparse
import datetime
import json
import math
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import estimate, flashing, idla, oracle, shells
from .lattice import BallSpec, SiteSet, boundary_sites, shell_sites
from .walk import SeedSpec

EXPERIMENTS = ("crossing", "flashing-diagnostics", "idla", "abelian",
               "poisson-cloud", "fluctuations", "fit", "oracle")

_TOP_KEYS = {"experiment", "params", "trials", "master_seed", "out", "threads"}


class ConfigError(ValueError):
    pass


def _check_keys(mapping: dict, allowed: set, where: str) -> None:
    unknown = set(mapping) - allowed
    if unknown:
        raise ConfigError(f"unknown key {sorted(unknown)[0]!r} in {where}")


def _require(params: dict, key: str, where: str):
    if key not in params:
        raise ConfigError(f"missing required key {key!r} in {where}")
    return params[key]


def _site(value, d: int, what: str) -> tuple:
    if not isinstance(value, (list, tuple)) or len(value) != d:
        raise ConfigError(f"{what} must be a list of {d} integers")
    return tuple(int(c) for c in value)


def _v_sites(spec, d: int, r: float, h: float, seed: SeedSpec) -> SiteSet:
    """Obstacle-set specs: full / half / density p / file."""
    shell = shell_sites((0.0,) * d, r, r - h)
    if isinstance(spec, str):
        spec = {"kind": spec}
    _check_keys(spec, {"kind", "p", "path"}, "params.v")
    kind = spec.get("kind", "full")
    if kind == "full":
        return shell
    if kind == "half":
        return SiteSet([s for s in shell if s[0] >= 0], d=d)
    if kind == "density":
        p = float(spec.get("p", 0.5))
        if not 0 < p <= 1:
            raise ConfigError("density v needs 0 < p <= 1")
        rng = seed.child(0x0B5).numpy_rng()
        sites = shell.sorted_sites()
        keep = rng.random(len(sites)) < p
        return SiteSet([s for s, k in zip(sites, keep) if k], d=d)
    if kind == "file":
        return SiteSet.from_text(Path(_require(spec, "path", "params.v")).read_text())
    raise ConfigError(f"unknown v kind {kind!r}")


def _eta(spec, where: str = "params.eta") -> idla.ExplorerConfig:
    if isinstance(spec, dict) and "origin_n" in spec:
        _check_keys(spec, {"origin_n", "d"}, where)
        return idla.ExplorerConfig.at_origin(int(spec["origin_n"]), int(spec.get("d", 2)))
    if isinstance(spec, dict) and "sites" in spec:
        _check_keys(spec, {"sites"}, where)
        counts = {}
        for row in spec["sites"]:
            site, mult = tuple(int(c) for c in row[:-1]), int(row[-1])
            counts[site] = counts.get(site, 0) + mult
        return idla.ExplorerConfig(counts)
    if isinstance(spec, dict) and "file" in spec:
        _check_keys(spec, {"file"}, where)
        return idla.ExplorerConfig.from_text(Path(spec["file"]).read_text())
    raise ConfigError(f"{where} needs one of origin_n / sites / file")


def _ordering(spec) -> idla.OrderingPolicy:
    if spec is None or spec == "lex":
        return idla.OrderingPolicy.by_site_lex()
    if spec == "reversed":
        return idla.OrderingPolicy.by_site_reversed()
    if spec == "random":
        return idla.OrderingPolicy.random()
    if isinstance(spec, dict) and "explicit" in spec:
        return idla.OrderingPolicy.explicit(spec["explicit"])
    raise ConfigError(f"unknown ordering {spec!r}")


def _shard(total: int, threads: int) -> list[tuple[int, int]]:
    threads = max(1, int(threads))
    base = total // threads
    sizes = [base + (1 if i < total % threads else 0) for i in range(threads)]
    out, at = [], 0
    for s in sizes:
        if s:
            out.append((at, s))
        at += s
    return out


# --- experiment implementations -----------------------------------------
# each returns (csv_header, csv_rows, summary_dict, exit_code)


def _run_crossing(params: dict, trials: int, seed: SeedSpec, threads: int):
    _check_keys(params, {"d", "r", "h", "v", "z"}, "params (crossing)")
    d = int(params.get("d", 2))
    r = float(_require(params, "r", "crossing params"))
    h = float(_require(params, "h", "crossing params"))
    if not 0 < h < r / 2:
        raise ConfigError(f"crossing requires 0 < h < r/2, got h={h}, r={r}")
    v = _v_sites(params.get("v", "full"), d, r, h, seed)
    z = _site(params["z"], d, "params.z") if "z" in params else flashing.default_start(r, d)

    def part(offset_count):
        offset, count = offset_count
        return flashing.crossing_mc(r, h, v, z, count,
                                    SeedSpec(seed.master_seed, seed.stream_id + offset))

    shards = _shard(trials, threads)
    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        parts = list(pool.map(part, shards))
    est = parts[0]
    for p in parts[1:]:
        est = est.merge(p)
    header = ["d", "r", "h", "vol_V", "x", "trials", "hits", "cap_count",
              "p_hat", "ci_low", "ci_high", "master_seed"]
    row = [d, r, h, len(v), est.metadata["x"], est.trials, est.hits, est.cap_count,
           est.p_hat, est.ci_low, est.ci_high, seed.master_seed]
    summary = est.to_json_dict("crossing", params, seed)
    return header, [row], summary, 0


def _run_oracle(params: dict, trials: int, seed: SeedSpec, threads: int):
    _check_keys(params, {"d", "r", "h", "v", "z", "instance_file"}, "params (oracle)")
    if "instance_file" in params:
        inst = oracle.AbsorbingInstance.from_text(Path(params["instance_file"]).read_text())
        geom = {"instance_file": params["instance_file"]}
    else:
        d = int(params.get("d", 2))
        r = float(_require(params, "r", "oracle params"))
        h = float(_require(params, "h", "oracle params"))
        v = _v_sites(params.get("v", "full"), d, r, h, seed)
        z = _site(params["z"], d, "params.z") if "z" in params else flashing.default_start(r, d)
        inst = oracle.crossing_instance(r, h, v, z)
        geom = {"d": d, "r": r, "h": h, "vol_V": len(v)}
    sol = oracle.solve_field(inst)
    header = ["probability", "solver", "residual", "n_permitted"]
    rows = [[sol.probability, sol.solver, sol.residual, len(inst.permitted)]]
    summary = {"experiment": "oracle", "params": params, "seed": seed.metadata(),
               "probability": sol.probability, "extra": dict(sol.metadata(), **geom)}
    return header, rows, summary, 0


def _run_fluctuations(params: dict, trials: int, seed: SeedSpec, threads: int):
    _check_keys(params, {"d", "n", "runs"}, "params (fluctuations)")
    d = int(params.get("d", 2))
    n = int(_require(params, "n", "fluctuations params"))
    runs = int(params.get("runs", trials))

    def one(i):
        return idla.fluctuation_run(n, seed.child(i), d)

    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        results = list(pool.map(one, range(runs)))
    target = math.sqrt(n / math.pi) if d == 2 else float("nan")
    header = ["run", "n", "inner_radius", "outer_radius", "target_radius",
              "outer_error", "inner_error"]
    rows = []
    for i, res in enumerate(results):
        rows.append([i, n, res.inner_radius, res.outer_radius, target,
                     res.outer_radius - target, target - res.inner_radius])
    outer_errs = [row[5] for row in rows]
    summary = {"experiment": "fluctuations", "params": params, "seed": seed.metadata(),
               "runs": runs, "n": n,
               "max_outer_error": max(outer_errs), "mean_outer_error": float(np.mean(outer_errs)),
               "max_outer_error_over_log_n": max(outer_errs) / math.log(n) if n > 1 else 0.0}
    return header, rows, summary, 0


def _run_idla(params: dict, trials: int, seed: SeedSpec, threads: int):
    _check_keys(params, {"eta", "r", "builds", "order"}, "params (idla)")
    eta = _eta(_require(params, "eta", "idla params"))
    r = params.get("r")
    builds = int(params.get("builds", trials))
    order = _ordering(params.get("order"))

    def one(i):
        return idla.covers_origin(eta, seed.child(i), r=r, order=order)

    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        hits = sum(pool.map(one, range(builds)))
    est = estimate.McEstimate(builds, int(hits))
    header = ["builds", "covers", "p_hat", "ci_low", "ci_high", "master_seed"]
    rows = [[builds, int(hits), est.p_hat, est.ci_low, est.ci_high, seed.master_seed]]
    summary = est.to_json_dict("idla", params, seed, extra={"total_explorers": eta.total})
    return header, rows, summary, 0


def _run_abelian(params: dict, trials: int, seed: SeedSpec, threads: int):
    _check_keys(params, {"eta", "order_1", "order_2", "fail_below"}, "params (abelian)")
    eta = _eta(_require(params, "eta", "abelian params"))
    rep = idla.abelian_test(eta, _ordering(params.get("order_1")),
                            _ordering(params.get("order_2")), trials, seed)
    fail_below = float(params.get("fail_below", 0.01))
    code = 0 if rep.p_value >= fail_below else 2
    header = ["trials", "n_shapes", "statistic", "p_value", "master_seed"]
    rows = [[rep.trials, rep.n_shapes, rep.statistic, rep.p_value, seed.master_seed]]
    summary = {"experiment": "abelian", "params": params, "seed": seed.metadata(),
               "statistic": rep.statistic, "p_value": rep.p_value,
               "n_shapes": rep.n_shapes, "passed": code == 0}
    return header, rows, summary, code


def _run_cloud(params: dict, trials: int, seed: SeedSpec, threads: int):
    _check_keys(params, {"d", "r", "epsilon", "gamma", "scheme", "runs", "step_cap"},
                "params (poisson-cloud)")
    d = int(params.get("d", 2))
    r = float(_require(params, "r", "cloud params"))
    eps = float(_require(params, "epsilon", "cloud params"))
    gamma = params.get("gamma", 1.0)
    if gamma == "fit":
        gamma = _calibrated_gamma(d, seed)
    scheme = shells.WidthScheme(params.get("scheme", "arrival_count"))
    runs = int(params.get("runs", trials))
    cp = shells.CloudParams(r=r, epsilon=eps, gamma=float(gamma), d=d, width_scheme=scheme,
                            step_cap=int(params.get("step_cap", shells.CLOUD_STEP_CAP)))

    def one(i):
        return shells.run_cloud_experiment(cp, seed.child(i))

    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        traces = list(pool.map(one, range(runs)))
    header = ["run_id", "stage", "width", "count", "stopped_radius"]
    rows = []
    for i, tr in enumerate(traces):
        for k, st in enumerate(tr.stages):
            rows.append([i, k, st.width, tr.counts[k], st.inner_radius])
    report = shells.crossers_domination_test(cp, runs, seed, traces=traces)
    ws = shells.width_sequence_stats(traces, r)
    code = 0 if (scheme is not shells.WidthScheme.ARRIVAL_COUNT or report.passed) else 2
    summary = {"experiment": "poisson-cloud", "params": params, "seed": seed.metadata(),
               "gamma": float(gamma), "lambda0": cp.lambda0, "runs": runs,
               "domination_passed": report.domination.passed,
               "crossing_frequency": report.crossing_frequency,
               "frequency_threshold": report.frequency_threshold,
               "cap_fraction": report.cap_fraction,
               "crossed_inner_freq": ws.crossed_inner_freq,
               "freq_total_gt_r": ws.freq_total_gt_r,
               "freq_head_gt_half_r": ws.freq_head_gt_half_r,
               "inclusion_violations": ws.inclusion_violations,
               "i_star": ws.i_star, "passed": code == 0}
    return header, rows, summary, code


def _calibrated_gamma(d: int, seed: SeedSpec) -> float:
    """Quick built-in calibration: fit the crossing decay on full shells."""
    r, hs = 16.0, (4.0, 5.0, 6.0, 7.0)
    pts = []
    for i, h in enumerate(hs):
        v = shell_sites((0.0,) * d, r, r - h)
        est = flashing.crossing_mc(r, h, v, flashing.default_start(r, d), 100_000,
                                   seed.child(0xF17 + i))
        pts.append((est.metadata["x"], est.p_hat, est.ci))
    fit = flashing.fit_bound(pts)
    return shells.gamma_from_fit(fit.kappa_hat, fit.C_hat, d)


def _run_flashing(params: dict, trials: int, seed: SeedSpec, threads: int):
    _check_keys(params, {"mode", "d", "r", "h", "n", "v", "z", "delta", "samples",
                         "sigma_radius", "beta"}, "params (flashing-diagnostics)")
    mode = params.get("mode", "traces")
    d = int(params.get("d", 2))
    if mode == "traces":
        r = float(_require(params, "r", "flashing params"))
        h = float(_require(params, "h", "flashing params"))
        n = int(_require(params, "n", "flashing params"))
        plan = flashing.FlashingPlan(r, h, n, d)
        v = _v_sites(params.get("v", "full"), d, r, h, seed)
        z = _site(params["z"], d, "params.z") if "z" in params else flashing.default_start(r, d)
        batch = flashing.flashing_traces(z, plan, v, seed, trials)
        header = ["shell", "pass_freq", "pass_freq_conditional", "cumulative_pass"]
        rows = [[k, batch.per_shell_pass[k], batch.per_shell_pass_conditional[k],
                 batch.cumulative_pass[k]] for k in range(n)]
        summary = {"experiment": "flashing-diagnostics", "mode": mode, "params": params,
                   "seed": seed.metadata(), "trials": trials,
                   "crossed": batch.crossed, "violations": batch.violations,
                   "violations_relaxed": batch.violations_relaxed,
                   "capped": batch.capped, "passed_all": batch.passed_all,
                   "settled_hist": {str(k): v for k, v in sorted(batch.settled_hist.items())}}
        return header, rows, summary, 0
    if mode == "uniformity":
        delta = float(_require(params, "delta", "flashing params"))
        samples = int(params.get("samples", trials))
        rep = flashing.flash_uniformity_diagnostic(delta, d, samples, seed)
        header = ["delta", "samples", "interior_sites", "max_min_ratio"]
        rows = [[delta, samples, rep.interior_sites, rep.max_min_ratio]]
        summary = {"experiment": "flashing-diagnostics", "mode": mode, "params": params,
                   "seed": seed.metadata(), "max_min_ratio": rep.max_min_ratio,
                   "interior_sites": rep.interior_sites}
        return header, rows, summary, 0
    if mode == "hitting-density":
        rho = float(_require(params, "sigma_radius", "flashing params"))
        delta = float(_require(params, "delta", "flashing params"))
        samples = int(params.get("samples", trials))
        sigma = boundary_sites(BallSpec((0.0,) * d, rho))
        starts = boundary_sites(BallSpec((0.0,) * d, rho + 2 * delta))
        rep = flashing.hitting_density_diagnostic(sigma, delta, starts, samples, seed)
        header = ["sigma_radius", "delta", "samples_per_start", "n_starts",
                  "kappa_delta", "max_point_prob", "cap_fraction"]
        rows = [[rho, delta, samples, rep.n_starts, rep.kappa_delta,
                 rep.max_point_prob, rep.cap_fraction]]
        summary = {"experiment": "flashing-diagnostics", "mode": mode, "params": params,
                   "seed": seed.metadata(), "kappa_delta": rep.kappa_delta,
                   "max_point_prob": rep.max_point_prob}
        return header, rows, summary, 0
    raise ConfigError(f"unknown flashing mode {mode!r}")


def _run_fit(params: dict, trials: int, seed: SeedSpec, threads: int):
    _check_keys(params, {"points", "csv", "use_ci_upper_for_zero"}, "params (fit)")
    pts = []
    if "points" in params:
        for row in params["points"]:
            x, p = float(row[0]), float(row[1])
            ci = (float(row[2]), float(row[3])) if len(row) >= 4 else None
            pts.append((x, p, ci))
    elif "csv" in params:
        lines = Path(params["csv"]).read_text().strip().splitlines()
        cols = lines[0].split(",")
        ix, ip = cols.index("x"), cols.index("p_hat")
        il = cols.index("ci_low") if "ci_low" in cols else None
        ih = cols.index("ci_high") if "ci_high" in cols else None
        for ln in lines[1:]:
            vals = ln.split(",")
            ci = (float(vals[il]), float(vals[ih])) if il is not None else None
            pts.append((float(vals[ix]), float(vals[ip]), ci))
    else:
        raise ConfigError("fit needs points or csv")
    fit = flashing.fit_bound(pts, bool(params.get("use_ci_upper_for_zero", False)))
    header = ["kappa_hat", "C_hat", "r_squared", "n_points", "excluded"]
    rows = [[fit.kappa_hat, fit.C_hat, fit.r_squared, fit.n_points, fit.excluded]]
    summary = {"experiment": "fit", "params": params, "seed": seed.metadata(),
               "kappa_hat": fit.kappa_hat, "C_hat": fit.C_hat,
               "r_squared": fit.r_squared, "residuals": fit.residuals}
    return header, rows, summary, 0


_RUNNERS = {
    "crossing": _run_crossing,
    "oracle": _run_oracle,
    "fluctuations": _run_fluctuations,
    "idla": _run_idla,
    "abelian": _run_abelian,
    "poisson-cloud": _run_cloud,
    "flashing-diagnostics": _run_flashing,
    "fit": _run_fit,
}


def load_config(path: str, overrides: dict) -> dict:
    try:
        config = json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}")
    except json.JSONDecodeError as e:
        raise ConfigError(f"config is not valid JSON: {e}")
    if not isinstance(config, dict):
        raise ConfigError("config must be a JSON object")
    for key, value in overrides.items():
        if value is not None:
            config[key] = value
    _check_keys(config, _TOP_KEYS, "config")
    if config.get("experiment") not in EXPERIMENTS:
        raise ConfigError(f"experiment must be one of {EXPERIMENTS}, "
                          f"got {config.get('experiment')!r}")
    config.setdefault("params", {})
    config.setdefault("trials", 1000)
    config.setdefault("master_seed", 0)
    config.setdefault("threads", 1)
    config.setdefault("out", "result")
    return config


def run(config: dict) -> int:
    """Execute one experiment; write PREFIX.csv and PREFIX.json."""
    runner = _RUNNERS[config["experiment"]]
    seed = SeedSpec(int(config["master_seed"]))
    header, rows, summary, code = runner(config["params"], int(config["trials"]),
                                         seed, int(config["threads"]))
    out = Path(config["out"])
    out.parent.mkdir(parents=True, exist_ok=True)
    estimate.write_csv(out.with_suffix(".csv"), header, rows)
    summary = dict(summary)
    summary["config"] = config
    summary["generated_at"] = datetime.datetime.now(datetime.timezone.utc).isoformat()
    estimate.write_result_json(out.with_suffix(".json"), summary)
    return code


def sweep(config: dict, axis: str, values: list[float]) -> int:
    """Run the experiment once per axis value; one CSV row per value."""
    if not values:
        raise ConfigError("sweep needs a nonempty value list")
    seed = SeedSpec(int(config["master_seed"]))
    runner = _RUNNERS[config["experiment"]]
    all_rows = []
    header = None
    summaries = []
    worst = 0
    for i, value in enumerate(values):
        params = dict(config["params"])
        params[axis] = value
        h, rows, summary, code = runner(params, int(config["trials"]),
                                        seed.child(i), int(config["threads"]))
        hdr = ([axis] if axis not in h else [f"sweep_{axis}"]) + h
        rows = [[value] + r for r in rows]
        if header is None:
            header = hdr
        elif header != hdr:
            raise ConfigError("sweep rows have inconsistent columns")
        all_rows.extend(rows)
        summaries.append(summary)
        worst = max(worst, code)
    out = Path(config["out"])
    out.parent.mkdir(parents=True, exist_ok=True)
    estimate.write_csv(out.with_suffix(".csv"), header, all_rows)
    estimate.write_result_json(out.with_suffix(".json"), {
        "experiment": config["experiment"], "sweep_axis": axis, "values": values,
        "config": config, "per_value": summaries,
        "generated_at": datetime.datetime.now(datetime.timezone.utc).isoformat(),
    })
    return worst


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="idlalab",
                                     description="internal-DLA Monte Carlo experiments")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("run", "sweep"):
        p = sub.add_parser(name)
        p.add_argument("config", help="JSON experiment configuration")
        p.add_argument("--seed", type=int, dest="master_seed")
        p.add_argument("--trials", type=int)
        p.add_argument("--out")
        p.add_argument("--threads", type=int)
        if name == "sweep":
            p.add_argument("--axis", required=True)
            p.add_argument("--values", required=True,
                           help="comma-separated numeric axis values")
    args = parser.parse_args(argv)
    overrides = {"master_seed": args.master_seed, "trials": args.trials,
                 "out": args.out, "threads": args.threads}
    try:
        config = load_config(args.config, overrides)
        if args.command == "run":
            return run(config)
        values = [float(v) if "." in v or "e" in v.lower() else int(v)
                  for v in args.values.split(",") if v.strip()]
        return sweep(config, args.axis, values)
    except ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except (OSError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
