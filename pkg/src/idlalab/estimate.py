"""Statistics harness: confidence intervals, distribution tests, persistence.

Every estimate carries its raw counts and the master seed, so any result
file can be recomputed or extended; merging estimates over trial batches is
exact (pooled counts), which is what makes trial-sharded parallel runs
independent of the shard layout.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import stats


def wilson_ci(hits: int, trials: int, confidence: float = 0.95) -> tuple[float, float]:
    """Wilson score interval for a binomial proportion."""
    if trials < 1:
        raise ValueError("wilson_ci needs at least one trial")
    if not 0 <= hits <= trials:
        raise ValueError(f"hits={hits} outside [0, trials={trials}]")
    z = float(stats.norm.ppf(0.5 + confidence / 2.0))
    p = hits / trials
    z2 = z * z
    denom = 1.0 + z2 / trials
    center = (p + z2 / (2 * trials)) / denom
    half = (z / denom) * math.sqrt(p * (1 - p) / trials + z2 / (4 * trials * trials))
    # exact endpoints at the boundary counts (the formula only misses by rounding)
    low = 0.0 if hits == 0 else max(0.0, center - half)
    high = 1.0 if hits == trials else min(1.0, center + half)
    return low, high


def wilson_sigma_band(hits: int, trials: int, n_sigma: float = 3.0) -> tuple[float, float]:
    """Wilson interval at z = n_sigma (e.g. the '3 sigma' agreement band)."""
    conf = 2.0 * stats.norm.cdf(n_sigma) - 1.0
    return wilson_ci(hits, trials, confidence=conf)


@dataclass
class McEstimate:
    """A Monte Carlo proportion with its raw counts and Wilson 95% CI.

    `trials` counts every attempted trial; `cap_count` of them hit the step
    cap and are excluded from the proportion (never folded into either
    side), so p_hat = hits / (trials - cap_count).
    """

    trials: int
    hits: int
    cap_count: int = 0
    confidence: float = 0.95
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.hits < 0 or self.cap_count < 0:
            raise ValueError("counts must be nonnegative")
        if self.hits + self.cap_count > self.trials:
            raise ValueError("hits + cap_count exceed trials")

    @property
    def effective_trials(self) -> int:
        return self.trials - self.cap_count

    @property
    def p_hat(self) -> float:
        return self.hits / self.effective_trials if self.effective_trials else float("nan")

    @property
    def ci(self) -> tuple[float, float]:
        if self.effective_trials == 0:
            return (0.0, 1.0)
        return wilson_ci(self.hits, self.effective_trials, self.confidence)

    @property
    def ci_low(self) -> float:
        return self.ci[0]

    @property
    def ci_high(self) -> float:
        return self.ci[1]

    def sigma(self) -> float:
        """Normal-approximation standard error of p_hat."""
        n = self.effective_trials
        if n == 0:
            return float("nan")
        p = self.p_hat
        return math.sqrt(max(p * (1 - p), 1.0 / n) / n)

    def merge(self, other: "McEstimate") -> "McEstimate":
        """Pooled-count merge; equals the estimate computed from pooled trials."""
        if self.confidence != other.confidence:
            raise ValueError("cannot merge estimates at different confidence levels")
        meta = dict(self.metadata)
        meta.update(other.metadata)
        return McEstimate(self.trials + other.trials, self.hits + other.hits,
                          self.cap_count + other.cap_count, self.confidence, meta)

    def to_json_dict(self, experiment: str, params: dict, seed, extra: dict | None = None) -> dict:
        return {
            "experiment": experiment,
            "params": params,
            "seed": seed.metadata() if hasattr(seed, "metadata") else seed,
            "trials": self.trials,
            "hits": self.hits,
            "cap_count": self.cap_count,
            "p_hat": self.p_hat,
            "ci": list(self.ci),
            "extra": dict(self.metadata, **(extra or {})),
        }


@dataclass
class FitResult:
    """Exponential-decay fit log p = log C - kappa * x."""

    kappa_hat: float
    C_hat: float
    residuals: list[float]
    r_squared: float
    n_points: int
    excluded: int = 0

    def __post_init__(self):
        if self.C_hat <= 0:
            raise ValueError("C_hat must be positive")


def fit_log_linear(xs, log_ps) -> FitResult:
    """Least-squares line through (x, log p); returns decay rate and prefactor."""
    xs = np.asarray(xs, dtype=float)
    ys = np.asarray(log_ps, dtype=float)
    if len(xs) < 3:
        raise ValueError("need at least 3 points to fit")
    slope, intercept = np.polyfit(xs, ys, 1)
    pred = slope * xs + intercept
    resid = ys - pred
    ss_res = float(np.sum(resid**2))
    ss_tot = float(np.sum((ys - ys.mean()) ** 2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    return FitResult(kappa_hat=float(-slope), C_hat=float(math.exp(intercept)),
                     residuals=[float(r) for r in resid], r_squared=r2, n_points=len(xs))


def chi_square_homogeneity(counts_a: dict, counts_b: dict) -> tuple[float, float]:
    """Two-sample chi-square test that both count maps share one distribution.

    Requires every expected cell count to be >= 5 (raises otherwise, the
    caller should gather more trials or merge categories).
    """
    if not counts_a or not counts_b:
        raise ValueError("both samples must be nonempty")
    cats = sorted(set(counts_a) | set(counts_b))
    a = np.array([counts_a.get(c, 0) for c in cats], dtype=float)
    b = np.array([counts_b.get(c, 0) for c in cats], dtype=float)
    na, nb = a.sum(), b.sum()
    if na == 0 or nb == 0:
        raise ValueError("both samples must contain observations")
    pooled = (a + b) / (na + nb)
    exp_a, exp_b = na * pooled, nb * pooled
    if (exp_a < 5).any() or (exp_b < 5).any():
        worst = min(exp_a.min(), exp_b.min())
        raise ValueError(
            f"chi-square validity violated: smallest expected cell {worst:.2f} < 5; "
            "gather more trials")
    stat = float(np.sum((a - exp_a) ** 2 / exp_a) + np.sum((b - exp_b) ** 2 / exp_b))
    dof = len(cats) - 1
    p = float(stats.chi2.sf(stat, dof)) if dof > 0 else 1.0
    return stat, p


@dataclass
class DominationReport:
    passed: bool
    lam: float
    n_runs: int
    worst_margin: float
    points: list[dict] = field(repr=False, default_factory=list)


def survival_domination(empirical: list[int] | np.ndarray, theoretical_lambda: float,
                        n_runs: int | None = None, n_sigma: float = 3.0,
                        t_max: int | None = None) -> DominationReport:
    """Check the sample's survival function sits under a Poisson's, pointwise.

    PASS iff for every t in {0, ..., t_max}:
        P_hat(X > t)  <=  P(Poisson(lambda) > t) + n_sigma * binomial slack.
    """
    emp = np.asarray(empirical, dtype=np.int64).ravel()
    if n_runs is None:
        n_runs = len(emp)
    if n_runs < 1:
        raise ValueError("need at least one run")
    if t_max is None:
        t_max = max(int(math.ceil(theoretical_lambda)),
                    int(emp.max()) if len(emp) else 0)
    points = []
    worst = -float("inf")
    passed = True
    for t in range(t_max + 1):
        s_emp = float(np.mean(emp > t)) if len(emp) else 0.0
        s_theo = float(stats.poisson.sf(t, theoretical_lambda))
        slack = n_sigma * math.sqrt(max(s_theo * (1 - s_theo), 1.0 / n_runs) / n_runs)
        margin = s_emp - (s_theo + slack)
        worst = max(worst, margin)
        ok = margin <= 0
        passed &= ok
        points.append({"t": t, "empirical": s_emp, "theoretical": s_theo,
                       "slack": slack, "ok": ok})
    return DominationReport(passed, theoretical_lambda, n_runs, worst, points)


# --- persistence ------------------------------------------------------


def write_result_json(path, payload: dict) -> None:
    with open(path, "w") as f:
        json.dump(payload, f, indent=2, sort_keys=True, default=_json_default)
        f.write("\n")


def _json_default(obj):
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"not JSON serializable: {type(obj)!r}")


def write_csv(path, header: list[str], rows: list[list]) -> None:
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(_csv_cell(v) for v in row))
    with open(path, "w") as f:
        f.write("\n".join(lines) + "\n")


def _csv_cell(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)
