"""Metrics, the repeated-run protocol, and significance testing.

Prediction error is summarized per run as MAE (days), MAPE (ratio) and MSE
(days squared); experiments repeat 100 times over reshuffled splits and the
95% interval is the (2.5th, 97.5th) percentile pair of the run distribution.
"Pairwise t-test" is Welch's unequal-variance test (the compared groups have
unequal sizes and variances); multiple comparisons use Tukey's HSD with
adjusted p-values obtained by numerical integration of the studentized range
distribution.
"""

import functools
import math
import os
import pickle
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import special as sp

from losxfer.errors import ValidationError
from losxfer.seeds import derive_seed

STAR_STRONG = 0.001
STAR_WEAK = 0.05


@dataclass(frozen=True)
class MetricReport:
    mae: float
    mape: float
    mse: float
    n: int

    def to_record(self) -> dict:
        return {"mae": self.mae, "mape": self.mape, "mse": self.mse, "n": self.n}


def compute_metrics(pred, target) -> MetricReport:
    """MAE = mean |y - yhat|, MAPE = mean |(y - yhat)/y|, MSE = mean (y - yhat)^2."""
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape or pred.ndim != 1:
        raise ValidationError(f"pred {pred.shape} and target {target.shape} must be equal-length vectors")
    if (target == 0).any():
        raise ValidationError("MAPE is undefined for zero targets")
    err = target - pred
    return MetricReport(
        mae=float(np.mean(np.abs(err))),
        mape=float(np.mean(np.abs(err / target))),
        mse=float(np.mean(err * err)),
        n=len(target),
    )


@dataclass
class RunRecord:
    seed: int
    metrics: MetricReport
    epochs_to_converge: int
    best_epoch: int
    stagnated: bool
    wall_seconds: float
    cpu_seconds: float

    def value(self, name: str) -> float:
        if name == "epochs":
            return float(self.epochs_to_converge)
        return float(getattr(self.metrics, name))

    def to_record(self) -> dict:
        return {
            "seed": self.seed,
            "metrics": self.metrics.to_record(),
            "epochs_to_converge": self.epochs_to_converge,
            "best_epoch": self.best_epoch,
            "stagnated": self.stagnated,
            "wall_seconds": self.wall_seconds,
            "cpu_seconds": self.cpu_seconds,
        }

    @classmethod
    def from_record(cls, rec: dict) -> "RunRecord":
        rec = dict(rec)
        rec["metrics"] = MetricReport(**rec["metrics"])
        return cls(**rec)


def percentile_ci(samples, lo: float = 2.5, hi: float = 97.5):
    samples = np.asarray(samples, dtype=np.float64)
    return float(np.percentile(samples, lo)), float(np.percentile(samples, hi))


@dataclass
class RunDistribution:
    """Per-experiment collection of repeated-run results."""

    experiment: str
    records: list = field(default_factory=list)
    failures: list = field(default_factory=list)

    METRICS = ("mae", "mape", "mse", "epochs")

    @property
    def n_runs(self) -> int:
        return len(self.records)

    @property
    def stagnation_count(self) -> int:
        return sum(1 for r in self.records if r.stagnated)

    def samples(self, name: str) -> np.ndarray:
        return np.asarray([r.value(name) for r in self.records])

    def ci(self, name: str):
        return percentile_ci(self.samples(name))

    def median(self, name: str) -> float:
        return float(np.median(self.samples(name)))

    def summary(self) -> dict:
        out = {"experiment": self.experiment, "n_runs": self.n_runs,
               "stagnation_count": self.stagnation_count,
               "failures": len(self.failures)}
        for name in self.METRICS:
            lo, hi = self.ci(name)
            out[name] = {"p2.5": lo, "median": self.median(name), "p97.5": hi}
        out["total_wall_seconds"] = float(sum(r.wall_seconds for r in self.records))
        out["total_cpu_seconds"] = float(sum(r.cpu_seconds for r in self.records))
        return out

    def long_rows(self):
        """Plot-ready long format: (experiment, run, metric, value)."""
        rows = []
        for k, rec in enumerate(self.records):
            for name in self.METRICS:
                rows.append((self.experiment, k, name, rec.value(name)))
        return rows


def _thread_budget(threads) -> int:
    if threads is not None:
        return max(1, int(threads))
    env = os.environ.get("XFER_THREADS", "").strip()
    return max(1, int(env)) if env else 1


def repeated_runs(experiment, n_runs: int = 100, base_seed: int = 0,
                  label: str = "experiment", threads=None) -> RunDistribution:
    """Run `experiment(seed) -> RunRecord` n_runs times with derived seeds.

    Each run reshuffles its own splits via its seed. Failed runs are
    recorded with a warning and the distribution completes with the rest.
    With XFER_THREADS > 1 (or threads=...) runs fan out to worker processes;
    the experiment callable must then be picklable. Results are identical
    either way because seeds derive from (base_seed, run index).
    """
    dist = RunDistribution(experiment=label)
    seeds = [derive_seed(base_seed, "run", k) for k in range(n_runs)]
    budget = _thread_budget(threads)
    if budget > 1:
        try:
            pickle.dumps(experiment)
        except Exception:
            warnings.warn("experiment is not picklable; running sequentially")
            budget = 1
    if budget > 1:
        with ProcessPoolExecutor(max_workers=budget) as pool:
            futures = {k: pool.submit(experiment, s) for k, s in enumerate(seeds)}
            for k in range(n_runs):
                try:
                    dist.records.append(futures[k].result())
                except Exception as exc:  # noqa: BLE001 - run failures are data
                    warnings.warn(f"run {k} failed: {exc}")
                    dist.failures.append(f"run {k}: {exc}")
    else:
        for k, s in enumerate(seeds):
            try:
                dist.records.append(experiment(s))
            except Exception as exc:  # noqa: BLE001 - run failures are data
                warnings.warn(f"run {k} failed: {exc}")
                dist.failures.append(f"run {k}: {exc}")
    return dist


def star_code(p: float) -> str:
    if p < STAR_STRONG:
        return "**"
    if p < STAR_WEAK:
        return "*"
    return ""


@dataclass(frozen=True)
class SignificanceResult:
    group_a: str
    group_b: str
    statistic: float
    p_value: float
    stars: str
    mean_diff: float = None
    ci_lower: float = None
    ci_upper: float = None
    reject: bool = None

    def to_record(self) -> dict:
        return {
            "group_a": self.group_a, "group_b": self.group_b,
            "statistic": self.statistic, "p_value": self.p_value,
            "stars": self.stars, "mean_diff": self.mean_diff,
            "ci_lower": self.ci_lower, "ci_upper": self.ci_upper,
            "reject": self.reject,
        }


def welch_t_test(sample_a, sample_b, label_a: str = "a", label_b: str = "b") -> SignificanceResult:
    """Two-sample unequal-variance t-test with Welch-Satterthwaite df."""
    a = np.asarray(sample_a, dtype=np.float64)
    b = np.asarray(sample_b, dtype=np.float64)
    if len(a) < 2 or len(b) < 2:
        raise ValidationError("each sample needs at least 2 values")
    va, vb = a.var(ddof=1), b.var(ddof=1)
    if va == 0 and vb == 0:
        if a.mean() == b.mean():
            return SignificanceResult(label_a, label_b, 0.0, 1.0, "")
        raise ValidationError("degenerate zero-variance samples with unequal means")
    sa, sb = va / len(a), vb / len(b)
    t = (a.mean() - b.mean()) / math.sqrt(sa + sb)
    df = (sa + sb) ** 2 / (sa**2 / (len(a) - 1) + sb**2 / (len(b) - 1))
    p = 2.0 * sp.stdtr(df, -abs(t))
    return SignificanceResult(label_a, label_b, float(t), float(p), star_code(p))


# --- studentized range distribution -----------------------------------------
# F(q; k, df) = E_u[ P(range of k std normals <= q * u) ] with u = s/sigma,
# u^2 ~ chi2_df / df. Both integrals use fixed Gauss-Legendre panels; the
# outer support comes from chi-square quantiles. Node tables are cached:
# Tukey's quantile bisection re-evaluates the CDF dozens of times per call.

_Z_NODES = 240
_U_NODES = 160


@functools.lru_cache(maxsize=8)
def _z_panel(n_nodes: int = _Z_NODES):
    zn, zw = np.polynomial.legendre.leggauss(n_nodes)
    z_lo, z_hi = -12.0, 12.0
    nodes = 0.5 * (z_hi - z_lo) * zn + 0.5 * (z_hi + z_lo)
    weights = 0.5 * (z_hi - z_lo) * zw
    dens = np.exp(-0.5 * nodes * nodes) / math.sqrt(2 * math.pi)
    return nodes, weights * dens, sp.ndtr(nodes)


@functools.lru_cache(maxsize=128)
def _u_panel(df: float, n_nodes: int = _U_NODES):
    """Quadrature for u = s/sigma with u^2 ~ chi2_df/df: returns (u, w * f(u))."""
    u_lo = math.sqrt(sp.chdtri(df, 1.0 - 1e-14) / df)
    u_hi = math.sqrt(sp.chdtri(df, 1e-14) / df)
    un, uw = np.polynomial.legendre.leggauss(n_nodes)
    u = 0.5 * (u_hi - u_lo) * un + 0.5 * (u_hi + u_lo)
    w = 0.5 * (u_hi - u_lo) * uw
    log_c = (df / 2.0) * math.log(df) - math.lgamma(df / 2.0) - (df / 2.0 - 1.0) * math.log(2.0)
    dens = np.exp(log_c + (df - 1.0) * np.log(u) - df * u * u / 2.0)
    return u, w * dens


def _range_cdf(w, k: int):
    """P(range of k iid standard normals <= w), vectorized over w."""
    nodes, wdens, ndtr_nodes = _z_panel()
    w = np.atleast_1d(w)
    inner = ndtr_nodes[None, :] - sp.ndtr(nodes[None, :] - w[:, None])
    np.clip(inner, 0.0, 1.0, out=inner)
    return k * np.sum(wdens[None, :] * inner ** (k - 1), axis=1)


def studentized_range_cdf(q: float, k: int, df: float) -> float:
    if q <= 0:
        return 0.0
    u, wdens = _u_panel(float(df))
    rc = _range_cdf(q * u, k)
    return float(min(1.0, max(0.0, np.sum(wdens * rc))))


def studentized_range_sf(q: float, k: int, df: float) -> float:
    return 1.0 - studentized_range_cdf(q, k, df)


def studentized_range_crit(alpha: float, k: int, df: float) -> float:
    """Upper-alpha quantile by bisection on the CDF."""
    target = 1.0 - alpha
    lo, hi = 1e-6, 10.0
    while studentized_range_cdf(hi, k, df) < target:
        hi *= 2.0
        if hi > 1e4:
            raise ValidationError("studentized range quantile out of range")
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        if studentized_range_cdf(mid, k, df) < target:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def tukey_hsd(groups: dict, alpha: float = 0.05):
    """Tukey-Kramer pairwise comparisons with simultaneous CIs.

    groups: label -> samples (each >= 2 values). Pairs are emitted in sorted
    label order with mean_diff = mean(group_b) - mean(group_a). Output rows
    mirror (group pair, mean diff, adjusted p, CI bounds, reject flag).
    """
    if len(groups) < 2:
        raise ValidationError("tukey_hsd needs at least two groups")
    labels = sorted(groups)
    data = {lab: np.asarray(groups[lab], dtype=np.float64) for lab in labels}
    for lab, arr in data.items():
        if len(arr) < 2:
            raise ValidationError(f"group {lab!r} needs at least 2 values")
    k = len(labels)
    n_total = sum(len(a) for a in data.values())
    df = n_total - k
    mse = sum(((a - a.mean()) ** 2).sum() for a in data.values()) / df
    if mse <= 0:
        raise ValidationError("zero within-group variance; Tukey HSD undefined")
    q_crit = studentized_range_crit(alpha, k, df)

    results = []
    for i in range(k):
        for j in range(i + 1, k):
            a, b = data[labels[i]], data[labels[j]]
            diff = b.mean() - a.mean()
            se = math.sqrt(mse / 2.0 * (1.0 / len(a) + 1.0 / len(b)))
            q = abs(diff) / se
            p_adj = studentized_range_sf(q, k, df)
            half = q_crit * se
            results.append(SignificanceResult(
                group_a=labels[i], group_b=labels[j],
                statistic=float(q), p_value=float(p_adj),
                stars=star_code(p_adj),
                mean_diff=float(diff),
                ci_lower=float(diff - half), ci_upper=float(diff + half),
                reject=bool(p_adj < alpha),
            ))
    return results


def cpu_time_report(distributions) -> list:
    """Aggregate wall/CPU hours per experiment label."""
    rows = []
    for dist in distributions:
        wall = sum(r.wall_seconds for r in dist.records)
        cpu = sum(r.cpu_seconds for r in dist.records)
        rows.append({
            "experiment": dist.experiment,
            "runs": dist.n_runs,
            "wall_hours": wall / 3600.0,
            "cpu_hours": cpu / 3600.0,
        })
    return rows
