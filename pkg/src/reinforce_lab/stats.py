"""Estimation and testing helpers shared by the experiments."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import stats

ALPHA = 0.01
CI_LEVEL = 0.99


class DomainError(ValueError):
    pass


@dataclass(frozen=True)
class MomentEstimate:
    s: float
    mean: float
    stderr: float
    n: int
    ci: tuple

    def to_json(self):
        return {"s": self.s, "mean": self.mean, "stderr": self.stderr, "n": self.n,
                "ci": list(self.ci)}


def _bootstrap_ci(x, boot, rng, level=CI_LEVEL):
    if len(x) < 2 or np.all(x == x[0]):
        m = float(x.mean())
        return (m, m)
    # resample in batches so 10^6-long inputs stay in memory
    batch = max(1, int(2e7 // len(x)))
    res = stats.bootstrap((x,), np.mean, n_resamples=boot, confidence_level=level,
                          method="percentile", random_state=rng, batch=batch,
                          vectorized=True)
    lo, hi = res.confidence_interval
    m = float(x.mean())
    # percentile intervals can miss the plug-in mean by rounding on tiny resamples
    return (min(float(lo), m), max(float(hi), m))


def moment(samples, s: float, boot: int = 999, rng=0) -> MomentEstimate:
    """Plug-in E X^s with a percentile bootstrap CI."""
    x = np.asarray(samples, dtype=np.float64).ravel()
    if x.size == 0:
        raise DomainError("no samples")
    if np.any(x < 0) or np.any(np.isnan(x)):
        raise DomainError("samples must be nonnegative numbers")
    y = np.ones_like(x) if s == 0 else x ** s
    se = float(y.std(ddof=1) / np.sqrt(len(y))) if len(y) > 1 else 0.0
    return MomentEstimate(s, float(y.mean()), se, int(len(y)),
                          _bootstrap_ci(y, boot, np.random.default_rng(rng)))


def weighted_moment(samples, logw, s: float, boot: int = 999, rng=0) -> MomentEstimate:
    """Importance-sampling estimate of E X^s from proposal draws with log
    likelihood ratios ``logw``. NaN samples count as X = 0."""
    x = np.nan_to_num(np.asarray(samples, dtype=np.float64), nan=0.0)
    if np.any(x < 0):
        raise DomainError("samples must be nonnegative")
    y = np.exp(np.asarray(logw, dtype=np.float64)) * (x ** s)
    se = float(y.std(ddof=1) / np.sqrt(len(y)))
    return MomentEstimate(s, float(y.mean()), se, int(len(y)),
                          _bootstrap_ci(y, boot, np.random.default_rng(rng)))


def within_sigma(est: float, se: float, target: float, k: float = 3.0) -> bool:
    return abs(est - target) <= k * se


# --- distribution tests ---------------------------------------------------------------


def ks_test(samples, cdf):
    """One-sample two-sided KS; returns (statistic, p)."""
    x = np.asarray(samples, dtype=np.float64)
    if len(x) < 20:
        raise DomainError("KS needs at least 20 samples")
    r = stats.kstest(x, cdf)
    return float(r.statistic), float(r.pvalue)


def ks_dominance(samples, cdf, larger: bool = True):
    """One-sided KS for stochastic order against ``cdf``.

    larger=True tests the claim "samples are stochastically >= cdf": the
    statistic is sup(F_n - F), which stays near 0 when the claim holds.
    larger=False tests "samples <= cdf" via sup(F - F_n).
    """
    x = np.asarray(samples, dtype=np.float64)
    if len(x) < 20:
        raise DomainError("KS needs at least 20 samples")
    r = stats.kstest(x, cdf, alternative="greater" if larger else "less")
    return float(r.statistic), float(r.pvalue)


@dataclass
class Chi2Result:
    statistic: float
    p: float
    dof: int
    pooled: list = field(default_factory=list)


def _as_counts(h):
    if isinstance(h, dict):
        return {k: int(v) for k, v in h.items()}
    keys, counts = np.unique(np.asarray(h), return_counts=True)
    return dict(zip(keys.tolist(), counts.tolist()))


def chi2_paths(hist_a, hist_b, min_expected: float = 5.0) -> Chi2Result:
    """Two-sample homogeneity test on categorical histograms.

    Inputs are dicts {category: count} or raw arrays of category codes.
    Cells with expected count below ``min_expected`` in either row are pooled
    into one cell; the pooled categories are reported.
    """
    a, b = _as_counts(hist_a), _as_counts(hist_b)
    cats = sorted(set(a) | set(b))
    ca = np.array([a.get(c, 0) for c in cats], dtype=np.float64)
    cb = np.array([b.get(c, 0) for c in cats], dtype=np.float64)
    na, nb = ca.sum(), cb.sum()
    if na == 0 or nb == 0:
        raise DomainError("empty histogram")
    tot = ca + cb
    small = np.minimum(tot * na, tot * nb) / (na + nb) < min_expected
    pooled = [cats[i] for i in np.flatnonzero(small)]
    if small.any():
        ca = np.append(ca[~small], ca[small].sum())
        cb = np.append(cb[~small], cb[small].sum())
    table = np.vstack([ca, cb])
    table = table[:, table.sum(axis=0) > 0]
    if table.shape[1] < 2:
        return Chi2Result(0.0, 1.0, 0, pooled)
    stat, p, dof, _ = stats.chi2_contingency(table, correction=False)
    return Chi2Result(float(stat), float(p), int(dof), pooled)


def chi2_independence(x, y) -> Chi2Result:
    """Independence of two paired categorical samples."""
    x, y = np.asarray(x), np.asarray(y)
    _, xi = np.unique(x, return_inverse=True)
    _, yi = np.unique(y, return_inverse=True)
    table = np.zeros((xi.max() + 1, yi.max() + 1))
    np.add.at(table, (xi, yi), 1)
    if min(table.shape) < 2:
        return Chi2Result(0.0, 1.0, 0)
    stat, p, dof, _ = stats.chi2_contingency(table, correction=False)
    return Chi2Result(float(stat), float(p), int(dof))


def binomial_upper(k, n, level: float = CI_LEVEL):
    """One-sided Clopper-Pearson upper bound on a binomial proportion."""
    k, n = np.asarray(k), np.asarray(n)
    return np.where(k >= n, 1.0, stats.beta.ppf(level, k + 1, np.maximum(n - k, 1)))


def binomial_lower(k, n, level: float = CI_LEVEL):
    k, n = np.asarray(k), np.asarray(n)
    return np.where(k <= 0, 0.0, stats.beta.ppf(1 - level, np.maximum(k, 1), n - k + 1))


# --- fits -----------------------------------------------------------------------------------


@dataclass
class Fit:
    slope: float
    stderr: float
    intercept: float
    excluded: list

    def __iter__(self):
        return iter((self.slope, self.stderr))


def _fit(x, y, logx: bool) -> Fit:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    ok = (y > 0) & np.isfinite(y) & ((x > 0) if logx else np.isfinite(x))
    excluded = np.flatnonzero(~ok).tolist()
    if ok.sum() < 3:
        raise DomainError("need at least 3 positive points")
    xx = np.log(x[ok]) if logx else x[ok]
    r = stats.linregress(xx, np.log(y[ok]))
    return Fit(float(r.slope), float(r.stderr), float(r.intercept), excluded)


def tail_fit(Ms, survival) -> Fit:
    """Slope of log survival against log M."""
    return _fit(Ms, survival, True)


def decay_fit(distances, moments) -> Fit:
    """Slope of log moment against distance, i.e. log of the per-step ratio."""
    return _fit(distances, moments, False)


# --- gates ---------------------------------------------------------------------------------


def bonferroni(alpha: float, m: int) -> float:
    return alpha / max(1, m)


@dataclass
class GateResult:
    passed: bool
    attempts: int
    details: list


def retry_gate(check, seeds) -> GateResult:
    """Run ``check(seed) -> (passed, detail)``; a failure is retried once
    with the next seed and the gate fails only on two rejections."""
    seeds = list(seeds)
    details = []
    for k, seed in enumerate(seeds[:2]):
        ok, detail = check(seed)
        details.append(detail)
        if ok:
            return GateResult(True, k + 1, details)
    return GateResult(False, len(details), details)
