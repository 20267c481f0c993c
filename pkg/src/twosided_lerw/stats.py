"""Small statistics helpers: estimates, total variation, regression fits."""
from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Mapping

import numpy as np
from scipy import stats as sps


@dataclass(frozen=True)
class Estimate:
    """Monte Carlo scalar with provenance."""

    mean: float
    stderr: float
    n_samples: int
    seed: int | None = None
    ess: float | None = None
    flags: tuple = field(default_factory=tuple)

    def ci(self, level: float = 0.95) -> tuple[float, float]:
        z = sps.norm.ppf(0.5 + level / 2)
        return self.mean - z * self.stderr, self.mean + z * self.stderr

    def within(self, value: float, k: float = 3.0) -> bool:
        return abs(self.mean - value) <= k * self.stderr


def mean_estimate(x: Iterable[float], seed: int | None = None) -> Estimate:
    x = np.asarray(list(x) if not isinstance(x, np.ndarray) else x, dtype=float)
    n = len(x)
    se = float(x.std(ddof=1) / math.sqrt(n)) if n > 1 else math.inf
    return Estimate(float(x.mean()), se, n, seed)


def ratio_estimate(num: np.ndarray, den: np.ndarray, seed: int | None = None) -> Estimate:
    """Delta-method estimate of E[num] / E[den] from paired samples."""
    num = np.asarray(num, dtype=float)
    den = np.asarray(den, dtype=float)
    n = len(num)
    mden = den.mean()
    r = num.mean() / mden
    resid = num - r * den
    se = float(resid.std(ddof=1) / (math.sqrt(n) * mden))
    ess = float(den.sum() ** 2 / (den ** 2).sum()) if (den ** 2).sum() > 0 else 0.0
    flags = ("low-ess",) if ess < 100 else ()
    return Estimate(float(r), se, n, seed, ess, flags)


def empirical_law(samples: Iterable) -> dict:
    c = Counter(samples)
    n = sum(c.values())
    return {k: v / n for k, v in c.items()}


def tv_distance(p: Mapping, q: Mapping) -> float:
    keys = set(p) | set(q)
    return 0.5 * sum(abs(p.get(k, 0.0) - q.get(k, 0.0)) for k in keys)


@dataclass(frozen=True)
class LinearFit:
    slope: float
    intercept: float
    slope_se: float
    slope_ci: tuple[float, float]
    residuals: np.ndarray


def ols_fit(x, y, robust: bool = True, level: float = 0.95) -> LinearFit:
    """Least squares y = a + b x with HC3 (or classical) standard error for b."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    n = len(x)
    if n < 3:
        raise ValueError("need at least 3 points")
    X = np.column_stack([np.ones(n), x])
    beta, *_ = np.linalg.lstsq(X, y, rcond=None)
    res = y - X @ beta
    XtX_inv = np.linalg.inv(X.T @ X)
    if robust:
        h = np.einsum("ij,jk,ik->i", X, XtX_inv, X)
        w = res ** 2 / np.maximum(1 - h, 1e-12) ** 2
        cov = XtX_inv @ (X.T * w) @ X @ XtX_inv
    else:
        s2 = res @ res / (n - 2)
        cov = s2 * XtX_inv
    se = float(math.sqrt(max(cov[1, 1], 0.0)))
    t = sps.t.ppf(0.5 + level / 2, n - 2)
    b = float(beta[1])
    return LinearFit(b, float(beta[0]), se, (b - t * se, b + t * se), res)


def weighted_fit(x, y, sigma, level: float = 0.95) -> LinearFit:
    """Weighted least squares with known per-point standard deviations."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    w = 1.0 / np.asarray(sigma, dtype=float) ** 2
    X = np.column_stack([np.ones(len(x)), x])
    A = X.T @ (X * w[:, None])
    beta = np.linalg.solve(A, X.T @ (w * y))
    cov = np.linalg.inv(A)
    res = y - X @ beta
    chi2 = float(res @ (w * res)) / max(len(x) - 2, 1)
    se = math.sqrt(cov[1, 1] * max(chi2, 1.0))
    z = sps.norm.ppf(0.5 + level / 2)
    b = float(beta[1])
    return LinearFit(b, float(beta[0]), se, (b - z * se, b + z * se), res)


def exp_tail_fit(samples, t_min: float = 0.0, level: float = 0.95,
                 censored=None) -> Estimate:
    """MLE rate of an exponential tail for samples above t_min.

    Integer data are treated as geometric: the rate is -log(1 - p) with p
    the MLE success probability. Censored values (if a boolean mask is
    given) contribute survival only. Returns an Estimate of the rate with
    the 'inconclusive' flag if fewer than 10 uncensored tail points exist.
    """
    x = np.asarray(samples, dtype=float)
    cens = np.zeros(len(x), bool) if censored is None else np.asarray(censored, bool)
    keep = x >= t_min
    x, cens = x[keep] - t_min, cens[keep]
    events = int((~cens).sum())
    total = float(x.sum())
    if events < 10 or total <= 0:
        return Estimate(float("nan"), float("nan"), len(x), flags=("inconclusive",))
    if np.all(np.equal(np.mod(x, 1), 0)):
        # geometric on {0,1,...}: p = events / (events + sum x)
        p = events / (events + total)
        rate = -math.log1p(-p)
        se_p = math.sqrt(p * p * (1 - p) / events)
        se = se_p / (1 - p)
    else:
        rate = events / total
        se = rate / math.sqrt(events)
    return Estimate(rate, se, len(x))
