"""Correlation utilities and the one-sided two-sample Kolmogorov-Smirnov test."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np


def pearson(a, b) -> float:
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape or a.ndim != 1:
        raise ValueError("pearson needs two 1-d arrays of equal length")
    if a.size < 2:
        raise ValueError("pearson needs at least 2 samples")
    da, db = a - a.mean(), b - b.mean()
    sa, sb = np.sqrt(np.dot(da, da)), np.sqrt(np.dot(db, db))
    if sa == 0.0 or sb == 0.0:
        raise ValueError("zero variance")
    return float(np.clip(np.dot(da, db) / (sa * sb), -1.0, 1.0))


def windowed_correlation(x, y, window: int, stride: int = 1):
    """Pearson r on ``[t, t + window)`` for ``t = 0, stride, ...``.

    Returns ``(starts, r)``; windows with zero variance give ``nan``.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape:
        raise ValueError("series must have equal length")
    if not 2 <= window <= x.size:
        raise ValueError("window must lie in [2, len(series)]")
    if stride < 1:
        raise ValueError("stride must be >= 1")
    starts = np.arange(0, x.size - window + 1, stride)
    r = np.empty(starts.size)
    for q, t in enumerate(starts):
        try:
            r[q] = pearson(x[t:t + window], y[t:t + window])
        except ValueError:
            r[q] = np.nan
    return starts, r


def write_windowed_csv(path, starts, r) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t_start", "r"])
        for t, v in zip(starts, r):
            w.writerow([int(t), "" if np.isnan(v) else f"{v:.17g}"])


@dataclass(frozen=True)
class KsResult:
    statistic: float
    p_value: float
    n1: int
    n2: int


def _ks_statistic(real: np.ndarray, null: np.ndarray) -> float:
    z = np.concatenate([real, null])
    f_real = np.searchsorted(np.sort(real), z, side="right") / real.size
    f_null = np.searchsorted(np.sort(null), z, side="right") / null.size
    return float(max(0.0, np.max(f_null - f_real)))


def ks_asymptotic_p(d: float, n1: int, n2: int) -> float:
    m = n1 * n2 / (n1 + n2)
    return float(min(1.0, max(0.0, math.exp(-2.0 * m * d * d))))


def ks_one_sided(real_sample, null_sample, exact: bool = False, n_permutations: int = 20000,
                 rng=None) -> KsResult:
    """Test whether ``real_sample`` is stochastically larger than ``null_sample``.

    ``D = sup_z (F_null(z) - F_real(z))``. The p-value is the asymptotic
    ``exp(-2 m D^2)`` with ``m = n1 n2 / (n1 + n2)``, or a permutation estimate
    when ``exact`` is set.
    """
    real = np.asarray(real_sample, dtype=float).reshape(-1)
    null = np.asarray(null_sample, dtype=float).reshape(-1)
    if real.size == 0 or null.size == 0:
        raise ValueError("both samples must be non-empty")
    d = _ks_statistic(real, null)
    if exact:
        p = ks_permutation_p(real, null, d, n_permutations, rng)
    else:
        p = ks_asymptotic_p(d, real.size, null.size)
    return KsResult(d, p, real.size, null.size)


def ks_permutation_p(real, null, d: float, n_permutations: int = 20000, rng=None) -> float:
    """Monte Carlo permutation p-value of the one-sided statistic ``d``."""
    rng = np.random.default_rng(rng)
    pooled = np.concatenate([real, null])
    n1 = len(real)
    hits = 0
    for _ in range(n_permutations):
        perm = rng.permutation(pooled)
        if _ks_statistic(perm[:n1], perm[n1:]) >= d - 1e-12:
            hits += 1
    return (hits + 1) / (n_permutations + 1)


def decide_edge(beta_real, beta_null, alpha: float = 0.01, exact: bool = False, rng=None):
    """KS rule: the edge is present when ``p < alpha``. Returns ``(present, KsResult)``."""
    res = ks_one_sided(beta_real, beta_null, exact=exact, rng=rng)
    return res.p_value < alpha, res


def decide_edge_threshold(beta_real, threshold: float = 0.25) -> bool:
    """Threshold rule: the edge is present when the mean beta exceeds ``threshold``."""
    beta_real = np.asarray(beta_real, dtype=float)
    if beta_real.size == 0:
        raise ValueError("empty beta sample")
    return bool(beta_real.mean() > threshold)
