"""Convergent cross-mapping with simplex projection."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .shadow import ShadowManifold, build_shadow
from .stats import pearson


@dataclass
class CrossMapResult:
    """``skill[direction][q]`` is the mean Pearson rho at ``library_sizes[q]``.

    Direction ``"X->Y"`` is the cross-map that predicts X from the shadow of Y,
    which gains skill when X drives Y.
    """

    library_sizes: np.ndarray
    skill: dict
    converged: dict = field(default_factory=dict)


def simplex_weights(distances: np.ndarray) -> np.ndarray:
    """Exponential weights ``exp(-d_i / d_1)`` normalised per row.

    Rows whose nearest distance is zero put all weight on the exact matches.
    """
    d = np.asarray(distances, dtype=float)
    d1 = d[:, :1]
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        w = np.maximum(np.exp(-d / d1), 1e-300)  # floor keeps far rows normalisable
    exact = (d1[:, 0] == 0.0)
    if exact.any():
        w[exact] = (d[exact] == 0.0).astype(float)
    return w / w.sum(axis=1, keepdims=True)


def _aligned_target(source: ShadowManifold, target_series) -> np.ndarray:
    y = np.asarray(target_series, dtype=float).reshape(-1)
    n = len(source)
    if y.size == n:
        return y
    lag = (source.p - 1) * source.tau
    if y.size != n + lag:
        raise ValueError(f"target length {y.size} matches neither the manifold ({n}) nor its source series ({n + lag})")
    return y[lag:]


def cross_map(source: ShadowManifold, target_series, L: int, rng=None, draws: int = 20,
              exclusion: int = 0) -> float:
    """Mean skill of predicting ``target_series`` from ``source`` with libraries of ``L`` points.

    Each draw takes a random contiguous library, predicts every manifold time
    from its ``p + 1`` nearest library points (skipping points within
    ``exclusion`` steps of the prediction time, itself included) and scores
    Pearson rho against the truth. Delay vectors are matched to the target at
    their latest coordinate.
    """
    pts = source.points
    n = pts.shape[0]
    y = _aligned_target(source, target_series)
    nn = source.p + 1
    if not source.p + 2 < L <= n:
        raise ValueError(f"library size {L} must lie in ({source.p + 2}, {n}]")
    if L - (2 * exclusion + 1) < nn:
        raise ValueError("library too small for the exclusion radius")
    rng = np.random.default_rng(rng)
    times = np.arange(n)
    rhos = []
    for _ in range(draws):
        start = int(rng.integers(0, n - L + 1))
        lib = np.arange(start, start + L)
        d2 = np.zeros((n, L))
        for m in range(pts.shape[1]):
            diff = pts[:, m][:, None] - pts[lib, m][None, :]
            d2 += diff * diff
        d2[np.abs(times[:, None] - lib[None, :]) <= exclusion] = np.inf
        idx = np.argpartition(d2, nn - 1, axis=1)[:, :nn]
        dsel = np.take_along_axis(d2, idx, axis=1)
        order = np.argsort(dsel, axis=1, kind="stable")
        idx = np.take_along_axis(idx, order, axis=1)
        dist = np.sqrt(np.take_along_axis(dsel, order, axis=1))
        w = simplex_weights(dist)
        pred = (w * y[lib][idx]).sum(axis=1)
        try:
            rhos.append(pearson(pred, y))
        except ValueError:
            rhos.append(0.0)
    return float(np.mean(rhos))


def convergence_test(library_sizes, skill, min_gain: float = 0.1, min_final: float = 0.3) -> bool:
    """Skill at the largest library beats the smallest by ``min_gain`` and reaches ``min_final``."""
    L = np.asarray(library_sizes)
    s = np.asarray(skill, dtype=float)
    if L.size < 4:
        raise ValueError("convergence needs at least 4 library sizes")
    lo, hi = int(np.argmin(L)), int(np.argmax(L))
    return bool(s[hi] - s[lo] >= min_gain and s[hi] >= min_final)


def ccm(x, y, library_sizes, p: int = 2, tau: int = 1, rng=None, draws: int = 20,
        names=("X", "Y"), min_gain: float = 0.1, min_final: float = 0.3) -> CrossMapResult:
    """Cross-map both directions over increasing library sizes."""
    L = np.asarray(sorted(int(v) for v in library_sizes))
    if np.any(np.diff(L) <= 0):
        raise ValueError("library sizes must be strictly increasing")
    rng = np.random.default_rng(rng)
    mx, my = build_shadow(x, p, tau, 0), build_shadow(y, p, tau, 1)
    a, b = names
    skill = {
        f"{a}->{b}": np.array([cross_map(my, x, l, rng, draws) for l in L]),
        f"{b}->{a}": np.array([cross_map(mx, y, l, rng, draws) for l in L]),
    }
    res = CrossMapResult(L, skill)
    if L.size >= 4:
        res.converged = {k: convergence_test(L, v, min_gain, min_final) for k, v in skill.items()}
    return res


def write_ccm_csv(path, result: CrossMapResult) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["L", "direction", "rho"])
        for direction, rho in result.skill.items():
            for l, r in zip(result.library_sizes, rho):
                w.writerow([int(l), direction, f"{r:.17g}"])
