"""Delay-coordinate embeddings and temporal nearest neighbours."""
from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from . import kernels


@dataclass(frozen=True)
class ShadowManifold:
    """Forward delay vectors ``(x_t, x_{t+tau}, ..., x_{t+(p-1)tau})``, one per row."""

    points: np.ndarray
    p: int
    tau: int = 1
    var_id: int = 0

    @property
    def origin_times(self) -> np.ndarray:
        return np.arange(self.points.shape[0])

    def __len__(self):
        return self.points.shape[0]


@dataclass(frozen=True)
class NeighborSet:
    anchors: np.ndarray
    indices: np.ndarray
    k: int
    theiler: int


@dataclass(frozen=True)
class NeighborhoodBatch:
    """``tensors[(i, j)]`` is manifold ``i`` gathered at neighbours found on manifold ``j``.

    Each tensor has shape ``(batch, p, k)``.
    """

    anchors: np.ndarray
    tensors: dict

    @property
    def n_vars(self) -> int:
        return int(round(np.sqrt(len(self.tensors))))

    def stacked(self, i: int) -> np.ndarray:
        """Manifold ``i`` neighbourhoods for every index source, shape ``(n, batch, k, p)``."""
        return np.stack([self.tensors[i, j].transpose(0, 2, 1) for j in range(self.n_vars)])


def min_length(p: int, tau: int) -> int:
    return (p - 1) * tau + 1


def build_shadow(series, p: int, tau: int = 1, var_id: int = 0) -> ShadowManifold:
    x = np.asarray(series, dtype=float).reshape(-1)
    if p < 1 or tau < 1:
        raise ValueError("p and tau must be >= 1")
    need = min_length(p, tau)
    if x.size < need:
        raise ValueError(f"series of length {x.size} too short: p={p}, tau={tau} needs at least {need}")
    n = x.size - (p - 1) * tau
    points = np.stack([x[m * tau: m * tau + n] for m in range(p)], axis=1)
    points.setflags(write=False)
    return ShadowManifold(points=points, p=p, tau=tau, var_id=var_id)


def _check_eligible(n_rows: int, k: int, theiler: int) -> None:
    if k < 1:
        raise ValueError("k must be >= 1")
    if theiler < 0:
        raise ValueError("theiler must be >= 0")
    if n_rows <= k + 2 * theiler + 1:
        raise ValueError(
            f"manifold has {n_rows} rows; k={k} with theiler={theiler} needs more than {k + 2 * theiler + 1}")


def knn(manifold: ShadowManifold, anchor: int, k: int, theiler: int = 0) -> np.ndarray:
    """Indices of the ``k`` rows nearest to row ``anchor`` outside the Theiler window.

    Ties are broken by the smaller time index.
    """
    pts = manifold.points
    n = pts.shape[0]
    _check_eligible(n, k, theiler)
    if not 0 <= anchor < n:
        raise IndexError(f"anchor {anchor} outside [0, {n})")
    d = ((pts - pts[anchor]) ** 2).sum(axis=1)
    d[max(0, anchor - theiler): anchor + theiler + 1] = np.inf
    order = np.argsort(d, kind="stable")[:k]
    if not np.all(np.isfinite(d[order])):
        raise ValueError("not enough eligible neighbours outside the exclusion window")
    return order


def knn_table(manifold: ShadowManifold, k: int, theiler: int = 0) -> np.ndarray:
    """Neighbour indices for every row as anchor, shape ``(N, k)``."""
    _check_eligible(len(manifold), k, theiler)
    return kernels.knn_table(np.ascontiguousarray(manifold.points), k, theiler)


def gather(manifolds, tables, anchors) -> NeighborhoodBatch:
    n = len(manifolds)
    tensors = {}
    for j in range(n):
        idx = tables[j][anchors]
        for i in range(n):
            tensors[i, j] = manifolds[i].points[idx].transpose(0, 2, 1)
    return NeighborhoodBatch(anchors=np.asarray(anchors), tensors=tensors)


def _validate_family(manifolds) -> None:
    first = manifolds[0]
    for m in manifolds[1:]:
        if (m.p, m.tau, len(m)) != (first.p, first.tau, len(first)):
            raise ValueError("manifolds must share p, tau and length")


def sample_batch(manifolds, k: int, theiler: int, batch_size: int, rng, tables=None) -> NeighborhoodBatch:
    """Draw ``batch_size`` anchors and gather every ordered pair of neighbourhoods.

    ``tables`` may hold precomputed :func:`knn_table` results to avoid recomputation.
    """
    _validate_family(manifolds)
    rng = np.random.default_rng(rng)
    n_rows = len(manifolds[0])
    anchors = rng.integers(0, n_rows, size=batch_size)
    if tables is None:
        tables = []
        for m in manifolds:
            t = np.zeros((n_rows, k), dtype=np.intp)
            for a in np.unique(anchors):
                t[a] = knn(m, a, k, theiler)
            tables.append(t)
    return gather(manifolds, tables, anchors)


def write_manifold_csv(path, manifold: ShadowManifold) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["time"] + [f"lag{m}" for m in range(manifold.p)])
        for t, row in zip(manifold.origin_times, manifold.points):
            w.writerow([int(t)] + [f"{v:.17g}" for v in row])
