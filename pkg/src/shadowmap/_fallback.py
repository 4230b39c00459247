"""Pure numpy versions of the compiled kernels in ``_core.pyx``."""
from __future__ import annotations

import numpy as np


def knn_table(points: np.ndarray, k: int, theiler: int) -> np.ndarray:
    """Brute-force k nearest rows for every anchor row, excluding ``|t - a| <= theiler``.

    Squared distances are summed coordinate by coordinate in order, and ties
    go to the smaller index.
    """
    n, p = points.shape
    out = np.empty((n, k), dtype=np.int64)
    t = np.arange(n)
    chunk = max(1, 2_000_000 // max(n, 1))
    for start in range(0, n, chunk):
        a = np.arange(start, min(n, start + chunk))
        d = np.zeros((a.size, n))
        for m in range(p):
            diff = points[a, m][:, None] - points[None, :, m]
            d += diff * diff
        d[np.abs(a[:, None] - t[None, :]) <= theiler] = np.inf
        out[a] = np.argsort(d, axis=1, kind="stable")[:, :k]
    return out


def train_loop(man, tab, gen_idx, anchors, theta, m, v, t, offsets, a_offset,
               p, h1, h2, d, config, lr, beta1, beta2, eps, losses) -> int:
    """Run ``len(gen_idx)`` training steps in place; returns the updated Adam step count."""
    from . import neural, nsm, shadow

    n = man.shape[1]
    model = nsm.model_view(n, config, theta)
    adam = neural.AdamState(m=[m], v=[v], t=int(t), lr=lr, beta1=beta1, beta2=beta2, eps=eps)
    for it in range(gen_idx.size):
        g = int(gen_idx[it])
        mans = [shadow.ShadowManifold(man[g, i], p=p) for i in range(n)]
        batch = shadow.gather(mans, [tab[g, j] for j in range(n)], anchors[it])
        loss, grad = nsm.loss_and_grad(model, batch)
        if not np.isfinite(loss):
            raise FloatingPointError(f"non-finite loss at iteration {it}")
        losses[it] = loss
        neural.adam_step(theta, grad, adam)
    return adam.t
