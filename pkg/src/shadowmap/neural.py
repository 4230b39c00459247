"""Small dense networks with hand-written backprop, an L2 loss and Adam.

Everything runs in float64. Parameters may live as views into one flat
buffer so the optimiser can update them with a handful of vector ops.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np


@dataclass
class DenseNet:
    """Affine layers with ReLU between them and a linear output layer."""

    layers: list  # [(W, b)], W has shape (d_in, d_out)
    activation: str = "relu"

    @property
    def dims(self) -> list[int]:
        return [self.layers[0][0].shape[0]] + [W.shape[1] for W, _ in self.layers]

    def parameters(self) -> list[np.ndarray]:
        return [a for W, b in self.layers for a in (W, b)]


def param_count(dims) -> int:
    return sum(a * b + b for a, b in zip(dims[:-1], dims[1:]))


def init_dense(dims, rng, buffer: np.ndarray | None = None) -> DenseNet:
    """He-uniform weights and zero biases.

    With ``buffer`` given (length :func:`param_count`), layers are views into it.
    """
    dims = [int(d) for d in dims]
    if len(dims) < 2:
        raise ValueError("need at least input and output width")
    if buffer is None:
        buffer = np.empty(param_count(dims))
    if buffer.size != param_count(dims):
        raise ValueError("buffer size does not match dims")
    layers, pos = [], 0
    for a, b in zip(dims[:-1], dims[1:]):
        W = buffer[pos:pos + a * b].reshape(a, b)
        pos += a * b
        bias = buffer[pos:pos + b]
        pos += b
        lim = np.sqrt(6.0 / a)
        W[...] = rng.uniform(-lim, lim, size=(a, b))
        bias[...] = 0.0
        layers.append((W, bias))
    return DenseNet(layers)


def view_dense(dims, buffer: np.ndarray) -> DenseNet:
    """Wrap an existing flat parameter buffer without touching its contents."""
    layers, pos = [], 0
    for a, b in zip(dims[:-1], dims[1:]):
        layers.append((buffer[pos:pos + a * b].reshape(a, b), buffer[pos + a * b:pos + a * b + b]))
        pos += a * b + b
    return DenseNet(layers)


def forward(net: DenseNet, x: np.ndarray):
    """Return ``(output, cache)``; the cache holds every layer's input."""
    x = np.asarray(x, dtype=float)
    if x.ndim != 2 or x.shape[1] != net.dims[0]:
        raise ValueError(f"input shape {x.shape} does not match input width {net.dims[0]}")
    cache = [x]
    last = len(net.layers) - 1
    for li, (W, b) in enumerate(net.layers):
        x = x @ W + b
        if li < last:
            np.maximum(x, 0.0, out=x)
        cache.append(x)
    return x, cache


def backward(net: DenseNet, cache, output_gradient: np.ndarray):
    """Backpropagate ``output_gradient``.

    Returns ``(grads, input_gradient)`` with ``grads`` a list of ``(dW, db)``
    aligned with ``net.layers``.
    """
    if len(cache) != len(net.layers) + 1 or cache[-1].shape != np.shape(output_gradient):
        raise ValueError("cache does not match this network or gradient shape")
    g = np.asarray(output_gradient, dtype=float)
    grads = [None] * len(net.layers)
    for li in range(len(net.layers) - 1, -1, -1):
        if li < len(net.layers) - 1:
            g = g * (cache[li + 1] > 0.0)
        W, _ = net.layers[li]
        grads[li] = (cache[li].T @ g, g.sum(axis=0))
        g = g @ W.T
    return grads, g


def l2_loss(prediction, target):
    """Mean squared error and its gradient with respect to ``prediction``."""
    prediction = np.asarray(prediction, dtype=float)
    target = np.asarray(target, dtype=float)
    if prediction.shape != target.shape:
        raise ValueError(f"shape mismatch {prediction.shape} vs {target.shape}")
    diff = prediction - target
    n = diff.size
    return float((diff * diff).sum() / n), 2.0 * diff / n


@dataclass
class AdamState:
    m: list
    v: list
    t: int = 0
    lr: float = 3e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_params(cls, params, **hyper) -> "AdamState":
        params = _as_list(params)
        return cls(m=[np.zeros_like(p) for p in params], v=[np.zeros_like(p) for p in params], **hyper)


def _as_list(x):
    return [x] if isinstance(x, np.ndarray) else list(x)


def adam_step(params, grads, state: AdamState):
    """In-place Adam update with bias correction; returns ``(params, state)``."""
    plist, glist = _as_list(params), _as_list(grads)
    if len(plist) != len(glist) or len(plist) != len(state.m):
        raise ValueError("params, grads and state must align")
    for g in glist:
        if not np.all(np.isfinite(g)):
            raise FloatingPointError("non-finite gradient")
    state.t += 1
    c1 = 1.0 - state.beta1 ** state.t
    c2 = 1.0 - state.beta2 ** state.t
    for p, g, m, v in zip(plist, glist, state.m, state.v):
        if p.shape != g.shape:
            raise ValueError(f"gradient shape {g.shape} does not match parameter {p.shape}")
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        p -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return params, state


# --- checkpoint container ------------------------------------------------------

MAGIC = b"NSM1"


def save_checkpoint(path, tensors: dict) -> None:
    """Write named float64 tensors: magic, then per tensor
    ``u32 name_len, name, u32 rank, u32 dims..., f64 data`` (little-endian)."""
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        for name, arr in tensors.items():
            arr = np.array(arr, dtype="<f8", order="C")  # keeps 0-d shape
            raw = name.encode("utf-8")
            fh.write(struct.pack("<I", len(raw)))
            fh.write(raw)
            fh.write(struct.pack("<I", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(arr.tobytes())


def load_checkpoint(path) -> dict:
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:4] != MAGIC:
        raise ValueError(f"{path}: not an NSM1 checkpoint")
    out, pos = {}, 4
    while pos < len(data):
        (nlen,) = struct.unpack_from("<I", data, pos)
        pos += 4
        name = data[pos:pos + nlen].decode("utf-8")
        pos += nlen
        (rank,) = struct.unpack_from("<I", data, pos)
        pos += 4
        shape = struct.unpack_from(f"<{rank}I", data, pos)
        pos += 4 * rank
        count = int(np.prod(shape)) if rank else 1
        arr = np.frombuffer(data, dtype="<f8", count=count, offset=pos).reshape(shape).copy()
        pos += 8 * count
        out[name] = arr
    return out
