"""IAAFT surrogates: same amplitude distribution, approximately the same spectrum."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

MIN_LENGTH = 8


@dataclass(frozen=True)
class SurrogateConfig:
    max_iterations: int = 1000
    spectrum_tolerance: float = 1e-8

    def __post_init__(self):
        if self.max_iterations <= 0 or self.spectrum_tolerance <= 0:
            raise ValueError("max_iterations and spectrum_tolerance must be positive")


def periodogram(series) -> np.ndarray:
    """Squared DFT magnitudes of the mean-removed series at bins ``0 .. T // 2``."""
    x = np.asarray(series, dtype=float)
    if x.size < 2:
        raise ValueError("periodogram needs at least 2 samples")
    return np.abs(np.fft.rfft(x - x.mean())) ** 2


def spectral_error(a, b) -> float:
    """Relative RMS difference between the periodograms of ``a`` and ``b``."""
    pa, pb = periodogram(a), periodogram(b)
    ref = np.sqrt(np.mean(pa ** 2))
    if ref == 0.0:
        return 0.0 if np.all(pb == 0.0) else np.inf
    return float(np.sqrt(np.mean((pb - pa) ** 2)) / ref)


def _rank_remap(y: np.ndarray, sorted_values: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    order = np.argsort(y, kind="stable")
    out = np.empty_like(sorted_values)
    out[order] = sorted_values
    return out, order


def iaaft(series, config: SurrogateConfig = SurrogateConfig(), rng=None) -> np.ndarray:
    """Iterative amplitude-adjusted Fourier transform surrogate of ``series``.

    Alternates imposing the original Fourier magnitudes and the original
    value distribution (by rank) until the rank order stops changing, the
    spectral error drops below tolerance or ``max_iterations`` is reached.
    The result is always a permutation of the input values.
    """
    x = np.asarray(series, dtype=float).reshape(-1)
    if x.size < MIN_LENGTH:
        raise ValueError(f"IAAFT needs at least {MIN_LENGTH} samples, got {x.size}")
    rng = np.random.default_rng(rng)
    sorted_values = np.sort(x, kind="stable")
    magnitudes = np.abs(np.fft.rfft(x))
    s = rng.permutation(x)
    prev_order = None
    for _ in range(config.max_iterations):
        spec = np.fft.rfft(s)
        phase = np.exp(1j * np.angle(spec))
        y = np.fft.irfft(magnitudes * phase, n=x.size)
        s, order = _rank_remap(y, sorted_values)
        if prev_order is not None and np.array_equal(order, prev_order):
            break
        prev_order = order
        if spectral_error(x, s) < config.spectrum_tolerance:
            break
    return s


def surrogate_set(values, config: SurrogateConfig = SurrogateConfig(), rng=None) -> np.ndarray:
    """Independent IAAFT surrogate of every column of a ``(T, n)`` array."""
    values = np.asarray(values, dtype=float)
    rng = np.random.default_rng(rng)
    return np.stack([iaaft(values[:, i], config, rng) for i in range(values.shape[1])], axis=1)
