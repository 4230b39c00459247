import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from shadowmap import dynsys, stats, surrogate


def direct_periodogram(x):
    # O(T^2) DFT oracle
    x = np.asarray(x, float) - np.mean(x)
    T = x.size
    t = np.arange(T)
    return np.array([abs(np.sum(x * np.exp(-2j * np.pi * f * t / T))) ** 2 for f in range(T // 2 + 1)])


def test_periodogram_constant_is_zero():
    assert np.all(surrogate.periodogram(np.full(16, 3.3)) == 0)


def test_periodogram_sinusoid_bin3():
    t = np.arange(64)
    p = surrogate.periodogram(np.sin(2 * np.pi * 3 * t / 64))
    assert np.argmax(p) == 3
    assert np.all(np.delete(p, 3) < 1e-10 * p[3])


@pytest.mark.parametrize("T", [17, 64, 100])
def test_periodogram_matches_direct_dft(T):
    x = np.random.default_rng(T).random(T)
    assert np.allclose(surrogate.periodogram(x), direct_periodogram(x), rtol=1e-10, atol=1e-10)


@pytest.mark.parametrize("T", [64, 65])
def test_parseval_one_sided(T):
    # bins 1..ceil(T/2)-1 stand for a conjugate pair and count twice
    x = np.random.default_rng(1).random(T)
    p = surrogate.periodogram(x)
    w = np.full(p.size, 2.0)
    w[0] = 1.0
    if T % 2 == 0:
        w[-1] = 1.0
    assert np.sum(w * p) / T == pytest.approx(np.sum((x - x.mean()) ** 2), rel=1e-12)


def test_periodogram_too_short():
    with pytest.raises(ValueError):
        surrogate.periodogram([1.0])


def test_iaaft_constant_series():
    x = np.full(32, 0.7)
    assert np.array_equal(surrogate.iaaft(x, rng=0), x)


def test_iaaft_too_short():
    with pytest.raises(ValueError):
        surrogate.iaaft(np.arange(7.0), rng=0)


@given(arrays(np.float64, st.integers(8, 80), elements=st.floats(-1e3, 1e3)), st.integers(0, 2**32 - 1))
@settings(max_examples=30, deadline=None)
def test_iaaft_preserves_multiset(x, seed):
    s = surrogate.iaaft(x, surrogate.SurrogateConfig(max_iterations=50), rng=seed)
    assert np.array_equal(np.sort(s), np.sort(x))


def test_iaaft_with_ties_is_permutation():
    x = np.repeat(np.arange(5.0), 8)
    s = surrogate.iaaft(x, rng=3)
    assert np.array_equal(np.sort(s), x)


def test_iaaft_deterministic():
    x = dynsys.simulate(dynsys.preset("fig1"), 256, rng=0).values[:, 0]
    assert np.array_equal(surrogate.iaaft(x, rng=5), surrogate.iaaft(x, rng=5))
    assert not np.array_equal(surrogate.iaaft(x, rng=5), surrogate.iaaft(x, rng=6))


def test_iaaft_spectrum_closer_than_shuffle():
    x = dynsys.simulate(dynsys.preset("fig1"), 256, rng=0).values[:, 0]
    rng = np.random.default_rng(0)
    err_iaaft = surrogate.spectral_error(x, surrogate.iaaft(x, rng=rng))
    err_shuffle = np.mean([surrogate.spectral_error(x, rng.permutation(x)) for _ in range(20)])
    assert err_iaaft < 0.2 * err_shuffle


def test_spectral_error_against_direct_oracle():
    rng = np.random.default_rng(2)
    a, b = rng.random(50), rng.random(50)
    pa, pb = direct_periodogram(a), direct_periodogram(b)
    oracle = np.sqrt(np.mean((pb - pa) ** 2)) / np.sqrt(np.mean(pa ** 2))
    assert surrogate.spectral_error(a, b) == pytest.approx(oracle, rel=1e-9)
    assert surrogate.spectral_error(a, a) == 0.0


def test_surrogate_set_columns_independent_and_exact():
    v = dynsys.simulate(dynsys.preset("table1-xy"), 300, rng=1).values
    s = surrogate.surrogate_set(v, rng=0)
    assert s.shape == v.shape
    for i in range(2):
        assert np.array_equal(np.sort(s[:, i]), np.sort(v[:, i]))


def test_surrogate_destroys_cross_structure():
    # lag-1 cross-correlation X(t) -> Y(t+1) is strong in the driven pair, gone after surrogating X
    diffs = []
    for seed in range(5):
        v = dynsys.simulate(dynsys.preset("table1-xy"), 500, rng=seed).values
        s = surrogate.iaaft(v[:, 0], rng=seed)
        real = abs(stats.pearson(v[:-1, 0] * (1 - v[:-1, 0]), v[1:, 1] - 3.8 * v[:-1, 1] * (1 - v[:-1, 1])))
        fake = abs(stats.pearson(s[:-1] * (1 - s[:-1]), v[1:, 1] - 3.8 * v[:-1, 1] * (1 - v[:-1, 1])))
        diffs.append(real - fake)
    assert np.mean(diffs) > 0.3


def test_config_validation():
    with pytest.raises(ValueError):
        surrogate.SurrogateConfig(max_iterations=0)
