import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from shadowmap import _fallback, kernels, shadow


def brute_knn(points, anchor, k, theiler):
    # independent oracle: full sort on (distance, index)
    n = len(points)
    keyed = []
    for t in range(n):
        if abs(t - anchor) <= theiler:
            continue
        d = 0.0
        for a, b in zip(points[anchor], points[t]):
            d += (a - b) * (a - b)
        keyed.append((d, t))
    keyed.sort()
    return [t for _, t in keyed[:k]]


def test_build_shadow_layout():
    m = shadow.build_shadow([0.1, 0.2, 0.3, 0.4, 0.5], p=3, tau=1)
    assert m.points.tolist() == [[0.1, 0.2, 0.3], [0.2, 0.3, 0.4], [0.3, 0.4, 0.5]]


def test_build_shadow_p1_is_column():
    x = np.arange(7.0)
    assert np.array_equal(shadow.build_shadow(x, 1).points, x[:, None])


def test_build_shadow_too_short_names_minimum():
    with pytest.raises(ValueError, match="at least 5"):
        shadow.build_shadow([1.0, 2.0, 3.0, 4.0], p=3, tau=2)


@given(st.integers(10, 60), st.integers(1, 5), st.integers(1, 3))
@settings(max_examples=40, deadline=None)
def test_build_shadow_indices_and_round_trip(T, p, tau):
    x = np.random.default_rng(T).random(T)
    if T < (p - 1) * tau + 1:
        return
    m = shadow.build_shadow(x, p, tau)
    assert len(m) == T - (p - 1) * tau
    t = np.arange(len(m))
    for c in range(p):
        assert np.array_equal(m.points[:, c], x[t + c * tau])
    rebuilt = np.concatenate([m.points[:, 0], x[T - (p - 1) * tau:]])
    assert np.array_equal(rebuilt, x)


def test_knn_scalar_example():
    m = shadow.build_shadow(np.arange(10.0), 1)
    assert sorted(shadow.knn(m, 0, 2, 0).tolist()) == [1, 2]


def test_knn_exact_duplicate_first():
    x = np.random.default_rng(0).random(40)
    x[30:33] = x[5:8]
    m = shadow.build_shadow(x, 3)
    assert shadow.knn(m, 5, 3, theiler=3)[0] == 30


def test_knn_no_eligible_rows():
    m = shadow.build_shadow(np.arange(10.0), 1)
    with pytest.raises(ValueError):
        shadow.knn(m, 0, 2, theiler=len(m))


def test_knn_respects_theiler_and_excludes_anchor():
    x = np.random.default_rng(1).random(300)
    m = shadow.build_shadow(x, 4)
    for a in (0, 50, 296):
        idx = shadow.knn(m, a, 10, theiler=4)
        assert np.all(np.abs(idx - a) > 4)


@pytest.mark.parametrize("impl", ["active", "fallback"])
def test_knn_table_matches_brute_force(impl):
    fn = kernels.knn_table if impl == "active" else _fallback.knn_table
    rng = np.random.default_rng(9)
    for trial in range(5):
        x = rng.integers(0, 4, size=60).astype(float) if trial % 2 else rng.random(60)
        m = shadow.build_shadow(x, 3)
        table = fn(np.ascontiguousarray(m.points), 5, trial)
        for a in range(len(m)):
            assert table[a].tolist() == brute_knn(m.points, a, 5, trial)


def test_sample_batch_pairs_and_gather_consistency(rng):
    x = rng.random((200, 3))
    mans = [shadow.build_shadow(x[:, i], 4, var_id=i) for i in range(3)]
    batch = shadow.sample_batch(mans, k=5, theiler=4, batch_size=7, rng=1)
    assert len(batch.tensors) == 9
    for (i, j), t in batch.tensors.items():
        assert t.shape == (7, 4, 5)
    probe = np.random.default_rng(2)
    for _ in range(100):
        i, j = probe.integers(0, 3, 2)
        b, q = probe.integers(0, 7), probe.integers(0, 5)
        nbr = shadow.knn(mans[j], batch.anchors[b], 5, 4)[q]
        assert np.array_equal(batch.tensors[i, j][b, :, q], mans[i].points[nbr])


def test_sample_batch_identical_series(rng):
    x = rng.random(100)
    mans = [shadow.build_shadow(x, 3, var_id=0), shadow.build_shadow(x, 3, var_id=1)]
    batch = shadow.sample_batch(mans, 4, 3, 5, rng)
    assert len(batch.tensors) == 4
    assert np.array_equal(batch.tensors[0, 0], batch.tensors[1, 0])


def test_sample_batch_precomputed_tables_agree(rng):
    x = rng.random((150, 2))
    mans = [shadow.build_shadow(x[:, i], 3) for i in range(2)]
    tables = [shadow.knn_table(m, 4, 3) for m in mans]
    a = shadow.sample_batch(mans, 4, 3, 6, 11)
    b = shadow.sample_batch(mans, 4, 3, 6, 11, tables=tables)
    for key in a.tensors:
        assert np.array_equal(a.tensors[key], b.tensors[key])


def test_sample_batch_rejects_mismatched_manifolds(rng):
    mans = [shadow.build_shadow(rng.random(100), 3), shadow.build_shadow(rng.random(100), 4)]
    with pytest.raises(ValueError):
        shadow.sample_batch(mans, 4, 3, 5, rng)


def test_manifold_csv(tmp_path):
    m = shadow.build_shadow(np.arange(6.0), 3)
    path = tmp_path / "m.csv"
    shadow.write_manifold_csv(path, m)
    lines = path.read_text().splitlines()
    assert lines[0] == "time,lag0,lag1,lag2"
    assert lines[1] == "0,0,1,2"
    assert len(lines) == 5
