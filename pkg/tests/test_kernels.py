import numpy as np
import pytest

from shadowmap import _fallback, dynsys, kernels, nsm, shadow

core = kernels.compiled_module()
needs_core = pytest.mark.skipif(core is None, reason="compiled extension not built")


def test_backend_flag_consistent():
    assert kernels.BACKEND in ("compiled", "python")
    assert (kernels.BACKEND == "compiled") == kernels.HAVE_COMPILED


@needs_core
@pytest.mark.parametrize("theiler", [0, 3, 10])
def test_knn_table_compiled_equals_fallback(theiler):
    rng = np.random.default_rng(theiler)
    for trial in range(4):
        x = rng.integers(0, 5, 300).astype(float) if trial % 2 else rng.random(300)
        pts = np.ascontiguousarray(shadow.build_shadow(x, 4).points)
        assert np.array_equal(core.knn_table(pts, 7, theiler), _fallback.knn_table(pts, 7, theiler))


def _run(cfg, preset, seed, compiled):
    src = lambda rng: dynsys.simulate(dynsys.preset(preset), cfg.length, rng=rng).values
    return nsm.train_run(cfg, src, seed, use_compiled=compiled)


@needs_core
@pytest.mark.parametrize("preset", ["table1-xy", "table1-tri-cycle"])
@pytest.mark.parametrize("std, detach", [(True, True), (False, True), (True, False), (False, False)])
def test_train_loop_compiled_equals_fallback(preset, std, detach):
    cfg = nsm.TrainConfig(iterations=30, generations_per_run=2, length=200, standardize=std,
                          detach_prediction=detach)
    m1, e1, l1 = _run(cfg, preset, 7, True)
    m2, e2, l2 = _run(cfg, preset, 7, False)
    assert np.allclose(l1, l2, rtol=1e-10, atol=1e-12)
    # Adam rescales gradients that vanish analytically, so rounding noise shows up at ~1e-9
    assert np.abs(m1.theta - m2.theta).max() < 1e-6
    for key in e1.betas:
        assert e1.betas[key] == pytest.approx(e2.betas[key], abs=1e-6)


@needs_core
def test_compiled_loop_rejects_nan():
    cfg = nsm.TrainConfig(iterations=5, generations_per_run=1, length=200)
    src = lambda rng: dynsys.simulate(dynsys.preset("fig1"), cfg.length, rng=rng).values
    man, tab = nsm.prepare_generations(src, cfg, np.random.default_rng(0))
    model = nsm.init_model(2, cfg, 0)
    model.theta[3] = np.nan
    adam = nsm.new_adam(model)
    with pytest.raises(FloatingPointError):
        core.train_loop(man, tab, np.zeros(5, np.int64), np.zeros((5, cfg.batch_size), np.int64),
                        model.theta, adam.m[0], adam.v[0], 0, model.offsets, model.a_offset,
                        cfg.p, 32, 16, 6, cfg, cfg.lr, 0.9, 0.999, 1e-8, np.zeros(5))


def test_pure_env_selects_fallback():
    import subprocess
    import sys
    out = subprocess.run([sys.executable, "-c", "import shadowmap; print(shadowmap.BACKEND)"],
                         env={**__import__("os").environ, "SHADOWMAP_PURE": "1"},
                         capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "python"
