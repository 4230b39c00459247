"""Compare the compiled kernels against the numpy fallback.

Usage: python benchmarks/bench_kernels.py [--steps 200] [--repeat 3]
"""
import argparse
import time

import numpy as np

from shadowmap import _fallback, dynsys, kernels, nsm, shadow


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def bench_knn(core, repeat):
    x = dynsys.simulate(dynsys.preset("fig1"), 1000, rng=0).values[:, 0]
    pts = np.ascontiguousarray(shadow.build_shadow(x, 10).points)
    rows = [("knn_table N=991 p=10 k=10", best_of(lambda: _fallback.knn_table(pts, 10, 10), repeat), None)]
    if core is not None:
        rows[0] = rows[0][:2] + (best_of(lambda: core.knn_table(pts, 10, 10), repeat),)
    return rows


def bench_train(core, preset, steps, repeat):
    cfg = nsm.TrainConfig(iterations=steps, generations_per_run=2)
    src = lambda rng: dynsys.simulate(dynsys.preset(preset), cfg.length, rng=rng).values
    man, tab = nsm.prepare_generations(src, cfg, np.random.default_rng(0))
    G, n, N, _ = man.shape
    rng = np.random.default_rng(1)
    gen_idx = rng.integers(0, G, steps).astype(np.int64)
    anchors = rng.integers(0, N, (steps, cfg.batch_size)).astype(np.int64)

    def run(impl):
        model = nsm.init_model(n, cfg, 0)
        adam = nsm.new_adam(model)
        impl(man, tab, gen_idx, anchors, model.theta, adam.m[0], adam.v[0], 0, model.offsets,
             model.a_offset, cfg.p, cfg.hidden[0], cfg.hidden[1], cfg.embed_dim, cfg,
             cfg.lr, adam.beta1, adam.beta2, adam.eps, np.zeros(steps))

    label = f"train_loop n={n} per step"
    py = best_of(lambda: run(_fallback.train_loop), repeat) / steps
    cy = best_of(lambda: run(core.train_loop), repeat) / steps if core is not None else None
    return [(label, py, cy)]


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--steps", type=int, default=200)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()
    core = kernels.compiled_module()
    rows = bench_knn(core, args.repeat)
    for preset in ("table1-xy", "table1-tri-cycle"):
        rows += bench_train(core, preset, args.steps, args.repeat)
    print(f"{'kernel':34s} {'numpy':>12s} {'compiled':>12s} {'speedup':>8s}")
    for label, py, cy in rows:
        if cy is None:
            print(f"{label:34s} {py * 1e3:10.3f}ms {'n/a':>12s}")
        else:
            print(f"{label:34s} {py * 1e3:10.3f}ms {cy * 1e3:10.3f}ms {py / cy:7.1f}x")


if __name__ == "__main__":
    main()
