"""Command-line entry point: ``shadowmap <subcommand> ...``."""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__, ccm, dynsys, kernels, nsm, pipeline, shadow, stats, surrogate, vision

log = logging.getLogger("shadowmap")


def _seed(value):
    env = os.environ.get(pipeline.SEED_ENV)
    return int(env) if env else value


def _load_series(path, columns=None) -> np.ndarray:
    data = dynsys.read_csv(path)
    if columns is not None:
        data = data[:, columns]
    return data


def _system(args) -> dynsys.SystemSpec:
    if args.spec:
        return dynsys.SystemSpec.from_dict(json.loads(Path(args.spec).read_text()))
    return dynsys.preset(args.preset)


def cmd_simulate(args) -> int:
    if args.lorenz:
        params = dynsys.LorenzParams(dt=args.dt, length=args.length)
        traj = dynsys.lorenz(params, rng=_seed(args.seed))
    else:
        traj = dynsys.simulate(_system(args), args.length, args.burn_in, _seed(args.seed))
    dynsys.write_csv(args.out, traj.values)
    print(f"wrote {len(traj)} rows x {traj.n_vars} variables to {args.out}")
    return 0


def cmd_render(args) -> int:
    values = _load_series(args.series)
    layout = vision.SceneLayout.load(args.layout) if args.layout else vision.SceneLayout.default(values.shape[1])
    frames = vision.render(values, layout)
    vision.write_frames(args.out, frames)
    layout.save(Path(args.out) / "layout.json")
    print(f"wrote {len(frames)} frames to {args.out}")
    return 0


def cmd_track(args) -> int:
    layout_path = Path(args.layout) if args.layout else Path(args.frames) / "layout.json"
    layout = vision.SceneLayout.load(layout_path)
    positions = vision.extract_positions(vision.read_frames(args.frames), layout)
    dynsys.write_csv(args.out, positions)
    print(f"tracked {positions.shape[1]} objects over {len(positions)} frames into {args.out}")
    return 0


def cmd_embed(args) -> int:
    series = _load_series(args.series)[:, args.column]
    manifold = shadow.build_shadow(series, args.p, args.tau, args.column)
    shadow.write_manifold_csv(args.out, manifold)
    print(f"wrote {len(manifold)} delay vectors of width {manifold.p} to {args.out}")
    return 0


def cmd_ccm(args) -> int:
    data = _load_series(args.series)
    sizes = [int(v) for v in args.library_sizes.split(",")]
    res = ccm.ccm(data[:, args.x], data[:, args.y], sizes, p=args.p, tau=args.tau,
                  rng=_seed(args.seed), draws=args.draws, min_gain=args.min_gain, min_final=args.min_final)
    ccm.write_ccm_csv(args.out, res)
    for direction, rho in res.skill.items():
        print(f"{direction}: rho at L={res.library_sizes[-1]} = {rho[-1]:.3f}, "
              f"converged={res.converged.get(direction)}")
    return 0


def cmd_surrogate(args) -> int:
    data = _load_series(args.series)
    cfg = surrogate.SurrogateConfig(args.max_iterations, args.tolerance)
    surr = surrogate.surrogate_set(data, cfg, _seed(args.seed))
    dynsys.write_csv(args.out, surr)
    for i in range(data.shape[1]):
        print(f"column {i}: spectral error {surrogate.spectral_error(data[:, i], surr[:, i]):.3g}")
    return 0


def cmd_mirage(args) -> int:
    if args.series:
        data = _load_series(args.series)
    else:
        data = dynsys.simulate(dynsys.preset(args.preset), args.length, rng=_seed(args.seed)).values
    starts, r = stats.windowed_correlation(data[:, 0], data[:, 1], args.window, args.stride)
    stats.write_windowed_csv(args.out, starts, r)
    print(f"{len(r)} windows: max r={np.nanmax(r):.3f}, min r={np.nanmin(r):.3f}, "
          f"min |r|={np.nanmin(np.abs(r)):.3f}")
    return 0


def cmd_discover(args) -> int:
    cfg = pipeline.RunConfig.load(args.config) if args.config else None
    overrides = {}
    sources = {k: getattr(args, k) for k in ("preset", "input_csv") if getattr(args, k)}
    if args.spec:
        sources["system"] = json.loads(Path(args.spec).read_text())
    if sources:
        overrides.update({"preset": None, "system": None, "input_csv": None, **sources})
    for name in ("mode", "rule", "alpha", "threshold", "n_runs", "seed", "parallelism", "null_mode"):
        v = getattr(args, name)
        if v is not None:
            overrides[name] = v
    if args.out_dir:
        overrides["output_dir"] = args.out_dir
    if cfg is None:
        if not sources:
            raise SystemExit("discover: need --config, --preset, --spec or --input-csv")
        cfg = pipeline.RunConfig(**overrides)
    else:
        cfg = replace(cfg, **overrides)
        cfg.__post_init__()
    if args.paper_scale:
        cfg = cfg.paper_scale()
    if args.iterations is not None:
        cfg = replace(cfg, train=replace(cfg.train, iterations=args.iterations))
    if cfg.output_dir is None:
        cfg = replace(cfg, output_dir=".")
    report = pipeline.discover(cfg)
    print(f"report written to {Path(cfg.output_dir) / 'report.json'}")
    names = report.names
    for e in report.edges:
        detail = f"p={e.p_value:.3g}" if e.p_value is not None else f"mean beta={e.mean_real:.3f}"
        print(f"  {names[e.source]} -> {names[e.target]}: {'present' if e.decision else 'absent'} ({detail})")
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="shadowmap", description=__doc__)
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__} ({kernels.BACKEND})")
    ap.add_argument("--verbose", "-v", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="simulate a coupled logistic system or the Lorenz flow")
    g = p.add_mutually_exclusive_group(required=True)
    g.add_argument("--preset", choices=dynsys.preset_names())
    g.add_argument("--spec", help="JSON file with r, B and optional names")
    g.add_argument("--lorenz", action="store_true")
    p.add_argument("--length", type=int, default=1000)
    p.add_argument("--burn-in", type=int, default=dynsys.DEFAULT_BURN_IN)
    p.add_argument("--dt", type=float, default=0.01)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("render", help="render a series CSV to PGM frames")
    p.add_argument("series")
    p.add_argument("--layout")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("track", help="recover object positions from PGM frames")
    p.add_argument("frames")
    p.add_argument("--layout", help="layout JSON (default: <frames>/layout.json)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_track)

    p = sub.add_parser("embed", help="delay-embed one column of a series CSV")
    p.add_argument("series")
    p.add_argument("--column", type=int, default=0)
    p.add_argument("--p", type=int, default=10)
    p.add_argument("--tau", type=int, default=1)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_embed)

    p = sub.add_parser("ccm", help="convergent cross-mapping between two columns")
    p.add_argument("series")
    p.add_argument("--x", type=int, default=0)
    p.add_argument("--y", type=int, default=1)
    p.add_argument("--p", type=int, default=2)
    p.add_argument("--tau", type=int, default=1)
    p.add_argument("--library-sizes", default="25,50,100,200,300,400,500")
    p.add_argument("--draws", type=int, default=20)
    p.add_argument("--min-gain", type=float, default=0.1)
    p.add_argument("--min-final", type=float, default=0.3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_ccm)

    p = sub.add_parser("surrogate", help="IAAFT surrogate of every column")
    p.add_argument("series")
    p.add_argument("--max-iterations", type=int, default=1000)
    p.add_argument("--tolerance", type=float, default=1e-8)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_surrogate)

    p = sub.add_parser("mirage", help="windowed correlation between two series")
    p.add_argument("series", nargs="?")
    p.add_argument("--preset", default="fig1", choices=dynsys.preset_names())
    p.add_argument("--length", type=int, default=1000)
    p.add_argument("--window", type=int, default=50)
    p.add_argument("--stride", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_mirage)

    p = sub.add_parser("discover", help="run the full NSM discovery protocol")
    p.add_argument("--config", help="RunConfig JSON")
    p.add_argument("--preset", choices=dynsys.preset_names())
    p.add_argument("--spec")
    p.add_argument("--input-csv")
    p.add_argument("--mode", choices=["timeseries", "video"])
    p.add_argument("--rule", choices=["ks", "threshold"])
    p.add_argument("--alpha", type=float)
    p.add_argument("--threshold", type=float)
    p.add_argument("--n-runs", type=int)
    p.add_argument("--iterations", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--parallelism", type=int)
    p.add_argument("--null-mode", choices=["iaaft", "independent"])
    p.add_argument("--paper-scale", action="store_true")
    p.add_argument("--out-dir")
    p.set_defaults(func=cmd_discover)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (OSError, ValueError, KeyError, RuntimeError) as exc:
        print(f"shadowmap {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
