"""The discovery protocol: repeated NSM runs on real and surrogate data, then per-edge tests."""
from __future__ import annotations

import csv
import json
import logging
import os
import platform
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__, dynsys, kernels, nsm, stats, surrogate, vision

log = logging.getLogger(__name__)

SEED_ENV = "SHADOWMAP_SEED"
MAX_ABORT_FRACTION = 0.10
DESK_RUNS = 30
PAPER_RUNS = 100


class DiscoveryError(RuntimeError):
    pass


@dataclass
class RunConfig:
    preset: str | None = None
    system: dict | None = None  # SystemSpec.to_dict() form
    input_csv: str | None = None
    mode: str = "timeseries"  # or "video"
    train: nsm.TrainConfig = field(default_factory=nsm.TrainConfig)
    surrogate: surrogate.SurrogateConfig = field(default_factory=surrogate.SurrogateConfig)
    alpha: float = 0.01
    threshold: float = 0.25
    rule: str = "ks"  # or "threshold"
    n_runs: int = DESK_RUNS
    seed: int = 0
    parallelism: int = 1
    output_dir: str | None = None
    null_mode: str = "iaaft"  # or "independent"
    surrogate_runs: bool | None = None  # None: only when the rule needs them
    ks_exact: bool = False
    layout: dict | None = None

    def __post_init__(self):
        if isinstance(self.train, dict):
            self.train = nsm.TrainConfig(**self.train)
        if isinstance(self.surrogate, dict):
            self.surrogate = surrogate.SurrogateConfig(**self.surrogate)
        sources = [s for s in (self.preset, self.system, self.input_csv) if s is not None]
        if len(sources) != 1:
            raise ValueError("exactly one of preset, system or input_csv is required")
        if self.mode not in ("timeseries", "video"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.rule not in ("ks", "threshold"):
            raise ValueError(f"unknown decision rule {self.rule!r}")
        if self.null_mode not in ("iaaft", "independent"):
            raise ValueError(f"unknown null mode {self.null_mode!r}")
        if self.null_mode == "independent" and self.input_csv is not None:
            raise ValueError("independent null mode needs a generating system")
        if not 0 < self.alpha < 1:
            raise ValueError("alpha must lie in (0, 1)")
        if self.n_runs < 1 or self.parallelism < 1:
            raise ValueError("n_runs and parallelism must be positive")

    @property
    def run_surrogates(self) -> bool:
        return self.rule == "ks" if self.surrogate_runs is None else self.surrogate_runs

    def system_spec(self) -> dynsys.SystemSpec | None:
        if self.preset is not None:
            return dynsys.preset(self.preset)
        if self.system is not None:
            return dynsys.SystemSpec.from_dict(self.system)
        return None

    def to_dict(self) -> dict:
        d = asdict(self)
        d["train"] = self.train.to_dict()
        d["surrogate"] = asdict(self.surrogate)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        return cls(**d)

    @classmethod
    def load(cls, path) -> "RunConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def paper_scale(self) -> "RunConfig":
        return replace(self, n_runs=PAPER_RUNS,
                       train=replace(self.train, iterations=nsm.TrainConfig.PAPER_ITERATIONS))


# --- data sources -----------------------------------------------------------------

class DataSource:
    """Callable returning one ``(length, n)`` data generation per call."""

    def __init__(self, config: RunConfig, null: bool):
        self.config = config
        self.null = null
        self.spec = config.system_spec()
        self.fixed = None
        if self.spec is None:
            data = dynsys.read_csv(config.input_csv)
            if data.shape[0] < config.train.length:
                raise ValueError(f"{config.input_csv}: {data.shape[0]} rows, need {config.train.length}")
            self.fixed = data[:config.train.length]
        if null and config.null_mode == "independent":
            self.spec = dynsys.SystemSpec(r=self.spec.r, B=np.zeros_like(self.spec.B), names=self.spec.names)
        self.layout = None
        if config.mode == "video":
            n = self.fixed.shape[1] if self.fixed is not None else self.spec.n_vars
            self.layout = (vision.SceneLayout.from_dict(config.layout) if config.layout
                           else vision.SceneLayout.default(n))

    @property
    def n_vars(self) -> int:
        return self.fixed.shape[1] if self.fixed is not None else self.spec.n_vars

    def observe(self, rng) -> np.ndarray:
        tc = self.config.train
        if self.fixed is not None:
            values = self.fixed
        else:
            values = dynsys.simulate(self.spec, tc.length, tc.burn_in, rng).values
        if self.layout is not None:
            values = vision.extract_positions(vision.render(values, self.layout), self.layout)
        return values

    def __call__(self, rng) -> np.ndarray:
        values = self.observe(rng)
        if self.null and self.config.null_mode == "iaaft":
            values = surrogate.surrogate_set(values, self.config.surrogate, rng)
        return values


def run_seed(master: int, index: int, null: bool) -> list[int]:
    return [int(master), int(index), int(null)]


def _one_run(args):
    config_dict, index, null = args
    config = RunConfig.from_dict(config_dict)
    seed = run_seed(config.seed, index, null)
    try:
        _, est, _ = nsm.train_run(config.train, DataSource(config, null), seed)
    except (nsm.TrainingAborted, dynsys.DivergentSystemError) as exc:
        return index, null, None, str(exc)
    return index, null, {f"{s},{t}": b for (s, t), b in est.betas.items()}, None


# --- report -------------------------------------------------------------------------

@dataclass
class EdgeResult:
    source: int
    target: int
    beta_real: list
    beta_surrogate: list
    decision: bool
    ks_statistic: float | None = None
    p_value: float | None = None
    mean_real: float | None = None


@dataclass
class DiscoveryReport:
    names: tuple
    edges: list
    adjacency: np.ndarray
    config: dict
    aborted: list = field(default_factory=list)
    truth: np.ndarray | None = None
    metadata: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "edges": [{
                "source": self.names[e.source], "target": self.names[e.target],
                "beta_real": e.beta_real, "beta_surrogate": e.beta_surrogate,
                "ks_statistic": e.ks_statistic, "p_value": e.p_value, "mean_real": e.mean_real,
                "decision": e.decision,
            } for e in self.edges],
            "names": list(self.names),
            "adjacency": self.adjacency.tolist(),
            "truth": None if self.truth is None else self.truth.tolist(),
            "aborted_runs": self.aborted,
            "config": self.config,
            "seed": self.config["seed"],
            "software": {"name": "shadowmap", "version": __version__, "backend": kernels.BACKEND},
            "metadata": self.metadata,
        }

    def beta_distribution(self) -> nsm.BetaDistribution:
        return nsm.BetaDistribution(
            self.names,
            {(e.source, e.target): e.beta_real for e in self.edges},
            {(e.source, e.target): e.beta_surrogate for e in self.edges})


def _decide(config: RunConfig, real: list, null: list, s: int, t: int) -> EdgeResult:
    mean_real = float(np.mean(real))
    if config.rule == "threshold":
        return EdgeResult(s, t, real, null, stats.decide_edge_threshold(real, config.threshold), mean_real=mean_real)
    present, ks = stats.decide_edge(real, null, config.alpha, exact=config.ks_exact,
                                    rng=run_seed(config.seed, s * 1000 + t, True))
    return EdgeResult(s, t, real, null, bool(present), ks.statistic, ks.p_value, mean_real)


def discover(config: RunConfig, write: bool = True) -> DiscoveryReport:
    """Run the full protocol and (optionally) write ``report.json`` and ``betas.csv``."""
    env_seed = os.environ.get(SEED_ENV)
    if env_seed:
        config = replace(config, seed=int(env_seed))
    started = time.time()
    probe = DataSource(config, null=False)
    n = probe.n_vars
    names = probe.spec.names if probe.spec is not None else tuple(
        dynsys.SystemSpec(r=np.full(n, 1.0), B=np.zeros((n, n))).names)
    config_dict = config.to_dict()
    jobs = [(config_dict, r, False) for r in range(config.n_runs)]
    if config.run_surrogates:
        jobs += [(config_dict, r, True) for r in range(config.n_runs)]
    if config.parallelism > 1:
        with ProcessPoolExecutor(max_workers=config.parallelism) as pool:
            results = list(pool.map(_one_run, jobs))
    else:
        results = [_one_run(j) for j in jobs]
    results.sort(key=lambda r: (r[1], r[0]))
    aborted = [{"run": i, "surrogate": null, "error": err} for i, null, _, err in results if err]
    if len(aborted) > MAX_ABORT_FRACTION * len(jobs):
        raise DiscoveryError(f"{len(aborted)} of {len(jobs)} runs aborted; first error: {aborted[0]['error']}")
    real = [b for _, null, b, _ in results if b is not None and not null]
    fake = [b for _, null, b, _ in results if b is not None and null]
    edges, adj = [], np.zeros((n, n), dtype=int)
    for s in range(n):
        for t in range(n):
            if s == t:
                continue
            key = f"{s},{t}"
            e = _decide(config, [b[key] for b in real], [b[key] for b in fake], s, t)
            edges.append(e)
            adj[s, t] = int(e.decision)
    finished = time.time()
    report = DiscoveryReport(
        names=tuple(names), edges=edges, adjacency=adj, config=config_dict, aborted=aborted,
        truth=probe.spec.adjacency() if probe.spec is not None else None,
        metadata={
            "started": datetime.fromtimestamp(started, timezone.utc).isoformat(),
            "finished": datetime.fromtimestamp(finished, timezone.utc).isoformat(),
            "wall_seconds": finished - started,
            "python": platform.python_version(),
        })
    if write and config.output_dir:
        write_report(report, config.output_dir)
    return report


def write_report(report: DiscoveryReport, directory) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    path = directory / "report.json"
    path.write_text(json.dumps(report.to_dict(), indent=2))
    with open(directory / "betas.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["source", "target", "kind", "run", "beta"])
        for e in report.edges:
            for kind, values in (("real", e.beta_real), ("surrogate", e.beta_surrogate)):
                for r, b in enumerate(values):
                    w.writerow([report.names[e.source], report.names[e.target], kind, r, f"{b:.17g}"])
    return path


def strip_volatile(report: dict) -> dict:
    """Copy of a report dict without wall-clock metadata."""
    out = dict(report)
    out.pop("metadata", None)
    return out
