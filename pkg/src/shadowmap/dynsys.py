"""Coupled logistic-map systems and the Lorenz flow.

The logistic update for variable ``i`` is::

    x_i' = x_i * (r_i - r_i * x_i - sum_j B[i, j] * x_j)

so ``B[i, j]`` is the strength with which variable ``j`` drives variable ``i``.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

DEFAULT_BURN_IN = 100
MAX_REDRAWS = 1000


class DivergentSystemError(RuntimeError):
    """Raised when no initial condition keeps a logistic system inside [0, 1]."""


@dataclass(frozen=True)
class SystemSpec:
    """Growth rates ``r`` and coupling matrix ``B`` of a coupled logistic map."""

    r: np.ndarray
    B: np.ndarray
    names: tuple[str, ...] | None = None

    def __post_init__(self):
        r = np.array(self.r, dtype=float).reshape(-1)
        B = np.array(self.B, dtype=float)
        n = r.size
        if B.shape != (n, n):
            raise ValueError(f"B must be {n}x{n}, got {B.shape}")
        if np.any(np.diag(B) != 0.0):
            raise ValueError("diagonal of B must be exactly zero")
        if np.any(r <= 0) or np.any(r > 4):
            raise ValueError("growth rates must lie in (0, 4]")
        if np.any(B < 0) or np.any(B >= 1):
            raise ValueError("couplings must lie in [0, 1)")
        r.setflags(write=False)
        B.setflags(write=False)
        object.__setattr__(self, "r", r)
        object.__setattr__(self, "B", B)
        names = self.names
        if names is None:
            names = tuple("XYZ"[:n]) if n <= 3 else tuple(f"x{i}" for i in range(n))
        if len(names) != n:
            raise ValueError("one name per variable required")
        object.__setattr__(self, "names", tuple(names))

    @property
    def n_vars(self) -> int:
        return self.r.size

    def adjacency(self) -> np.ndarray:
        """True causal graph, ``adj[src, dst] == 1`` when ``src`` drives ``dst``."""
        return (self.B.T != 0).astype(int)

    def to_dict(self) -> dict:
        return {"r": self.r.tolist(), "B": self.B.tolist(), "names": list(self.names)}

    @classmethod
    def from_dict(cls, d: dict) -> "SystemSpec":
        return cls(r=d["r"], B=d["B"], names=tuple(d["names"]) if d.get("names") else None)


@dataclass(frozen=True)
class Trajectory:
    values: np.ndarray
    seed: int | None = None
    spec: SystemSpec | None = None
    burn_in: int = 0
    names: tuple[str, ...] = field(default=())

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        if v.ndim == 1:
            v = v[:, None]
        v.setflags(write=False)
        object.__setattr__(self, "values", v)
        if not self.names:
            names = self.spec.names if self.spec is not None else tuple(f"x{i}" for i in range(v.shape[1]))
            object.__setattr__(self, "names", tuple(names))

    def __len__(self):
        return self.values.shape[0]

    @property
    def n_vars(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class LorenzParams:
    sigma: float = 10.0
    rho: float = 28.0
    beta: float = 8.0 / 3.0
    dt: float = 0.01
    length: int = 5000

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if self.length <= 0:
            raise ValueError("length must be positive")


def step_coupled_logistic(state, spec: SystemSpec) -> np.ndarray:
    x = np.asarray(state, dtype=float)
    if x.shape != (spec.n_vars,):
        raise ValueError(f"state must have {spec.n_vars} entries")
    return x * (spec.r - spec.r * x - spec.B @ x)


def _iterate(x0: np.ndarray, r: np.ndarray, B: np.ndarray, steps: int) -> np.ndarray | None:
    out = np.empty((steps, x0.size))
    x = x0
    for t in range(steps):
        x = x * (r - r * x - B @ x)
        if x.min() < 0.0 or x.max() > 1.0:
            return None
        out[t] = x
    return out


def simulate(spec: SystemSpec, length: int, burn_in: int = DEFAULT_BURN_IN, rng=None) -> Trajectory:
    """Iterate the map from U[0, 1] initial conditions.

    Initial conditions whose orbit leaves [0, 1] are discarded and redrawn.
    ``rng`` may be a ``numpy.random.Generator`` or an integer seed.
    """
    if length <= 0:
        raise ValueError("length must be positive")
    if burn_in < 0:
        raise ValueError("burn_in must be non-negative")
    seed = rng if isinstance(rng, (int, np.integer)) else None
    rng = np.random.default_rng(rng)
    for _ in range(MAX_REDRAWS):
        x0 = rng.uniform(0.0, 1.0, spec.n_vars)
        out = _iterate(x0, spec.r, spec.B, burn_in + length)
        if out is not None:
            return Trajectory(out[burn_in:], seed=seed, spec=spec, burn_in=burn_in)
    raise DivergentSystemError(f"{MAX_REDRAWS} initial conditions all escaped [0, 1]")


def _lorenz_rhs(s, sigma, rho, beta):
    x, y, z = s
    return np.array([sigma * (y - x), x * (rho - z) - y, x * y - beta * z])


def lorenz(params: LorenzParams = LorenzParams(), ic=None, rng=None) -> Trajectory:
    """Fixed-step RK4 integration of the Lorenz equations.

    When ``ic`` is omitted, the initial state is drawn near (1, 1, 1) from ``rng``.
    """
    if ic is None:
        ic = np.ones(3) + np.random.default_rng(rng).normal(scale=0.1, size=3)
    s = np.asarray(ic, dtype=float).copy()
    if s.shape != (3,):
        raise ValueError("ic must be a 3-vector")
    h = params.dt
    args = (params.sigma, params.rho, params.beta)
    out = np.empty((params.length, 3))
    with np.errstate(over="ignore", invalid="ignore"):  # checked explicitly below
        for t in range(params.length):
            out[t] = s
            k1 = _lorenz_rhs(s, *args)
            k2 = _lorenz_rhs(s + 0.5 * h * k1, *args)
            k3 = _lorenz_rhs(s + 0.5 * h * k2, *args)
            k4 = _lorenz_rhs(s + h * k3, *args)
            s = s + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
            if not np.all(np.isfinite(s)):
                raise FloatingPointError(f"Lorenz state became non-finite at step {t}; reduce dt")
    return Trajectory(out, names=("x", "y", "z"))


# --- presets -----------------------------------------------------------------

UNIDIRECTIONAL_BETA = 0.32
TRI_R = 3.9
TRI_BETA = 0.25

# edges as (source, target) pairs over variable indices X=0, Y=1, Z=2
TRIVARIATE_GRAPHS: dict[str, list[tuple[int, int]]] = {
    "x-y_z": [(0, 1)],
    "xy-bidir_z": [(0, 1), (1, 0)],
    "cycle": [(0, 2), (2, 1), (1, 0)],
    "cycle-bidir-xz": [(0, 2), (2, 0), (2, 1), (1, 0)],
    "fork": [(0, 1), (0, 2)],
    "collider": [(0, 2), (1, 2)],
    "collider-bidir-xz": [(0, 2), (2, 0), (1, 2)],
    "chain-bidir-xz": [(0, 2), (2, 0), (2, 1)],
    "bidir-all-z": [(0, 2), (2, 0), (1, 2), (2, 1)],
}


def _from_edges(n: int, edges, r: float, beta: float) -> SystemSpec:
    B = np.zeros((n, n))
    for src, dst in edges:
        B[dst, src] = beta
    return SystemSpec(r=np.full(n, r), B=B)


def preset(name: str) -> SystemSpec:
    """Named systems: ``fig1``, ``table1-{indep,xy,yx,bidir}``, ``table1-tri-<graph>``."""
    if name == "fig1":
        return SystemSpec(r=[3.8, 3.8], B=[[0.0, 0.02], [0.1, 0.0]])
    bivariate = {
        "table1-indep": [],
        "table1-xy": [(0, 1)],
        "table1-yx": [(1, 0)],
        "table1-bidir": [(0, 1), (1, 0)],
    }
    if name in bivariate:
        beta = 0.1 if name == "table1-bidir" else UNIDIRECTIONAL_BETA
        return _from_edges(2, bivariate[name], 3.8, beta)
    if name.startswith("table1-tri-") and name[len("table1-tri-"):] in TRIVARIATE_GRAPHS:
        return _from_edges(3, TRIVARIATE_GRAPHS[name[len("table1-tri-"):]], TRI_R, TRI_BETA)
    raise KeyError(f"unknown preset {name!r}; choose from {', '.join(preset_names())}")


def preset_names() -> list[str]:
    return (["fig1", "table1-indep", "table1-xy", "table1-yx", "table1-bidir"]
            + [f"table1-tri-{g}" for g in TRIVARIATE_GRAPHS])


# --- CSV ---------------------------------------------------------------------

def write_csv(path, values, names=None) -> None:
    """Write a ``T x n`` array with header ``t,x0,x1,...`` at full precision."""
    values = np.asarray(values, dtype=float)
    if values.ndim == 1:
        values = values[:, None]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t"] + [f"x{i}" for i in range(values.shape[1])])
        for t, row in enumerate(values):
            w.writerow([t] + [f"{v:.17g}" for v in row])


def read_csv(path) -> np.ndarray:
    """Read a series CSV; the first column is the time index and is dropped."""
    with open(Path(path), newline="") as fh:
        rows = list(csv.reader(fh))
    if len(rows) < 2:
        raise ValueError(f"{path}: no data rows")
    data = np.array([[float(v) for v in row[1:]] for row in rows[1:] if row], dtype=float)
    return data
