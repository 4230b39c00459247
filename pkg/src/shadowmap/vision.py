"""Synthetic video of horizontally moving squares and a centroid tracker.

Pixel ``j`` covers the continuous interval ``[j, j + 1)``; object centres are
expressed in these continuous coordinates.
"""
from __future__ import annotations

import json
import math
import re
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage


class TrackingError(ValueError):
    pass


@dataclass(frozen=True)
class SceneLayout:
    """Object ``q`` moves along row centre ``rows[q]``; state 0..1 maps onto ``x_range``."""

    rows: tuple
    width: int = 64
    height: int = 64
    size: int = 8
    x_range: tuple = (5.0, 59.0)

    def __post_init__(self):
        object.__setattr__(self, "rows", tuple(float(r) for r in self.rows))
        object.__setattr__(self, "x_range", tuple(float(v) for v in self.x_range))
        lo, hi = self.x_range
        if not hi > lo:
            raise ValueError("x_range must be increasing")
        if _left(lo, self.size) < 0 or _left(hi, self.size) + self.size > self.width:
            raise ValueError("squares overflow the frame horizontally")
        bands = sorted(self.band(q) for q in range(len(self.rows)))
        for top, bottom in bands:
            if top < 0 or bottom > self.height:
                raise ValueError("squares overflow the frame vertically")
        for (_, b0), (t1, _) in zip(bands, bands[1:]):
            if t1 < b0:
                raise ValueError("row bands overlap")

    @classmethod
    def default(cls, n_objects: int, width: int = 64, height: int = 64, size: int = 8) -> "SceneLayout":
        rows = tuple(height * (q + 1) / (n_objects + 1) for q in range(n_objects))
        margin = size / 2 + 1
        return cls(rows=rows, width=width, height=height, size=size, x_range=(margin, width - margin))

    @property
    def n_objects(self) -> int:
        return len(self.rows)

    @property
    def travel(self) -> float:
        return self.x_range[1] - self.x_range[0]

    def band(self, q: int) -> tuple[int, int]:
        top = _left(self.rows[q], self.size)
        return top, top + self.size

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "SceneLayout":
        return cls(**d)

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2))

    @classmethod
    def load(cls, path) -> "SceneLayout":
        return cls.from_dict(json.loads(Path(path).read_text()))


def _left(centre: float, size: int) -> int:
    # nearest-pixel snap of the square's leading edge
    return int(math.floor(centre - size / 2 + 0.5))


def render(values, layout: SceneLayout) -> np.ndarray:
    """Frames of shape ``(T, height, width)`` with background 0 and squares 1."""
    values = np.asarray(values, dtype=float)
    if values.ndim == 1:
        values = values[:, None]
    if values.shape[1] != layout.n_objects:
        raise ValueError(f"{values.shape[1]} series for {layout.n_objects} objects")
    if np.any(values < 0) or np.any(values > 1):
        raise ValueError("states must lie in [0, 1]")
    frames = np.zeros((values.shape[0], layout.height, layout.width))
    lo = layout.x_range[0]
    for q in range(layout.n_objects):
        top, bottom = layout.band(q)
        for t, s in enumerate(values[:, q]):
            left = _left(lo + s * layout.travel, layout.size)
            frames[t, top:bottom, left:left + layout.size] = 1.0
    return frames


def extract_positions(frames, layout: SceneLayout) -> np.ndarray:
    """Recover the ``(T, n_objects)`` unit-interval states from rendered frames."""
    frames = np.asarray(frames, dtype=float)
    if frames.ndim == 2:
        frames = frames[None]
    if frames.shape[0] == 0:
        raise TrackingError("no frames")
    bands = [layout.band(q) for q in range(layout.n_objects)]
    out = np.empty((frames.shape[0], layout.n_objects))
    for t, frame in enumerate(frames):
        labels, count = ndimage.label(frame > 0.5)
        if count != layout.n_objects:
            raise TrackingError(f"frame {t}: found {count} components, expected {layout.n_objects}")
        centres = ndimage.center_of_mass(np.ones_like(frame), labels, range(1, count + 1))
        seen = set()
        for cy, cx in centres:
            cy, cx = cy + 0.5, cx + 0.5
            owner = [q for q, (top, bottom) in enumerate(bands) if top <= cy < bottom]
            if len(owner) != 1 or owner[0] in seen:
                raise TrackingError(f"frame {t}: component at row {cy:.1f} matches no free object band")
            seen.add(owner[0])
            out[t, owner[0]] = (cx - layout.x_range[0]) / layout.travel
    return out


# --- PGM ------------------------------------------------------------------------

def write_pgm(path, frame: np.ndarray) -> None:
    frame = np.asarray(frame, dtype=float)
    h, w = frame.shape
    data = np.clip(np.rint(frame * 255.0), 0, 255).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(data.tobytes())


def read_pgm(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    tokens, pos = [], 0
    while len(tokens) < 4:
        while raw[pos:pos + 1].isspace():
            pos += 1
        if raw[pos:pos + 1] == b"#":
            pos = raw.index(b"\n", pos) + 1
            continue
        end = pos
        while not raw[end:end + 1].isspace():
            end += 1
        tokens.append(raw[pos:end])
        pos = end
    if tokens[0] != b"P5":
        raise ValueError(f"{path}: not a binary PGM")
    w, h, maxval = int(tokens[1]), int(tokens[2]), int(tokens[3])
    pos += 1
    data = np.frombuffer(raw, dtype=np.uint8 if maxval < 256 else ">u2", count=w * h, offset=pos)
    return data.reshape(h, w).astype(float) / maxval


FRAME_PATTERN = re.compile(r"frame_(\d+)\.pgm$")


def write_frames(directory, frames) -> list[Path]:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = []
    for t, frame in enumerate(frames):
        path = directory / f"frame_{t:06d}.pgm"
        write_pgm(path, frame)
        paths.append(path)
    return paths


def read_frames(directory) -> np.ndarray:
    directory = Path(directory)
    found = sorted((int(m.group(1)), p) for p in directory.iterdir() if (m := FRAME_PATTERN.search(p.name)))
    if not found:
        raise TrackingError(f"{directory}: no frame_*.pgm files")
    return np.stack([read_pgm(p) for _, p in found])
