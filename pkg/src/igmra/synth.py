"""Seeded synthetic manifolds and replayable point streams.

All randomness comes from a counter-based Philox generator so the same seed
produces the same bytes on every platform.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

T_MIN, T_MAX = 1.5 * np.pi, 4.5 * np.pi
HEIGHT = 21.0


def rng_for(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(int(seed)))


def roll_map(t, h) -> np.ndarray:
    """Swiss-roll embedding of parameters ``(t, h)``."""
    t = np.asarray(t, dtype=float)
    h = np.asarray(h, dtype=float)
    return np.stack([t * np.cos(t), h, t * np.sin(t)], axis=-1)


def swiss_roll(n: int, seed: int, return_params: bool = False):
    """``n`` points sampled uniformly in ``(t, h)`` on the Swiss roll."""
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = rng_for(seed)
    t = rng.uniform(T_MIN, T_MAX, n)
    h = rng.uniform(0.0, HEIGHT, n)
    pts = roll_map(t, h)
    return (pts, t, h) if return_params else pts


def hyperplane(n: int, seed: int, origin, directions, extent) -> np.ndarray:
    """Uniform samples on the patch ``origin + u1*e1*v1 + u2*e2*v2``, ``u_i ~ U(-1, 1)``.

    ``directions`` holds the two spanning vectors as rows and ``extent`` the
    half-width along each of them.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    origin = np.asarray(origin, dtype=float).reshape(-1)
    dirs = np.atleast_2d(np.asarray(directions, dtype=float))
    ext = np.broadcast_to(np.asarray(extent, dtype=float), (dirs.shape[0],))
    if dirs.shape != (2, origin.shape[0]):
        raise ValueError("directions must be two vectors of the ambient dimension")
    sv = np.linalg.svd(dirs, compute_uv=False)
    if sv[-1] <= 1e-12 * max(sv[0], 1.0):
        raise ValueError("spanning directions are degenerate")
    if np.any(ext < 0):
        raise ValueError("extent must be non-negative")
    u = rng_for(seed).uniform(-1.0, 1.0, (n, 2))
    return origin + (u * ext) @ dirs


def roll_bounds(samples: int = 200_001) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Centroid, lower and upper corners of the roll's bounding box."""
    t = np.linspace(T_MIN, T_MAX, samples)
    xz = np.stack([t * np.cos(t), t * np.sin(t)], axis=1)
    cx, cz = xz.mean(axis=0)
    lo = np.array([xz[:, 0].min(), 0.0, xz[:, 1].min()])
    hi = np.array([xz[:, 0].max(), HEIGHT, xz[:, 1].max()])
    return np.array([cx, HEIGHT / 2, cz]), lo, hi


def roll_plane_patch(orientation: str = "diagonal") -> dict:
    """Plane patch crossing the roll through its centroid.

    ``diagonal`` (default) has normal (1, 0, 1)/sqrt(2), contains the y
    direction and spans the roll's bounding box. ``horizontal`` is
    orthogonal to y and spans the roll's x/z extent.
    """
    centroid, lo, hi = roll_bounds()
    if orientation == "horizontal":
        origin = np.array([(lo[0] + hi[0]) / 2, centroid[1], (lo[2] + hi[2]) / 2])
        dirs = np.array([[1.0, 0.0, 0.0], [0.0, 0.0, 1.0]])
        extent = np.array([(hi[0] - lo[0]) / 2, (hi[2] - lo[2]) / 2])
    elif orientation == "diagonal":
        origin = centroid
        dirs = np.array([[1.0, 0.0, -1.0], [0.0, 1.0, 0.0]])
        dirs[0] /= np.linalg.norm(dirs[0])
        extent = np.array([np.linalg.norm([hi[0] - lo[0], hi[2] - lo[2]]) / 2, HEIGHT / 2])
    else:
        raise ValueError(f"unknown plane orientation {orientation!r}")
    return {"origin": origin, "directions": dirs, "extent": extent}


@dataclass
class StreamSource:
    """Replayable finite stream; ``sampler(total, seed)`` yields all rows."""

    name: str
    seed: int
    total: int
    sampler: Callable[[int, int], np.ndarray] = field(repr=False)
    emitted: int = 0
    _rows: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.total < 0:
            raise ValueError("total must be >= 0")

    @property
    def rows(self) -> np.ndarray:
        if self._rows is None:
            rows = self.sampler(self.total, self.seed) if self.total else np.empty((0, 3))
            self._rows = np.asarray(rows, dtype=float)
        return self._rows

    @property
    def remaining(self) -> int:
        return self.total - self.emitted

    def take(self, k: int) -> np.ndarray:
        k = min(int(k), self.remaining)
        out = self.rows[self.emitted: self.emitted + k]
        self.emitted += k
        return out

    def reset(self) -> None:
        self.emitted = 0

    def __iter__(self):
        while self.remaining:
            yield self.take(1)[0]


def swiss_roll_source(total: int, seed: int) -> StreamSource:
    return StreamSource("swissroll", seed, total, swiss_roll)


def plane_source(total: int, seed: int, orientation: str = "diagonal") -> StreamSource:
    patch = roll_plane_patch(orientation)
    return StreamSource(f"plane-{orientation}", seed, total,
                        lambda n, s: hyperplane(n, s, **patch))


def interleave_order(totals, seed: int) -> np.ndarray:
    """Source label per emitted row, a uniformly random arrangement of exact counts."""
    labels = np.repeat(np.arange(len(totals)), totals)
    return rng_for(seed).permutation(labels)


def interleave(sources: list[StreamSource], proportions=None, seed: int = 0) -> StreamSource:
    """Randomly merge sources while keeping each source's exact total.

    ``proportions`` is optional and, when given, must agree with the sources'
    relative totals.
    """
    if not sources:
        raise ValueError("interleave needs at least one source")
    totals = np.array([s.total for s in sources])
    if proportions is not None:
        prop = np.asarray(proportions, dtype=float)
        if prop.shape != totals.shape or abs(prop.sum() - 1.0) > 1e-9:
            raise ValueError("proportions must have one entry per source and sum to 1")
        if totals.sum() and np.any(np.abs(prop * totals.sum() - totals) > 1.0):
            raise ValueError("proportions disagree with the sources' totals")
    if len(sources) == 1:
        return sources[0]

    def sampler(total, s):
        order = interleave_order(totals, s)
        out = np.empty((total, sources[0].rows.shape[1]))
        for k, src in enumerate(sources):
            out[order == k] = src.rows
        return out

    name = "+".join(s.name for s in sources)
    return StreamSource(name, seed, int(totals.sum()), sampler)
