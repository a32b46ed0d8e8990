"""Finite weighted point measures and ball statistics.

Balls are open throughout: an atom at distance exactly ``r`` from the
center is outside ``B(x, r)``.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree


class MeasureFormatError(ValueError):
    """Raised when a measure file is malformed."""


@dataclass(frozen=True)
class Ball:
    center: np.ndarray
    radius: float

    def __post_init__(self):
        c = np.asarray(self.center, dtype=float).reshape(-1)
        c.setflags(write=False)
        object.__setattr__(self, "center", c)
        object.__setattr__(self, "radius", float(self.radius))
        if not self.radius > 0:
            raise ValueError(f"ball radius must be positive, got {self.radius}")

    def scaled(self, factor: float) -> "Ball":
        return Ball(self.center, self.radius * factor)


class DiscreteMeasure:
    """Immutable weighted atoms ``sum_i w_i delta_{p_i}`` in R^n."""

    __slots__ = ("_points", "_weights", "_tree")

    def __init__(self, points, weights, ambient_dim: int | None = None):
        pts = np.asarray(points, dtype=float)
        w = np.asarray(weights, dtype=float).reshape(-1)
        if pts.size == 0:
            if ambient_dim is None:
                raise ValueError("ambient_dim is required for an empty measure")
            pts = pts.reshape(0, int(ambient_dim))
        if pts.ndim == 1:
            pts = pts.reshape(1, -1) if ambient_dim is None else pts.reshape(-1, int(ambient_dim))
        if ambient_dim is not None and pts.shape[1] != int(ambient_dim):
            raise ValueError(
                f"points have {pts.shape[1]} coordinates, ambient_dim is {ambient_dim}"
            )
        if pts.shape[0] != w.shape[0]:
            raise ValueError(f"{pts.shape[0]} points but {w.shape[0]} weights")
        if not (np.all(np.isfinite(pts)) and np.all(np.isfinite(w))):
            raise ValueError("points and weights must be finite")
        if np.any(w < 0):
            raise ValueError("weights must be nonnegative")
        pts = np.ascontiguousarray(pts)
        w = np.ascontiguousarray(w)
        pts.setflags(write=False)
        w.setflags(write=False)
        self._points = pts
        self._weights = w
        self._tree = None

    @classmethod
    def empty(cls, ambient_dim: int) -> "DiscreteMeasure":
        return cls(np.zeros((0, ambient_dim)), np.zeros(0), ambient_dim)

    @property
    def points(self) -> np.ndarray:
        return self._points

    @property
    def weights(self) -> np.ndarray:
        return self._weights

    @property
    def ambient_dim(self) -> int:
        return self._points.shape[1]

    @property
    def total_mass(self) -> float:
        return float(math.fsum(self._weights))

    def __len__(self) -> int:
        return self._points.shape[0]

    def __repr__(self) -> str:
        return f"DiscreteMeasure(atoms={len(self)}, n={self.ambient_dim}, mass={self.total_mass:.6g})"

    def __eq__(self, other) -> bool:
        if not isinstance(other, DiscreteMeasure):
            return NotImplemented
        return (
            self._points.shape == other._points.shape
            and np.array_equal(self._points, other._points)
            and np.array_equal(self._weights, other._weights)
        )

    __hash__ = None

    def _kdtree(self) -> cKDTree:
        if self._tree is None:
            self._tree = cKDTree(self._points)
        return self._tree

    def inside(self, center, radius: float) -> np.ndarray:
        """Sorted indices of atoms strictly inside ``B(center, radius)``."""
        center = np.asarray(center, dtype=float)
        if len(self) == 0:
            return np.zeros(0, dtype=np.intp)
        if len(self) <= 64:
            dist = np.linalg.norm(self._points - center, axis=1)
            return np.flatnonzero(dist < radius)
        # kd-tree gives a superset (closed ball); the exact open test decides.
        cand = np.asarray(self._kdtree().query_ball_point(center, radius * (1 + 1e-12)), dtype=np.intp)
        cand.sort()
        dist = np.linalg.norm(self._points[cand] - center, axis=1)
        return cand[dist < radius]

    def subset(self, idx) -> "DiscreteMeasure":
        idx = np.asarray(idx, dtype=np.intp)
        return DiscreteMeasure(self._points[idx], self._weights[idx], self.ambient_dim)

    def translated(self, shift) -> "DiscreteMeasure":
        return DiscreteMeasure(self._points + np.asarray(shift, dtype=float), self._weights, self.ambient_dim)

    # -- source protocol shared with the generators' exact families --

    def mass_in(self, center, radius: float) -> float:
        idx = self.inside(center, radius)
        return float(math.fsum(self._weights[idx]))

    def local_view(self, center, radius: float) -> "DiscreteMeasure":
        """Atoms inside ``B(center, radius)`` in coordinates centered at ``center``."""
        idx = self.inside(center, radius)
        return DiscreteMeasure(
            self._points[idx] - np.asarray(center, dtype=float), self._weights[idx], self.ambient_dim
        )

    def resolution_floor(self) -> float:
        """Eight times the median nearest-neighbour spacing of distinct atoms."""
        return 8.0 * nn_spacing(self)

    def to_json(self) -> dict:
        return {
            "ambient_dim": self.ambient_dim,
            "points": self._points.tolist(),
            "weights": self._weights.tolist(),
        }


# ---------------------------------------------------------------------------
# operations


def ball_mass(mu: DiscreteMeasure, b: Ball) -> float:
    return mu.mass_in(b.center, b.radius)


@dataclass(frozen=True)
class DensityStats:
    theta: float
    doubling_ratio: float
    mass: float
    doubling_defined: bool


def density_ratio(mu, x, r: float, d: int) -> DensityStats:
    """``Theta = mu(B(x,r)) / r^d`` and the doubling ratio ``mu(B(x,2r)) / mu(B(x,r))``.

    ``mu`` may be any object exposing ``mass_in(center, radius)``. When
    ``mu(B(x,r)) == 0`` the doubling ratio is ``nan`` and flagged undefined.
    """
    if not r > 0:
        raise ValueError("radius must be positive")
    if d <= 0:
        raise ValueError("d must be a positive integer")
    m = mu.mass_in(x, r)
    m2 = mu.mass_in(x, 2 * r)
    if m > 0:
        return DensityStats(m / r**d, m2 / m, m, True)
    return DensityStats(0.0, math.nan, 0.0, False)


def restrict(mu: DiscreteMeasure, b: Ball) -> DiscreteMeasure:
    return mu.subset(mu.inside(b.center, b.radius))


def rescale(mu: DiscreteMeasure, x, r: float, mass_norm: float = 1.0) -> DiscreteMeasure:
    """Push forward by ``p -> (p - x) / r`` and divide weights by ``mass_norm``."""
    if not r > 0 or not mass_norm > 0:
        raise ValueError("r and mass_norm must be positive")
    x = np.asarray(x, dtype=float)
    return DiscreteMeasure((mu.points - x) / r, mu.weights / mass_norm, mu.ambient_dim)


def nn_spacing(mu: DiscreteMeasure) -> float:
    """Median distance from an atom to its nearest distinct atom (0 if fewer than two)."""
    pts = np.unique(mu.points, axis=0)
    if len(pts) < 2:
        return 0.0
    dist, _ = cKDTree(pts).query(pts, k=2)
    return float(np.median(dist[:, 1]))


def aggregate(mu: DiscreteMeasure, cell: float, origin=None) -> DiscreteMeasure:
    """Merge atoms sharing a grid cell into one atom at their mass-weighted centroid.

    Zero-weight atoms are dropped. Output order follows the sorted cell keys,
    so the result is deterministic.
    """
    if len(mu) == 0:
        return mu
    origin = np.zeros(mu.ambient_dim) if origin is None else np.asarray(origin, dtype=float)
    keys = np.floor((mu.points - origin) / cell).astype(np.int64)
    uniq, inv = np.unique(keys, axis=0, return_inverse=True)
    inv = inv.reshape(-1)
    w = np.bincount(inv, weights=mu.weights, minlength=len(uniq))
    pts = np.empty((len(uniq), mu.ambient_dim))
    for j in range(mu.ambient_dim):
        pts[:, j] = np.bincount(inv, weights=mu.weights * mu.points[:, j], minlength=len(uniq))
    keep = w > 0
    pts = pts[keep] / w[keep, None]
    # a centroid of atoms inside a convex ball stays inside it
    return DiscreteMeasure(pts, w[keep], mu.ambient_dim)


# ---------------------------------------------------------------------------
# file formats


def _checked(points, weights, n) -> DiscreteMeasure:
    w = np.asarray(weights, dtype=float)
    if np.any(np.isnan(w)):
        raise MeasureFormatError("weights contain NaN")
    if np.any(w < 0):
        raise MeasureFormatError("weights must be nonnegative")
    pts = np.asarray(points, dtype=float)
    if pts.size and np.any(~np.isfinite(pts)):
        raise MeasureFormatError("coordinates must be finite")
    try:
        return DiscreteMeasure(pts.reshape(-1, n) if pts.size else np.zeros((0, n)), w, n)
    except ValueError as exc:
        raise MeasureFormatError(str(exc)) from exc


def measure_from_json(data: dict) -> DiscreteMeasure:
    try:
        n = int(data["ambient_dim"])
        points = data["points"]
        weights = data["weights"]
    except (KeyError, TypeError) as exc:
        raise MeasureFormatError(f"missing field: {exc}") from exc
    if n <= 0:
        raise MeasureFormatError("ambient_dim must be positive")
    if any(len(p) != n for p in points):
        raise MeasureFormatError("every point needs exactly ambient_dim coordinates")
    return _checked(points, weights, n)


def read_measure(path) -> DiscreteMeasure:
    """Read a measure from ``.json`` or ``.csv`` (coordinates then weight per row)."""
    path = Path(path)
    if path.suffix.lower() == ".csv":
        rows = []
        with open(path, newline="") as fh:
            for row in csv.reader(fh):
                if not row or row[0].lstrip().startswith("#"):
                    continue
                try:
                    rows.append([float(v) for v in row])
                except ValueError:
                    if rows:
                        raise MeasureFormatError(f"non-numeric row in {path}: {row}")
                    continue  # header
        if not rows:
            raise MeasureFormatError(f"{path} has no atoms")
        widths = {len(r) for r in rows}
        if len(widths) != 1 or widths.pop() < 2:
            raise MeasureFormatError("CSV rows must all hold n coordinates and a weight")
        arr = np.array(rows)
        return _checked(arr[:, :-1], arr[:, -1], arr.shape[1] - 1)
    with open(path) as fh:
        return measure_from_json(json.load(fh))


def write_measure(mu: DiscreteMeasure, path) -> None:
    path = Path(path)
    if path.suffix.lower() == ".csv":
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow([f"x{i}" for i in range(mu.ambient_dim)] + ["weight"])
            for p, w in zip(mu.points, mu.weights):
                wr.writerow([repr(float(v)) for v in p] + [repr(float(w))])
        return
    with open(path, "w") as fh:
        json.dump(mu.to_json(), fh)
