"""Affine planes, plane angles, local Hausdorff distances, nets and subcovers."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .measure import Ball


def _orthonormalize(vectors: np.ndarray, tol: float = 1e-12) -> np.ndarray:
    """Modified Gram-Schmidt with one re-orthogonalization pass."""
    out = []
    for v in np.atleast_2d(np.asarray(vectors, dtype=float)):
        w = v.copy()
        for _ in range(2):
            for q in out:
                w -= (q @ w) * q
        norm = np.linalg.norm(w)
        if norm <= tol * max(1.0, np.linalg.norm(v)):
            raise ValueError("basis vectors are linearly dependent")
        out.append(w / norm)
    return np.array(out)


class AffinePlane:
    """A d-plane ``base_point + span(basis)`` stored in canonical form.

    The basis rows are orthonormal and ``base_point`` is the point of the
    plane closest to the origin.
    """

    __slots__ = ("base_point", "basis")

    def __init__(self, base_point, basis):
        basis = _orthonormalize(basis)
        p = np.asarray(base_point, dtype=float).reshape(-1)
        if basis.shape[1] != p.shape[0]:
            raise ValueError("basis vectors and base point live in different dimensions")
        if basis.shape[0] > p.shape[0]:
            raise ValueError("plane dimension exceeds ambient dimension")
        p = p - basis.T @ (basis @ p)
        p.setflags(write=False)
        basis.setflags(write=False)
        self.base_point = p
        self.basis = basis

    @property
    def dim(self) -> int:
        return self.basis.shape[0]

    @property
    def ambient_dim(self) -> int:
        return self.basis.shape[1]

    def normal_basis(self) -> np.ndarray:
        """Orthonormal rows spanning the orthogonal complement of the plane's direction."""
        u, _, _ = np.linalg.svd(self.basis.T, full_matrices=True)
        return u[:, self.dim:].T.copy()

    def distance(self, points) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, dtype=float)) - self.base_point
        perp = pts - (pts @ self.basis.T) @ self.basis
        return np.linalg.norm(perp, axis=1)

    def translated(self, shift) -> "AffinePlane":
        return AffinePlane(self.base_point + np.asarray(shift, dtype=float), self.basis)

    def to_json(self) -> dict:
        return {"base_point": self.base_point.tolist(), "basis": self.basis.tolist()}

    @classmethod
    def from_json(cls, data: dict) -> "AffinePlane":
        return cls(data["base_point"], data["basis"])

    @classmethod
    def through(cls, point, directions) -> "AffinePlane":
        return cls(point, directions)

    def __repr__(self) -> str:
        return f"AffinePlane(dim={self.dim}, base_point={self.base_point.tolist()})"


def project(p, plane: AffinePlane) -> np.ndarray:
    """Orthogonal projection of ``p`` (one point or an array of points) onto ``plane``."""
    arr = np.asarray(p, dtype=float)
    rel = np.atleast_2d(arr) - plane.base_point
    out = plane.base_point + (rel @ plane.basis.T) @ plane.basis
    return out if arr.ndim > 1 else out[0]


def plane_angle(l1: AffinePlane, l2: AffinePlane) -> float:
    """Hausdorff distance between the unit-ball slices of the planes moved to the origin.

    For planes of equal dimension this is the sine of the largest principal
    angle between their direction spaces.
    """
    if l1.dim != l2.dim:
        raise ValueError(f"plane dimensions differ: {l1.dim} vs {l2.dim}")
    if l1.ambient_dim != l2.ambient_dim:
        raise ValueError("planes live in different ambient dimensions")
    sv = np.linalg.svd(l1.basis @ l2.basis.T, compute_uv=False)
    cos_min = min(1.0, float(sv.min()))
    return float(np.sqrt(max(0.0, 1.0 - cos_min * cos_min)))


def local_hausdorff(E, F, x, r: float) -> float:
    """Scale-invariant Hausdorff distance of point sets ``E`` and ``F`` inside ``B(x, r)``.

    Sets are arrays of points. Returns 0 when neither set meets the ball,
    and ``inf`` when only one of them does.
    """
    if not r > 0:
        raise ValueError("radius must be positive")
    x = np.asarray(x, dtype=float)
    E = np.atleast_2d(np.asarray(E, dtype=float))
    F = np.atleast_2d(np.asarray(F, dtype=float))
    in_e = E[np.linalg.norm(E - x, axis=1) < r] if E.size else E
    in_f = F[np.linalg.norm(F - x, axis=1) < r] if F.size else F
    worst = 0.0
    if len(in_e):
        if not F.size:
            return float("inf")
        worst = max(worst, float(cKDTree(F).query(in_e)[0].max()))
    if len(in_f):
        if not E.size:
            return float("inf")
        worst = max(worst, float(cKDTree(E).query(in_f)[0].max()))
    return worst / r


def plane_local_hausdorff(l1: AffinePlane, l2: AffinePlane, x, r: float, samples: int = 2048) -> float:
    """``local_hausdorff`` for two planes.

    Distance to a plane is convex along the other plane, so the supremum over
    a slice sits on the slice boundary: exact endpoints for lines, a dense
    sample of the boundary sphere otherwise.
    """
    x = np.asarray(x, dtype=float)

    def one_side(a: AffinePlane, b: AffinePlane) -> float | None:
        center = project(x, a)
        h = np.linalg.norm(center - x)
        if h >= r:
            return None
        rho = np.sqrt(r * r - h * h)
        if a.dim == 1:
            boundary = center + np.outer([-rho, rho], a.basis[0])
        else:
            rng = np.random.default_rng(0)
            dirs = rng.standard_normal((samples, a.dim))
            dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
            boundary = center + rho * dirs @ a.basis
        return float(b.distance(boundary).max())

    s1 = one_side(l1, l2)
    s2 = one_side(l2, l1)
    vals = [v for v in (s1, s2) if v is not None]
    return max(vals) / r if vals else 0.0


# ---------------------------------------------------------------------------
# nets and covers


@dataclass(frozen=True)
class NetResult:
    indices: np.ndarray
    separation: float


def separated_net(points, sep: float) -> NetResult:
    """Greedy maximal ``sep``-separated subset, scanning points in input order."""
    if not sep > 0:
        raise ValueError("separation must be positive")
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    chosen: list[int] = []
    chosen_pts = np.empty((0, pts.shape[1]))
    for i, p in enumerate(pts):
        if len(chosen) == 0 or np.min(np.linalg.norm(chosen_pts - p, axis=1)) >= sep:
            chosen.append(i)
            chosen_pts = np.vstack([chosen_pts, p])
    return NetResult(np.array(chosen, dtype=np.intp), float(sep))


def balls_disjoint(a: Ball, b: Ball) -> bool:
    return float(np.linalg.norm(a.center - b.center)) >= a.radius + b.radius


def besicovitch_subcover(balls: list[Ball]) -> list[list[int]]:
    """Split a subcollection covering every center into families of disjoint balls.

    Balls are taken largest radius first (ties by input order); a ball is kept
    when its center is not already inside a kept ball. Kept balls are then
    assigned first-fit to the earliest family they are disjoint from. Returns
    families as lists of indices into ``balls``; ``len(result)`` is the
    achieved family count.
    """
    order = sorted(range(len(balls)), key=lambda i: (-balls[i].radius, i))
    kept: list[int] = []
    for i in order:
        c = balls[i].center
        if not any(np.linalg.norm(c - balls[j].center) < balls[j].radius for j in kept):
            kept.append(i)
    families: list[list[int]] = []
    for i in kept:
        for fam in families:
            if all(balls_disjoint(balls[i], balls[j]) for j in fam):
                fam.append(i)
                break
        else:
            families.append([i])
    return families
