"""Per-ball flatness coefficients: alpha with its minimizing (c, L), the W1 variant, and beta_p.

All fits run in blown-up coordinates: the ball is mapped to the unit ball
and the measure is divided by its mass there. A plane fit with density
``c_unit`` in those coordinates corresponds to density
``c_unit * mu(B) / r^d`` in the original ones, and the normalized F value
is alpha itself.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize

from . import _netsimplex
from .flat import FlatFit, minimize_convex_pwl, quadrature_nodes, slice_geometry
from .geometry import AffinePlane, plane_angle
from .measure import Ball, DiscreteMeasure, aggregate


SEARCH_C_TOL = 1e-3


class ZeroMassBall(ValueError):
    """The ball carries no mass, so normalized coefficients are undefined."""


@dataclass(frozen=True)
class FitConfig:
    quad: int = 64
    restarts: int = 3
    agreement_tol: float = 0.05
    c_tol: float = 1e-6
    plane_iters: int = 400
    # views with more atoms are merged on a grid (cell 1/(4 quad), coarsened as needed) before fitting
    max_atoms: int = 256
    # put quadrature nodes at the projections of the atoms
    aligned: bool = True

    def to_json(self) -> dict:
        return dict(self.__dict__)


@dataclass(frozen=True)
class AlphaResult:
    alpha: float
    c_best: float
    plane_best: AffinePlane
    f_value: float
    status: str
    restarts: tuple = field(default=(), compare=False)

    def to_json(self) -> dict:
        return {
            "alpha": self.alpha,
            "c_best": self.c_best,
            "plane_best": self.plane_best.to_json(),
            "f_value": self.f_value,
            "status": self.status,
        }


@dataclass(frozen=True)
class BetaResult:
    beta: float
    plane_best: AffinePlane
    p: float


# ---------------------------------------------------------------------------
# helpers


def pca_plane(points: np.ndarray, weights: np.ndarray, d: int) -> AffinePlane:
    """Weighted least-squares d-plane: through the centroid, spanned by the top eigenvectors."""
    n = points.shape[1]
    tot = weights.sum()
    if tot <= 0 or len(points) == 0:
        return AffinePlane(np.zeros(n), np.eye(n)[:d])
    mean = weights @ points / tot
    rel = points - mean
    cov = (rel * weights[:, None]).T @ rel / tot
    _, vecs = np.linalg.eigh(cov)
    return AffinePlane(mean, vecs[:, ::-1][:, :d].T)


def _view(mu, b: Ball):
    """Atoms in ``b`` in blown-up coordinates, normalized to unit mass."""
    view = mu.local_view(b.center, b.radius)
    mass = view.total_mass
    if not mass > 0:
        raise ZeroMassBall(f"no mass in ball of radius {b.radius!r} at {b.center.tolist()}")
    return view.points / b.radius, view.weights / mass, mass


def _thin(pts, w, cfg: FitConfig):
    if len(pts) <= cfg.max_atoms:
        return pts, w
    n = pts.shape[1]
    cell = 0.25 / cfg.quad
    while True:
        m = aggregate(DiscreteMeasure(pts, w, n), cell, origin=np.zeros(n))
        if len(m) <= cfg.max_atoms:
            return m.points, m.weights
        cell *= 2


def _to_unit(plane: AffinePlane, b: Ball) -> AffinePlane:
    return AffinePlane((plane.base_point - b.center) / b.radius, plane.basis)


def _from_unit(plane: AffinePlane, b: Ball) -> AffinePlane:
    return AffinePlane(b.center + b.radius * plane.base_point, plane.basis)


class _Chart:
    """Local coordinates around a seed plane: tilt ``A`` (d x (n-d)) and offset ``t`` (n-d)."""

    def __init__(self, seed: AffinePlane):
        self.u = seed.basis
        self.nrm = seed.normal_basis()
        self.p0 = seed.base_point
        self.d, self.k = self.u.shape[0], self.nrm.shape[0]

    @property
    def size(self) -> int:
        return self.d * self.k + self.k

    def plane(self, x: np.ndarray) -> AffinePlane:
        a = x[: self.d * self.k].reshape(self.d, self.k)
        t = x[self.d * self.k:]
        return AffinePlane(self.p0 + t @ self.nrm, self.u + a @ self.nrm)


def _dedupe(planes, tol=1e-6):
    out = []
    for p in planes:
        if not any(plane_angle(p, q) < tol and np.linalg.norm(p.base_point - q.base_point) < tol for q in out):
            out.append(p)
    return out


def _extra_seeds(first: AffinePlane, count: int):
    """Deterministic tilted copies of the first seed, used when restarts exceed distinct seeds."""
    chart = _Chart(first)
    out = []
    for i in range(count):
        x = np.zeros(chart.size)
        if chart.k:
            angle = math.pi * (i + 1) / (count + 1) - math.pi / 2
            x[i % (chart.d * chart.k)] = math.tan(angle) if abs(angle) < 1.4 else 4.0
        out.append(chart.plane(x))
    return out


def _seed_planes(pts, w, d, user_seeds, restarts):
    seeds = [pca_plane(pts, w, d)]
    half = np.linalg.norm(pts, axis=1) < 0.5
    if w[half].sum() > 0:
        seeds.append(pca_plane(pts[half], w[half], d))
    seeds.extend(user_seeds)
    seeds = _dedupe(seeds)
    if len(seeds) < restarts:
        seeds.extend(_extra_seeds(seeds[0], restarts - len(seeds)))
    return seeds[: max(restarts, 1)] if not user_seeds else seeds[: max(restarts, len(seeds))]


def _candidate_planes(pts, w, d, count, pool=2000):
    """Planes through d+1 atoms with the smallest capped-distance sum ``sum w min(dist, 1-|p|)``.

    The sum is a cheap stand-in for the transport objective; it is small when the
    plane passes near most of the heavy mass. Combinations are sampled with a fixed
    generator when there are too many to enumerate.
    """
    n, dim = pts.shape
    if n < d + 1 or count <= 0:
        return []
    if math.comb(n, d + 1) <= pool:
        combos = np.array(list(itertools.combinations(range(n), d + 1)))
    else:
        gen = np.random.default_rng(0)
        prob = w / w.sum()
        combos = np.array([gen.choice(n, d + 1, replace=False, p=prob) for _ in range(pool)])
    base = pts[combos[:, 0]]
    span = pts[combos[:, 1:]] - base[:, None, :]
    q, r = np.linalg.qr(np.swapaxes(span, 1, 2))
    ok = np.all(np.abs(np.diagonal(r, axis1=1, axis2=2)) > 1e-9, axis=1)
    base, q = base[ok], q[ok]
    if len(base) == 0:
        return []
    rel = pts[None, :, :] - base[:, None, :]
    resid = rel - np.einsum("mnj,mkj->mnk", rel @ q, q)
    cap = np.maximum(1.0 - np.linalg.norm(pts, axis=1), 0.0)
    score = np.minimum(np.linalg.norm(resid, axis=2), cap) @ w
    out = []
    for i in np.argsort(score, kind="stable"):
        plane = AffinePlane(base[i], q[i].T)
        if not any(plane_angle(plane, o) < 0.05 and o.distance(plane.base_point[None, :])[0] < 0.02 for o in out):
            out.append(plane)
        if len(out) == count:
            break
    return out


def _starts(objective, pts, w, d, user_seeds, restarts):
    """Starting planes for the simplex searches plus the reference plane for tie-breaks.

    Caller seeds are always searched. The remaining slots go to the best members,
    by the true objective, of a pool of principal planes and screened atom planes.
    """
    seeds = _seed_planes(pts, w, d, [], restarts)
    keep = _dedupe(list(user_seeds))
    pool = _dedupe(keep + seeds + _candidate_planes(pts, w, d, 8 * restarts))[len(keep) :]
    slots = max(restarts - len(keep), 1)
    if len(pool) > slots:
        vals = [objective(p)[0] for p in pool]
        pool = [pool[i] for i in np.argsort(vals, kind="stable")]
    return keep + pool[:slots], seeds[0]


def _spread(pts, w, plane: AffinePlane) -> float:
    dist = plane.distance(pts)
    return float(math.sqrt(w @ dist**2 / w.sum())) if w.sum() > 0 else 0.0


def _simplex(objective, seed, pts, w, cfg: FitConfig):
    """One Nelder-Mead search in a chart around ``seed``; returns ``(f, plane, extra)`` of the best point seen."""
    chart = _Chart(seed)
    if chart.size == 0:
        f, extra = objective(seed)
        return f, seed, extra
    step = min(max(2.0 * _spread(pts, w, seed), 1e-4), 0.25)
    best = {}

    def fun(x):
        plane = chart.plane(x)
        f, extra = objective(plane)
        if not best or f < best["f"]:
            best.update(f=f, plane=plane, extra=extra)
        return f

    x0 = np.zeros(chart.size)
    f0 = fun(x0)
    simplex = np.vstack([x0, x0 + step * np.eye(chart.size)])
    minimize(
        fun,
        x0,
        method="Nelder-Mead",
        options={
            "maxfev": cfg.plane_iters,
            "initial_simplex": simplex,
            "xatol": 5e-2 * step,
            "fatol": 1e-3 * f0 + 1e-15,
        },
    )
    return best["f"], best["plane"], best["extra"]


def _agrees(f, best_f, cfg: FitConfig) -> bool:
    return f - best_f <= cfg.agreement_tol * best_f + 1e-3


def _search(objective, seeds, pts, w, cfg: FitConfig):
    """Run one simplex search per seed; returns the per-restart list of ``(f, plane, extra)``.

    A run that ends outside the agreement band of the best run is restarted
    once from its end point with a fresh simplex, since the tolerances are
    relative to the starting value and a poor start can stall early.
    """
    runs = [_simplex(objective, seed, pts, w, cfg) for seed in seeds]
    best_f = min(r[0] for r in runs)
    for i, run in enumerate(runs):
        if not _agrees(run[0], best_f, cfg):
            again = _simplex(objective, run[1], pts, w, cfg)
            if again[0] < run[0]:
                runs[i] = again
    return runs


def _pick(runs, first_seed: AffinePlane, cfg: FitConfig):
    best_f = min(r[0] for r in runs)
    near = [r for r in runs if r[0] <= best_f * (1 + 1e-9) + 1e-15]
    choice = min(near, key=lambda r: plane_angle(r[1], first_seed))
    agree = all(_agrees(r[0], best_f, cfg) for r in runs)
    return choice, ("converged" if agree else "multistart-disagreement")


# ---------------------------------------------------------------------------
# alpha


class _AlphaObjective:
    """``L -> min_c F(mu, c H^d|L)`` on the unit ball, remembering the last optimal ``c``."""

    def __init__(self, pts, w, d, cfg: FitConfig):
        self.pts, self.w, self.d, self.cfg = pts, w, d, cfg
        self.ball = Ball(np.zeros(pts.shape[1]), 1.0)
        self.f0 = float(w @ (1.0 - np.linalg.norm(pts, axis=1)))
        self.c_hint = 1.0
        # plane search compares values to about this precision; the winner is polished at c_tol
        self.tol = max(cfg.c_tol, SEARCH_C_TOL)

    def __call__(self, plane: AffinePlane):
        nodes, q = quadrature_nodes(plane, self.ball, self.cfg.quad, self.pts if self.cfg.aligned else None)
        if len(nodes) == 0:
            return self.f0, 0.0
        fit = FlatFit(self.pts, self.w, nodes, q, self.ball.center, 1.0)
        c, f, _ = minimize_convex_pwl(fit, self.c_hint, 16.0, rel_tol=self.tol)
        if c > 0:
            self.c_hint = c
        return f, c


def alpha(mu, b: Ball, d: int, cfg: FitConfig = FitConfig(), seeds=()) -> AlphaResult:
    """alpha-number of ``mu`` on ``b`` with its minimizing density and plane.

    ``mu`` is a ``DiscreteMeasure`` or any source with ``local_view`` (and
    optionally ``flat_in``). ``seeds`` are extra starting planes, e.g. the
    fit from a neighbouring scale.
    """
    if not 1 <= d <= b.center.shape[0]:
        raise ValueError("d must lie between 1 and the ambient dimension")
    shortcut = getattr(mu, "flat_in", None)
    if shortcut is not None:
        hit = shortcut(b.center, b.radius)
        if hit is not None:
            c, plane = hit
            return AlphaResult(0.0, c, plane, 0.0, "converged")
    pts, w, mass = _view(mu, b)
    pts, w = _thin(pts, w, cfg)
    objective = _AlphaObjective(pts, w, d, cfg)
    starts, ref = _starts(objective, pts, w, d, [_to_unit(s, b) for s in seeds], cfg.restarts)
    runs = _search(objective, starts, pts, w, cfg)
    (f, plane, c), status = _pick(runs, ref, cfg)
    objective.tol, objective.c_hint = cfg.c_tol, c if c > 0 else 1.0
    f, c = objective(plane)
    if c == 0.0 or slice_geometry(plane, objective.ball)[1] == 0.0:
        # with c = 0 every plane gives the same value; keep one that meets the ball
        plane, c, f = ref, 0.0, min(f, objective.f0)
    f_value = f * b.radius * mass
    return AlphaResult(
        alpha=f_value / (b.radius * mass),
        c_best=c * mass / b.radius**d,
        plane_best=_from_unit(plane, b),
        f_value=f_value,
        status=status,
        restarts=tuple(r[0] for r in runs),
    )


# ---------------------------------------------------------------------------
# W1 variant


class _TildeObjective:
    def __init__(self, pts, w, d, cfg: FitConfig):
        self.pts, self.w, self.d, self.cfg = pts, np.ascontiguousarray(w), d, cfg
        self.ball = Ball(np.zeros(pts.shape[1]), 1.0)

    def __call__(self, plane: AffinePlane):
        nodes, q = quadrature_nodes(plane, self.ball, self.cfg.quad, self.pts if self.cfg.aligned else None)
        if len(nodes) == 0:
            # not admissible; a value above any attainable distance keeps the search inside
            return 2.0 + float(plane.distance(np.zeros((1, self.ball.center.shape[0])))[0]), 0.0
        vol = q.sum()
        q = np.ascontiguousarray(q / vol)
        cost = np.ascontiguousarray(np.linalg.norm(self.pts[:, None, :] - nodes[None, :, :], axis=2))
        _, value, _, _, code = _netsimplex.emd_c(self.w, q * (self.w.sum() / q.sum()), cost, _netsimplex.MAX_ITER, 1)
        if code != _netsimplex.OPTIMAL:
            raise RuntimeError(f"network simplex stopped with code {code}")
        return float(value), 1.0 / vol


def alpha_tilde(mu, b: Ball, d: int, cfg: FitConfig = FitConfig(), seeds=()) -> AlphaResult:
    """The W1 variant: distance between the normalized blow-up and normalized flat measure on the unit slice."""
    if not 1 <= d <= b.center.shape[0]:
        raise ValueError("d must lie between 1 and the ambient dimension")
    pts, w, mass = _view(mu, b)
    pts, w = _thin(pts, w, cfg)
    objective = _TildeObjective(pts, w, d, cfg)
    starts, ref = _starts(objective, pts, w, d, [_to_unit(s, b) for s in seeds], cfg.restarts)
    runs = _search(objective, starts, pts, w, cfg)
    (f, plane, inv_vol), status = _pick(runs, ref, cfg)
    f_value = f * b.radius * mass
    return AlphaResult(
        alpha=f_value / (b.radius * mass),
        c_best=inv_vol * mass / b.radius**d,
        plane_best=_from_unit(plane, b),
        f_value=f_value,
        status=status,
        restarts=tuple(r[0] for r in runs),
    )


# ---------------------------------------------------------------------------
# beta


def _beta_power(pts, w, plane, p) -> float:
    return float(w @ plane.distance(pts) ** p)


def beta(mu, b: Ball, d: int, p: float = 2.0, tol: float = 1e-8, max_iter: int = 500) -> BetaResult:
    """beta_p of ``mu`` on ``b``; ``beta^p = inf_L r^-d * sum w (dist(p, L) / r)^p`` over atoms in ``b``."""
    if p < 1:
        raise ValueError("p must be at least 1")
    n = b.center.shape[0]
    view = mu.local_view(b.center, b.radius)
    if view.total_mass <= 0:
        return BetaResult(0.0, AffinePlane(b.center, np.eye(n)[:d]), float(p))
    pts = view.points / b.radius
    w = view.weights / b.radius**d
    plane = pca_plane(pts, w, d)
    val = _beta_power(pts, w, plane, p)
    if p != 2:
        floor = 1e-12
        for _ in range(max_iter):
            dist = plane.distance(pts)
            rw = w * np.maximum(dist, floor) ** (p - 2)
            trial = pca_plane(pts, rw, d)
            tval = _beta_power(pts, w, trial, p)
            if not tval < val:
                break
            gain = val - tval
            plane, val = trial, tval
            if gain <= tol * max(val, 1e-300):
                break
    return BetaResult(max(val, 0.0) ** (1.0 / p), _from_unit(plane, b), float(p))
