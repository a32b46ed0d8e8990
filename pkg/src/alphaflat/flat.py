"""Bounded-Lipschitz distance ``F_B`` and 1-Wasserstein distance for discrete measures.

``F_B(sigma, nu)`` is the supremum of ``|int phi d(sigma - nu)|`` over
1-Lipschitz ``phi`` vanishing outside the open ball ``B``. On atoms
``p_i`` with net weights ``w_i`` it is the linear program

    max  sum_i v_i w_i
    s.t. |v_i - v_j| <= |p_i - p_j|,   |v_i| <= r_B - |p_i - x_B|,

which is exact: a feasible ``v`` extends to a function in ``Lip_1(B)`` by
clamping its McShane extension to ``+-dist(., B^c)``.

The LP dual is a transshipment in which mass may also be sent to, or
taken from, the boundary sphere at cost ``r_B - |p - x_B|``. With one
boundary node on each side it becomes a balanced transport problem, solved
here by network simplex; the potential form is kept as an independent
route (``method="lp"``).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import sparse
from scipy.optimize import linprog
from scipy.spatial import cKDTree
from scipy.spatial.distance import cdist

from . import _netsimplex
from .geometry import AffinePlane, project
from .measure import Ball, DiscreteMeasure, aggregate

MAX_SUPPORT = 2000
AGGREGATION_CELLS = 64
FEAS_TOL = 1e-9


class SolverError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# transport with a boundary node


def _caps(pts: np.ndarray, center: np.ndarray, radius: float) -> np.ndarray:
    return radius - np.linalg.norm(pts - center, axis=1)


def _cost_matrix(src, snk, cap_src, cap_snk) -> np.ndarray:
    m = np.empty((len(src) + 1, len(snk) + 1))
    if len(src) and len(snk):
        np.minimum(cdist(src, snk), cap_src[:, None] + cap_snk[None, :], out=m[:-1, :-1])
    m[:-1, -1] = cap_src
    m[-1, :-1] = cap_snk
    m[-1, -1] = 0.0
    return m


def _solve_transport(a: np.ndarray, b: np.ndarray, cost: np.ndarray):
    """Network simplex plus a double c-transform so the duals are feasible everywhere.

    Returns ``(value, u, v)`` with ``u_i + v_j <= cost_ij`` for all pairs.
    POT drops zero-weight nodes and leaves their potentials meaningless; the
    c-transform repairs them without lowering the dual objective.
    """
    sa, sb = a.sum(), b.sum()
    if sb > 0:
        b = b * (sa / sb)
    _, value, u, v, code = _netsimplex.emd_c(a, b, cost, _netsimplex.MAX_ITER, 1)
    if code != _netsimplex.OPTIMAL:
        raise SolverError(f"network simplex stopped with code {code}")
    live = a > 0
    v = np.min(cost[live] - u[live, None], axis=0)
    u = np.min(cost - v[None, :], axis=1)
    return float(value), u, v


def boundary_transport(src, src_w, snk, snk_w, center, radius: float):
    """``F_B`` between the positive part (``src``) and negative part (``snk``) of a signed measure.

    Returns ``(value, potential_src, potential_snk)``: an optimal feasible
    solution of the potential-form LP evaluated on both atom sets.
    """
    center = np.asarray(center, dtype=float)
    cap_src = _caps(src, center, radius)
    cap_snk = _caps(snk, center, radius)
    cost = _cost_matrix(src, snk, cap_src, cap_snk)
    a = np.append(src_w, snk_w.sum())
    b = np.append(snk_w, src_w.sum())
    value, u, v = _solve_transport(a, b, cost)
    # single node potential: phi(z) = min_k d(z, k) - v_k over sink-side nodes,
    # shifted so that the boundary node sits at zero
    phi_bnd = u[-1]
    if len(snk):
        inner = np.minimum(cdist(snk, snk), cap_snk[:, None] + cap_snk[None, :])
        phi_snk = np.minimum((inner - v[None, :-1]).min(axis=1), cap_snk - v[-1])
    else:
        phi_snk = np.zeros(0)
    return value, u[:-1] - phi_bnd, phi_snk - phi_bnd


# ---------------------------------------------------------------------------
# the potential-form LP


def _potential_lp(pts: np.ndarray, w: np.ndarray, center: np.ndarray, radius: float):
    k = len(pts)
    cap = _caps(pts, center, radius)
    if k == 1:
        v = np.array([cap[0] if w[0] >= 0 else -cap[0]])
        return float(v @ w), v
    i, j = np.triu_indices(k, 1)
    dist = np.linalg.norm(pts[i] - pts[j], axis=1)
    m = len(i)
    rows = np.repeat(np.arange(2 * m), 2)
    cols = np.empty(4 * m, dtype=np.intp)
    vals = np.empty(4 * m)
    cols[0::4], cols[1::4], cols[2::4], cols[3::4] = i, j, i, j
    vals[0::4], vals[1::4], vals[2::4], vals[3::4] = 1.0, -1.0, -1.0, 1.0
    a_ub = sparse.csr_matrix((vals, (rows, cols)), shape=(2 * m, k))
    b_ub = np.repeat(dist, 2)
    res = linprog(-w, A_ub=a_ub, b_ub=b_ub, bounds=np.column_stack([-cap, cap]), method="highs")
    if res.status != 0:
        raise SolverError(f"HiGHS failed: {res.message}")
    return float(-res.fun), np.asarray(res.x)


# ---------------------------------------------------------------------------
# public F_B


@dataclass(frozen=True)
class BLResult:
    value: float
    witness: np.ndarray
    points: np.ndarray
    weights: np.ndarray
    status: str
    error_bound: float = 0.0

    def max_violation(self, ball: Ball) -> float:
        """Largest violation of any LP constraint by the witness."""
        v = self.witness
        if len(v) == 0:
            return 0.0
        cap = _caps(self.points, ball.center, ball.radius)
        worst = float(np.max(np.abs(v) - cap))
        if len(v) > 1:
            dv = np.abs(v[:, None] - v[None, :]) - cdist(self.points, self.points)
            worst = max(worst, float(dv.max()))
        return max(worst, 0.0)

    def to_json(self) -> dict:
        return {
            "value": self.value,
            "status": self.status,
            "points": self.points.tolist(),
            "net_weights": self.weights.tolist(),
            "witness": self.witness.tolist(),
        }


def _net_support(sigma: DiscreteMeasure, nu: DiscreteMeasure):
    pts = np.vstack([sigma.points, nu.points])
    w = np.concatenate([sigma.weights, -nu.weights])
    uniq, inv = np.unique(pts, axis=0, return_inverse=True)
    net = np.bincount(inv.reshape(-1), weights=w, minlength=len(uniq))
    return uniq, net


def bl_distance(
    sigma: DiscreteMeasure,
    nu: DiscreteMeasure,
    b: Ball,
    method: str = "network",
    max_support: int = MAX_SUPPORT,
) -> BLResult:
    """``F_B(sigma, nu)`` with an optimal witness potential on the union support in ``b``."""
    s_in = sigma.subset(sigma.inside(b.center, b.radius))
    n_in = nu.subset(nu.inside(b.center, b.radius))
    n = sigma.ambient_dim
    if len(s_in) + len(n_in) == 0:
        return BLResult(0.0, np.zeros(0), np.zeros((0, n)), np.zeros(0), "degenerate")
    status, err = "optimal", 0.0
    pts, net = _net_support(s_in, n_in)
    if len(pts) > max_support:
        cell = b.radius / AGGREGATION_CELLS
        while True:
            s_agg = aggregate(s_in, cell, origin=b.center)
            n_agg = aggregate(n_in, cell, origin=b.center)
            pts, net = _net_support(s_agg, n_agg)
            if len(pts) <= max_support:
                break
            cell *= 2
        status = "capped-support"
        err = cell * math.sqrt(n) * (s_in.total_mass + n_in.total_mass)
    if method == "lp":
        value, witness = _potential_lp(pts, net, b.center, b.radius)
    elif method == "network":
        pos, neg = net > 0, net < 0
        value, v_src, v_snk = boundary_transport(pts[pos], net[pos], pts[neg], -net[neg], b.center, b.radius)
        witness = np.zeros(len(pts))
        witness[pos], witness[neg] = v_src, v_snk
        zero = ~(pos | neg)
        if np.any(zero):
            witness[zero] = _extend(pts[zero], pts[~zero], witness[~zero], b)
    else:
        raise ValueError(f"unknown method {method!r}")
    return BLResult(value, witness, pts, net, status, err)


def _extend(at: np.ndarray, pts: np.ndarray, vals: np.ndarray, b: Ball) -> np.ndarray:
    """McShane extension of a feasible potential, clamped to the support cap."""
    cap = _caps(at, b.center, b.radius)
    if len(pts) == 0:
        return np.zeros(len(at))
    upper = np.min(vals[None, :] + cdist(at, pts), axis=1)
    return np.clip(upper, -cap, cap)


# ---------------------------------------------------------------------------
# W1


def _mass_check(p: DiscreteMeasure, q: DiscreteMeasure, tol: float = 1e-9) -> None:
    for name, m in (("p", p), ("q", q)):
        if abs(m.total_mass - 1.0) > tol:
            raise ValueError(f"{name} must be a probability measure (mass {m.total_mass!r})")


def w1_distance(p: DiscreteMeasure, q: DiscreteMeasure, method: str = "lp") -> float:
    """Kantorovich 1-Wasserstein distance between probability measures.

    ``method="lp"`` solves the transport-plan LP with HiGHS;
    ``method="network"`` uses network simplex.
    """
    _mass_check(p, q)
    cost = cdist(p.points, q.points)
    if method == "network":
        a = np.ascontiguousarray(p.weights)
        b = np.ascontiguousarray(q.weights * (a.sum() / q.weights.sum()))
        _, value, _, _, code = _netsimplex.emd_c(a, b, np.ascontiguousarray(cost), _netsimplex.MAX_ITER, 1)
        if code != _netsimplex.OPTIMAL:
            raise SolverError(f"network simplex stopped with code {code}")
        return float(value)
    if method != "lp":
        raise ValueError(f"unknown method {method!r}")
    k, m = cost.shape
    rows = sparse.kron(sparse.eye(k), np.ones((1, m)))
    cols = sparse.kron(np.ones((1, k)), sparse.eye(m))
    a_eq = sparse.vstack([rows, cols]).tocsr()
    b_eq = np.concatenate([p.weights, q.weights])
    res = linprog(cost.ravel(), A_eq=a_eq, b_eq=b_eq, bounds=(0, None), method="highs")
    if res.status != 0:
        raise SolverError(f"HiGHS failed: {res.message}")
    return float(res.fun)


# ---------------------------------------------------------------------------
# flat measures


def slice_geometry(plane: AffinePlane, ball: Ball):
    """Center and radius of ``plane ∩ ball``; radius 0 when they miss."""
    o = project(ball.center, plane)
    h = float(np.linalg.norm(o - ball.center))
    if h >= ball.radius:
        return o, 0.0
    return o, math.sqrt((ball.radius - h) * (ball.radius + h))


def unit_ball_volume(d: int) -> float:
    return math.pi ** (d / 2) / math.gamma(d / 2 + 1)


def _fill_1d(nodes: np.ndarray, ell: float, step: float) -> np.ndarray:
    """Add nodes so that consecutive gaps on (-ell, ell) never exceed ``step``."""
    if len(nodes) == 0:
        count = max(1, math.ceil(2 * ell / step))
        return -ell + (np.arange(count) + 0.5) * (2 * ell / count)
    pieces = []
    slack = step * (1 + 1e-9)
    head = nodes[0] + ell
    if head > slack:
        count = math.ceil(head / step)
        pieces.append(-ell + (np.arange(count) + 0.5) * (head / count))
    for lo, hi in zip(nodes[:-1], nodes[1:]):
        pieces.append([lo])
        gap = hi - lo
        if gap > slack:
            count = math.ceil(gap / step)
            pieces.append(lo + np.arange(1, count) * (gap / count))
    pieces.append([nodes[-1]])
    tail = ell - nodes[-1]
    if tail > slack:
        count = math.ceil(tail / step)
        pieces.append(ell - (np.arange(count)[::-1] + 0.5) * (tail / count))
    return np.concatenate([np.asarray(p, dtype=float) for p in pieces])


def quadrature_nodes(plane: AffinePlane, ball: Ball, quad: int = 64, anchors=None):
    """Unit-density quadrature of ``H^d`` on ``plane ∩ ball``.

    Nodes are the projections of ``anchors`` that fall in the slice,
    completed by fill nodes so no cell is wider than ``r_B / quad``; with no
    anchors the nodes form a regular midpoint grid. Weights are cell
    volumes and sum to the exact slice volume. Returns ``(nodes, weights)``.
    """
    d, n = plane.dim, plane.ambient_dim
    o, ell = slice_geometry(plane, ball)
    if ell <= 0:
        return np.zeros((0, n)), np.zeros(0)
    step = ball.radius / quad
    coords = np.zeros((0, d))
    if anchors is not None and len(anchors):
        coords = (np.asarray(anchors, dtype=float) - o) @ plane.basis.T
        coords = coords[np.linalg.norm(coords, axis=1) < ell]
    if d == 1:
        t = np.sort(coords[:, 0])
        if len(t) > 1:
            t = t[np.concatenate([[True], np.diff(t) > 1e-12 * ell])]
        t = _fill_1d(t, ell, step)
        edges = np.concatenate([[-ell], 0.5 * (t[1:] + t[:-1]), [ell]])
        weights = np.diff(edges)
        return o + np.outer(t, plane.basis[0]), weights
    return _quadrature_nd(o, ell, plane, step, coords, d)


def _quadrature_nd(o, ell, plane, step, coords, d):
    count = max(1, math.ceil(2 * ell / step))
    axis = -ell + (np.arange(count) + 0.5) * (2 * ell / count)
    grid = np.stack(np.meshgrid(*([axis] * d), indexing="ij"), axis=-1).reshape(-1, d)
    grid = grid[np.linalg.norm(grid, axis=1) < ell]
    nodes = np.vstack([coords, grid]) if len(coords) else grid
    nodes = np.unique(np.round(nodes / (1e-12 * ell)) * (1e-12 * ell), axis=0)
    fine_count = 4 * count
    faxis = -ell + (np.arange(fine_count) + 0.5) * (2 * ell / fine_count)
    fine = np.stack(np.meshgrid(*([faxis] * d), indexing="ij"), axis=-1).reshape(-1, d)
    fine = fine[np.linalg.norm(fine, axis=1) < ell]
    _, owner = cKDTree(nodes).query(fine)
    counts = np.bincount(owner, minlength=len(nodes)).astype(float)
    keep = counts > 0
    nodes, counts = nodes[keep], counts[keep]
    weights = counts * (unit_ball_volume(d) * ell**d / counts.sum())
    return o + nodes @ plane.basis, weights


@dataclass(frozen=True)
class FlatMeasure:
    """``density * H^d`` restricted to ``plane``, discretized inside ``ball``."""

    density: float
    plane: AffinePlane
    ball: Ball
    quadrature: DiscreteMeasure


def flat_measure(density: float, plane: AffinePlane, ball: Ball, quad: int = 64, anchors=None) -> FlatMeasure:
    if density < 0:
        raise ValueError("density must be nonnegative")
    nodes, w = quadrature_nodes(plane, ball, quad, anchors)
    return FlatMeasure(float(density), plane, ball, DiscreteMeasure(nodes, density * w, plane.ambient_dim))


class FlatFit:
    """``c -> F_B(mu, c * Q)`` for fixed atoms of ``mu`` and fixed unit-density nodes ``Q``.

    The cost matrix is built once; each evaluation is one transport solve and
    also yields the affine minorant of the (convex, piecewise linear)
    function from the optimal dual.
    """

    def __init__(self, pts, w, nodes, q, center, radius):
        center = np.asarray(center, dtype=float)
        self.w = np.ascontiguousarray(w, dtype=float)
        self.q = np.ascontiguousarray(q, dtype=float)
        self.mass = float(self.w.sum())
        self.qmass = float(self.q.sum())
        cap_p = _caps(pts, center, radius)
        cap_q = _caps(nodes, center, radius)
        self.cost = np.ascontiguousarray(_cost_matrix(pts, nodes, cap_p, cap_q))
        self.at_zero = float(self.w @ cap_p)
        self.calls = 0

    def __call__(self, c: float):
        """Return ``(F(c), slope)`` with ``F(c') >= F(c) + slope * (c' - c)`` for all ``c' >= 0``."""
        self.calls += 1
        a = np.append(self.w, c * self.qmass)
        b = np.append(c * self.q, self.mass)
        value, u, v = _solve_transport(a, b, self.cost)
        slope = self.qmass * u[-1] + float(self.q @ v[:-1])
        return value, slope


def minimize_convex_pwl(fun, c_hint: float, c_hi: float, rel_tol: float = 1e-6, max_iter: int = 60):
    """Minimize a convex piecewise-linear ``fun`` on ``[0, inf)`` by 1-D cutting planes.

    ``fun(c)`` returns ``(value, subgradient)``. The search starts from
    ``c_hint`` inside ``[0, c_hi]`` and widens the upper end by 4x when the
    minimum lies beyond it. Stops when the best value is within ``rel_tol``
    of the certified lower bound. Returns ``(c, value, lower_bound)``.
    """
    cache = {}

    def f(c):
        if c not in cache:
            cache[c] = fun(c)
        return cache[c]

    best_c, best = None, math.inf

    def note(c, val):
        nonlocal best_c, best
        if val < best:
            best_c, best = c, val

    c0 = min(max(c_hint, 0.0), c_hi)
    v0, g0 = f(c0)
    note(c0, v0)
    left = right = None
    if g0 < 0:
        left = (c0, v0, g0)
    elif g0 > 0:
        right = (c0, v0, g0)
    else:
        return c0, v0, v0
    if right is None:
        # grow geometrically from the hint; the bracket edge is only a fallback scale
        hi = 1.2 * c0 if c0 > 0 else c_hi
        for _ in range(60):
            vh, gh = f(hi)
            note(hi, vh)
            if gh >= 0:
                right = (hi, vh, gh)
                break
            left = (hi, vh, gh)
            hi *= 2 if hi < c_hi else 4
        else:
            return best_c, best, -math.inf
        if gh == 0:
            return hi, vh, vh
    if left is None:
        lo = c0 / 1.2
        while left is None:
            if lo < 1e-3 * c0:
                lo = 0.0
            vl, gl = f(lo)
            note(lo, vl)
            if gl < 0:
                left = (lo, vl, gl)
            elif lo == 0.0:
                return 0.0, vl, vl
            else:
                right = (lo, vl, gl)
                lo /= 4
    lower = -math.inf
    for _ in range(max_iter):
        (cl, fl, gl), (cr, fr, gr) = left, right
        cx = (fr - gr * cr - fl + gl * cl) / (gl - gr)
        lower = fl + gl * (cx - cl)
        if best - lower <= rel_tol * max(abs(best), 1e-300) or not cl < cx < cr:
            break
        if cr - cl <= rel_tol * max(cx, 1e-300):
            break
        vx, gx = f(cx)
        note(cx, vx)
        if gx < 0:
            left = (cx, vx, gx)
        elif gx > 0:
            right = (cx, vx, gx)
        else:
            return cx, vx, vx
    return best_c, best, min(lower, best)
