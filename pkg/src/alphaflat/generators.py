"""Example measures with known structure.

* ``counterexample``: horizontal lines in the plane that split level by level,
  with heights kept as exact rationals so that splits far below double
  precision stay distinct.
* ``koch_variant``: snowflake-like polylines whose bump angle shrinks with the stage.
* ``lipschitz_graph`` and ``flat_sample``: rectifiable references.
"""

from __future__ import annotations

import bisect
import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .geometry import AffinePlane
from .measure import DiscreteMeasure

UNDERFLOW = 1e-300


class ConstraintError(ValueError):
    """A counterexample parameter violates one of the construction constraints."""


def _frac(v) -> Fraction:
    return v if isinstance(v, Fraction) else Fraction(v)


# ---------------------------------------------------------------------------
# parameters


@dataclass(frozen=True)
class CounterexampleSpec:
    levels: int
    a_seq: tuple
    h_seq: tuple
    window: float = 8.0
    samples_per_unit: int = 32

    def __post_init__(self):
        object.__setattr__(self, "a_seq", tuple(_frac(a) for a in self.a_seq))
        object.__setattr__(self, "h_seq", tuple(_frac(h) for h in self.h_seq))

    def validate(self) -> list:
        """Check every constraint; returns the min line gaps ``d_0..d_K`` or raises ``ConstraintError``."""
        k_max = self.levels
        if k_max < 0:
            raise ConstraintError("levels must be nonnegative")
        if len(self.a_seq) != k_max or len(self.h_seq) != k_max:
            raise ConstraintError(f"need {k_max} split weights and heights, got {len(self.a_seq)} and {len(self.h_seq)}")
        if not self.window > 0 or self.samples_per_unit < 1:
            raise ConstraintError("window and samples_per_unit must be positive")
        heights = [Fraction(0)]
        gaps = [Fraction(1)]  # one line: no pairwise gap, the unit is used
        for k, (a, h) in enumerate(zip(self.a_seq, self.h_seq), start=1):
            if not 0 < a < Fraction(1, 2):
                raise ConstraintError(f"split weight a_{k} = {float(a)!r} must lie strictly between 0 and 1/2")
            if not 0 < h < Fraction(1, 2):
                raise ConstraintError(f"split height h_{k} = {float(h)!r} must lie strictly between 0 and 1/2")
            d_prev = gaps[-1]
            if h > a ** (4 * k) * d_prev:
                raise ConstraintError(f"split-height bound h_k <= a_k^(4k) * d_(k-1) violated at level {k}")
            if h > Fraction(1, 2 ** (4 * (k - 1))) * d_prev:
                raise ConstraintError(f"gap-ratio bound (h_k / d_(k-1))^(1/4) <= 2^-(k-1) violated at level {k}")
            if float(h) < UNDERFLOW:
                raise ConstraintError(
                    f"split height h_{k} ~ {float(h):.3g} is below double precision range; "
                    f"at most {k - 1} levels are resolvable"
                )
            heights = sorted(heights + [y + h for y in heights])
            gaps.append(min(b - a_ for a_, b in zip(heights, heights[1:])))
        return gaps

    def to_json(self) -> dict:
        return {
            "levels": self.levels,
            "a_seq": [str(a) for a in self.a_seq],
            "h_seq": [str(h) for h in self.h_seq],
            "a_float": [float(a) for a in self.a_seq],
            "h_float": [float(h) for h in self.h_seq],
            "window": self.window,
            "samples_per_unit": self.samples_per_unit,
        }


def default_split_weight(j: int) -> Fraction:
    return Fraction(1, 2 * j + 2)


def resolvable_levels(limit: int = 64) -> int:
    """Largest K whose default split heights stay inside double precision."""
    d, heights = Fraction(1), [Fraction(0)]
    for k in range(1, limit + 1):
        a = default_split_weight(k)
        h = min(a ** (4 * k) * d, Fraction(1, 2 ** (4 * (k - 1))) * d) / 2
        if float(h) < UNDERFLOW:
            return k - 1
        heights = sorted(heights + [y + h for y in heights])
        d = min(b - a_ for a_, b in zip(heights, heights[1:]))
    return limit


def default_parameters(levels: int, window: float = 8.0, samples_per_unit: int = 32) -> CounterexampleSpec:
    """``a_j = 1/(2j+2)``; each ``h_k`` is half the tighter of the two height bounds."""
    if levels < 1:
        raise ValueError("levels must be at least 1")
    cap = resolvable_levels()
    if levels > cap:
        raise ConstraintError(f"split heights underflow past level {cap}; at most {cap} levels are resolvable")
    a_seq, h_seq = [], []
    d, heights = Fraction(1), [Fraction(0)]
    for k in range(1, levels + 1):
        a = default_split_weight(k)
        h = min(a ** (4 * k) * d, Fraction(1, 2 ** (4 * (k - 1))) * d) / 2
        a_seq.append(a)
        h_seq.append(h)
        heights = sorted(heights + [y + h for y in heights])
        d = min(b - a_ for a_, b in zip(heights, heights[1:]))
    return CounterexampleSpec(levels, tuple(a_seq), tuple(h_seq), window, samples_per_unit)


# ---------------------------------------------------------------------------
# exact line families


class LineFamily:
    """``sum_j c_j H^1`` on horizontal lines ``y = y_j``, truncated to ``|x| <= window``.

    Heights and coefficients are exact rationals. Queries compute height
    differences exactly before rounding, so a ball centred on a line sees
    its neighbours at their true relative distance however small.

    Local views sample each line at spacing ``radius / per_radius`` on a
    grid through the ball centre, with atom weights equal to the exact
    chord length of their cell. Lines closer than ``merge_tol * radius``
    are shown as one line at their weighted mean height.
    """

    def __init__(self, lines, window: float = 8.0, per_radius: int = 64, merge_tol: float = 1e-6):
        pairs = sorted((_frac(h), _frac(c)) for h, c in lines)
        if not pairs:
            raise ValueError("a line family needs at least one line")
        if any(c < 0 for _, c in pairs):
            raise ValueError("line coefficients must be nonnegative")
        self.heights = [h for h, _ in pairs]
        self.coefs = [c for _, c in pairs]
        self.window = float(window)
        self.per_radius = int(per_radius)
        self.merge_tol = float(merge_tol)
        self.ambient_dim = 2

    def __len__(self) -> int:
        return len(self.heights)

    def with_sampling(self, per_radius: int | None = None, merge_tol: float | None = None) -> "LineFamily":
        return LineFamily(
            zip(self.heights, self.coefs),
            self.window,
            self.per_radius if per_radius is None else per_radius,
            self.merge_tol if merge_tol is None else merge_tol,
        )

    def recentered(self, j: int) -> "LineFamily":
        """The same family with line ``j`` moved to height 0 (exact)."""
        y0 = self.heights[j]
        return LineFamily(((h - y0, c) for h, c in zip(self.heights, self.coefs)), self.window, self.per_radius, self.merge_tol)

    @property
    def total_mass(self) -> float:
        return float(sum(self.coefs)) * 2 * self.window

    def min_gap(self) -> float:
        if len(self.heights) < 2:
            return math.inf
        return float(min(b - a for a, b in zip(self.heights, self.heights[1:])))

    def resolution_floor(self) -> float:
        """Below a quarter of the smallest line gap every ball centred on the support sees a single line."""
        gap = self.min_gap()
        return gap / 4 if math.isfinite(gap) else self.window / 64

    # -- exact queries --

    def _near(self, cy: Fraction, radius: float):
        """``(dy, coef)`` for lines with ``|y_j - cy| < radius``; ``dy`` rounded only after the exact difference."""
        r = Fraction(radius)
        lo = bisect.bisect_right(self.heights, cy - r)
        hi = bisect.bisect_left(self.heights, cy + r)
        return [(float(self.heights[i] - cy), self.coefs[i]) for i in range(lo, hi)]

    def _x_range(self, cx: float, half: float):
        """Chord ends as offsets from ``cx``; clipping in offset space keeps tiny radii exact."""
        return max(-half, -self.window - cx), min(half, self.window - cx)

    def mass_in(self, center, radius: float) -> float:
        cx, cy = float(center[0]), Fraction(float(center[1]))
        total = 0.0
        for dy, c in self._near(cy, radius):
            half = radius * math.sqrt(max(0.0, 1.0 - (dy / radius) ** 2))
            lo, hi = self._x_range(cx, half)
            if hi > lo:
                total += float(c) * (hi - lo)
        return total

    def _merged(self, cy: Fraction, radius: float):
        near = self._near(cy, radius)
        groups = []
        for dy, c in near:
            if groups and dy - groups[-1][-1][0] < self.merge_tol * radius:
                groups[-1].append((dy, c))
            else:
                groups.append([(dy, c)])
        out = []
        for g in groups:
            cs = sum(c for _, c in g)
            if cs == 0:
                continue
            y = sum(dy * float(c) for dy, c in g) / float(cs)
            out.append((y, cs))
        return out

    def local_view(self, center, radius: float) -> DiscreteMeasure:
        cx, cy = float(center[0]), Fraction(float(center[1]))
        step = radius / self.per_radius
        pts, wts = [], []
        for dy, c in self._merged(cy, radius):
            half = radius * math.sqrt(max(0.0, 1.0 - (dy / radius) ** 2))
            lo, hi = self._x_range(cx, half)
            if not hi > lo:
                continue
            # grid points strictly inside the chord, weighted by their Voronoi cells
            k_lo = math.floor(lo / step) + 1
            k_hi = math.ceil(hi / step) - 1
            if k_hi < k_lo:
                xs = np.array([0.5 * (lo + hi)])
                left, right = np.array([lo]), np.array([hi])
            else:
                xs = np.arange(k_lo, k_hi + 1) * step
                left = xs - 0.5 * step
                right = xs + 0.5 * step
                left[0], right[-1] = lo, hi
            pts.append(np.column_stack([xs, np.full(len(xs), dy)]))
            wts.append(float(c) * (right - left))
        if not pts:
            return DiscreteMeasure.empty(2)
        return DiscreteMeasure(np.vstack(pts), np.concatenate(wts), 2)

    def flat_in(self, center, radius: float):
        """``(density, line)`` when the ball sees one line crossing it completely, else ``None``."""
        cx, cy = float(center[0]), Fraction(float(center[1]))
        merged = self._merged(cy, radius)
        if len(merged) != 1:
            return None
        dy, c = merged[0]
        half = radius * math.sqrt(max(0.0, 1.0 - (dy / radius) ** 2))
        lo, hi = self._x_range(cx, half)
        if lo > -half or hi < half:
            return None
        return float(c), AffinePlane([cx, float(cy) + dy], [[1.0, 0.0]])

    def view_key(self, center, radius: float):
        """Hashable description of the blown-up view; equal keys give identical normalized views."""
        cx, cy = float(center[0]), Fraction(float(center[1]))
        merged = self._merged(cy, radius)
        lo, hi = self._x_range(cx, radius)
        clip = (round(lo / radius, 9) if lo > -radius else None,
                round(hi / radius, 9) if hi < radius else None)
        return (self.per_radius, clip, tuple((repr(dy / radius), c) for dy, c in merged))

    # -- sampling --

    def support_points(self, m: int, seed: int = 0, x_range: float | None = None):
        """``m`` points drawn from the measure restricted to ``|x| <= x_range``: ``(x, line index)`` pairs."""
        rng = np.random.default_rng(seed)
        x_range = self.window / 4 if x_range is None else x_range
        probs = np.array([float(c) for c in self.coefs])
        probs /= probs.sum()
        idx = rng.choice(len(probs), size=m, p=probs)
        xs = rng.uniform(-x_range, x_range, size=m)
        return [(float(x), int(j)) for x, j in zip(xs, idx)]

    def to_measure(self, samples_per_unit: int = 32) -> DiscreteMeasure:
        """Uniform atoms on every line; heights rounded to double precision."""
        count = int(round(2 * self.window * samples_per_unit))
        step = 2 * self.window / count
        xs = -self.window + (np.arange(count) + 0.5) * step
        pts = [np.column_stack([xs, np.full(count, float(h))]) for h in self.heights]
        wts = [np.full(count, float(c) * step) for c in self.coefs]
        return DiscreteMeasure(np.vstack(pts), np.concatenate(wts), 2)

    def line_table(self) -> list:
        return [{"height": str(h), "height_float": float(h), "coef": str(c)} for h, c in zip(self.heights, self.coefs)]


@dataclass
class LevelMeasure:
    level: int
    lines: list  # (height, coefficient) as exact rationals
    family: LineFamily
    samples_per_unit: int = 32
    _measure: DiscreteMeasure | None = field(default=None, repr=False)

    @property
    def measure(self) -> DiscreteMeasure:
        if self._measure is None:
            self._measure = self.family.to_measure(self.samples_per_unit)
        return self._measure

    @property
    def max_coefficient(self) -> Fraction:
        return max(c for _, c in self.lines)

    def metadata(self) -> dict:
        return {"level": self.level, "lines": self.family.line_table(), "window": self.family.window}


def counterexample(spec: CounterexampleSpec, per_radius: int = 64) -> list:
    """Level measures ``mu_0..mu_K``: each line splits into itself (weight ``1 - a``) and a copy raised by ``h`` (weight ``a``)."""
    spec.validate()
    lines = [(Fraction(0), Fraction(1))]
    out = [LevelMeasure(0, list(lines), LineFamily(lines, spec.window, per_radius), spec.samples_per_unit)]
    for k, (a, h) in enumerate(zip(spec.a_seq, spec.h_seq), start=1):
        nxt = []
        for y, c in lines:
            nxt.append((y, (1 - a) * c))
            nxt.append((y + h, a * c))
        lines = sorted(nxt)
        out.append(LevelMeasure(k, list(lines), LineFamily(lines, spec.window, per_radius), spec.samples_per_unit))
    return out


# ---------------------------------------------------------------------------
# Koch variant


@dataclass(frozen=True)
class KochStage:
    stage: int
    vertices: np.ndarray
    angle: float
    segment_length: float
    total_length: float


def koch_polylines(stages: int, start=(0.0, 0.0), end=(1.0, 0.0)) -> list:
    """Polylines ``K_1..K_stages``; at stage ``k`` every segment becomes four with bump angle ``1/sqrt(k)``."""
    if stages < 1:
        raise ValueError("stages must be at least 1")
    verts = np.array([start, end], dtype=float)
    out = []
    for k in range(1, stages + 1):
        theta = 1.0 / math.sqrt(k)
        a, b = verts[:-1], verts[1:]
        seg = b - a
        length = np.linalg.norm(seg, axis=1, keepdims=True)
        u = seg / length
        nrm = np.column_stack([-u[:, 1], u[:, 0]])
        s = length / (2 + 2 * math.cos(theta))
        p1 = a + s * u
        peak = p1 + s * (math.cos(theta) * u + math.sin(theta) * nrm)
        p3 = b - s * u
        new = np.empty((4 * len(a) + 1, 2))
        new[0:-1:4], new[1::4], new[2::4], new[3::4] = a, p1, peak, p3
        new[-1] = verts[-1]
        verts = new
        lengths = np.linalg.norm(np.diff(verts, axis=0), axis=1)
        out.append(KochStage(k, verts, theta, float(lengths.max()), float(math.fsum(lengths))))
    return out


def polyline_measure(vertices: np.ndarray, samples_per_segment: int) -> DiscreteMeasure:
    """Normalized arclength on a polyline: ``samples_per_segment`` midpoint atoms per segment."""
    a, b = vertices[:-1], vertices[1:]
    lengths = np.linalg.norm(b - a, axis=1)
    t = (np.arange(samples_per_segment) + 0.5) / samples_per_segment
    pts = a[:, None, :] + t[None, :, None] * (b - a)[:, None, :]
    w = np.repeat(lengths / samples_per_segment, samples_per_segment)
    return DiscreteMeasure(pts.reshape(-1, 2), w / math.fsum(w), 2)


def koch_variant(stages: int, samples_per_segment: int = 8) -> list:
    """Normalized arclength measures on ``K_1..K_stages``."""
    return [polyline_measure(st.vertices, samples_per_segment) for st in koch_polylines(stages)]


# ---------------------------------------------------------------------------
# rectifiable references


def _pl_functions(rng, count: int, knots: int, slope: float):
    """``count`` random piecewise-linear functions on [-1, 1] with slopes in [-slope, slope]."""
    xk = np.linspace(-1.0, 1.0, knots + 1)
    slopes = rng.uniform(-slope, slope, size=(count, knots))
    vals = np.concatenate([np.zeros((count, 1)), np.cumsum(slopes * np.diff(xk), axis=1)], axis=1)
    vals -= vals.mean(axis=1, keepdims=True)
    return xk, vals, slopes


def lipschitz_graph(slope: float, n: int = 2, d: int = 1, atoms: int = 1024, seed: int = 0, knots: int = 16) -> DiscreteMeasure:
    """Graph of a random piecewise-linear ``Lip(slope)`` map ``[-1,1]^d -> R^(n-d)``, surface-area weighted.

    The map is a sum of one-variable piecewise-linear pieces, scaled so the
    whole map is ``slope``-Lipschitz. The random pieces depend only on
    ``(slope, n, d, knots, seed)``, so changing ``atoms`` refines the same graph.
    """
    if slope < 0:
        raise ValueError("slope must be nonnegative")
    if not 1 <= d < n:
        raise ValueError("need 1 <= d < n")
    k = n - d
    rng = np.random.default_rng(seed)
    per = slope / math.sqrt(d * k)
    xk, vals, slopes = _pl_functions(rng, d * k, knots, per)
    m = max(1, int(round(atoms ** (1.0 / d))))
    u = -1.0 + (np.arange(m) + 0.5) * (2.0 / m)
    grid = np.stack(np.meshgrid(*([u] * d), indexing="ij"), axis=-1).reshape(-1, d)
    f = np.zeros((len(grid), k))
    jac = np.zeros((len(grid), k, d))
    seg = np.clip(np.searchsorted(xk, grid, side="right") - 1, 0, knots - 1)
    for i in range(d):
        for j in range(k):
            row = i * k + j
            f[:, j] += np.interp(grid[:, i], xk, vals[row])
            jac[:, j, i] = slopes[row][seg[:, i]]
    gram = np.eye(d)[None] + np.einsum("pji,pjl->pil", jac, jac)
    area = np.sqrt(np.linalg.det(gram)) * (2.0 / m) ** d
    return DiscreteMeasure(np.hstack([grid, f]), area, n)


def flat_sample(n: int = 2, d: int = 1, atoms: int = 1024) -> DiscreteMeasure:
    """Uniform grid on ``[-1,1]^d x {0}`` with cell-volume weights."""
    return lipschitz_graph(0.0, n, d, atoms)
