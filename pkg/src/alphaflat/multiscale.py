"""Coefficients across scales: Jones sums, classification and stopping-time diagnostics."""

from __future__ import annotations

import math
import warnings
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from .coefficients import AlphaResult, FitConfig, _from_unit, _to_unit, alpha, beta
from .geometry import AffinePlane, plane_angle
from .measure import Ball, DiscreteMeasure, density_ratio

CAVEAT = "finite-scale diagnostic: thresholds on finitely many scales cannot prove or disprove rectifiability"


@dataclass(frozen=True)
class RadiusGrid:
    """Radii ``r_max * 2^(-i / per_octave)`` for ``i = 0, 1, ...`` down to ``r_min``."""

    r_min: float
    r_max: float = 1.0
    per_octave: int = 2

    def __post_init__(self):
        if not 0 < self.r_min < self.r_max:
            raise ValueError(f"need 0 < r_min < r_max, got {self.r_min!r}, {self.r_max!r}")
        if self.per_octave < 1:
            raise ValueError("per_octave must be at least 1")

    @property
    def radii(self) -> np.ndarray:
        count = int(math.floor(self.per_octave * math.log2(self.r_max / self.r_min) + 1e-9)) + 1
        return self.r_max * 2.0 ** (-np.arange(count) / self.per_octave)

    @property
    def weight(self) -> float:
        """Log-uniform quadrature weight of one grid scale for ``dr / r``."""
        return math.log(2.0) / self.per_octave

    def __len__(self) -> int:
        return len(self.radii)

    def to_json(self) -> dict:
        return {"r_min": self.r_min, "r_max": self.r_max, "per_octave": self.per_octave}


def default_grid(mu, r_max: float = 1.0, per_octave: int = 2) -> RadiusGrid:
    """Grid from ``r_max`` down to the measure's resolution floor."""
    floor = mu.resolution_floor()
    if not floor > 0:
        raise ValueError("measure has no resolvable scale (fewer than two distinct atoms)")
    return RadiusGrid(min(floor, r_max / 2), r_max, per_octave)


# ---------------------------------------------------------------------------
# profiles


@dataclass
class MultiscaleProfile:
    point: np.ndarray
    grid: RadiusGrid
    alphas: np.ndarray
    betas: np.ndarray
    thetas: np.ndarray
    doubling: np.ndarray
    flags: list
    statuses: list
    jones_alpha: float
    jones_beta: float
    planes: list = field(default_factory=list, repr=False)

    @property
    def radii(self) -> np.ndarray:
        return self.grid.radii

    @property
    def usable(self) -> np.ndarray:
        return np.array([f == "" for f in self.flags], dtype=bool)

    def rows(self) -> list:
        return [
            {
                "radius": float(r),
                "alpha": float(a),
                "beta2": float(b),
                "theta": float(t),
                "doubling": float(m),
                "flag": f,
                "status": s,
            }
            for r, a, b, t, m, f, s in zip(
                self.radii, self.alphas, self.betas, self.thetas, self.doubling, self.flags, self.statuses
            )
        ]


class AlphaCache:
    """Scale-free alpha results keyed by a source's ``view_key``; fits are reused across points and scales."""

    def __init__(self):
        self._store = {}
        self.hits = 0

    def get(self, source, b: Ball, d: int, cfg: FitConfig, seeds=()) -> AlphaResult:
        key_fn = getattr(source, "view_key", None)
        if key_fn is None:
            return alpha(source, b, d, cfg, seeds)
        key = (key_fn(b.center, b.radius), d, cfg)
        hit = self._store.get(key)
        if hit is None:
            res = alpha(source, b, d, cfg, seeds)
            mass = source.mass_in(b.center, b.radius)
            unit_c = res.c_best * b.radius**d / mass if mass > 0 else 0.0
            self._store[key] = (res.alpha, unit_c, _to_unit(res.plane_best, b), res.status)
            return res
        self.hits += 1
        a, unit_c, unit_plane, status = hit
        mass = source.mass_in(b.center, b.radius)
        return AlphaResult(
            alpha=a,
            c_best=unit_c * mass / b.radius**d,
            plane_best=_from_unit(unit_plane, b),
            f_value=a * b.radius * mass,
            status=status,
        )


def profile(
    mu,
    x,
    grid: RadiusGrid,
    d: int = 1,
    cfg: FitConfig = FitConfig(),
    warm: bool = True,
    cache: AlphaCache | None = None,
    with_beta: bool = True,
) -> MultiscaleProfile:
    """alpha, beta_2, density and doubling at every grid radius around ``x``, with Jones sums.

    Scales whose ball holds no mass are flagged ``zero-mass``; balls holding
    a single atom are flagged ``unresolved``. Flagged scales are left out
    of the Jones sums. Each fit is seeded with the plane of the previous
    (larger) scale when ``warm`` is set.
    """
    x = np.asarray(x, dtype=float)
    radii = grid.radii
    k = len(radii)
    alphas, betas = np.full(k, np.nan), np.full(k, np.nan)
    thetas, doubling = np.zeros(k), np.full(k, np.nan)
    flags, statuses, planes = [""] * k, [""] * k, [None] * k
    prev = None
    for i, r in enumerate(radii):
        stats = density_ratio(mu, x, float(r), d)
        thetas[i], doubling[i] = stats.theta, stats.doubling_ratio
        if stats.mass <= 0:
            flags[i] = "zero-mass"
            continue
        b = Ball(x, float(r))
        if getattr(mu, "flat_in", None) is None and len(mu.local_view(x, float(r))) < 2:
            flags[i] = "unresolved"
            continue
        seeds = (prev,) if (warm and prev is not None) else ()
        res = cache.get(mu, b, d, cfg, seeds) if cache is not None else alpha(mu, b, d, cfg, seeds)
        alphas[i], statuses[i], planes[i] = res.alpha, res.status, res.plane_best
        prev = res.plane_best
        if with_beta:
            betas[i] = beta(mu, b, d, 2.0).beta
    if flags[-1] == "zero-mass":
        warnings.warn(f"no mass at the smallest scale around {x.tolist()}", stacklevel=2)
    ok = np.array([f == "" for f in flags], dtype=bool)
    w = grid.weight
    jones_a = float(math.fsum(alphas[ok] ** 2) * w)
    jones_b = float(math.fsum(betas[ok] ** 2) * w) if with_beta else math.nan
    return MultiscaleProfile(x, grid, alphas, betas, thetas, doubling, flags, statuses, jones_a, jones_b, planes)


# ---------------------------------------------------------------------------
# classification


@dataclass(frozen=True)
class ClassifyThresholds:
    j_max: float = 0.5
    m_max: float = 8.0
    tau: float = 0.05
    pass_fraction: float = 0.9

    def to_json(self) -> dict:
        return dict(self.__dict__)


@dataclass
class PointVerdict:
    point: list
    jones_alpha: float
    max_doubling: float
    theta_fine: float
    passed: bool
    flags: list
    resolved_scales: int

    def to_json(self) -> dict:
        return dict(self.__dict__)


@dataclass
class ClassifyReport:
    points: list
    pass_fraction: float
    flag_counts: dict
    dominant_flag: str | None
    verdict: str
    thresholds: ClassifyThresholds
    caveat: str = CAVEAT

    def to_json(self) -> dict:
        return {
            "verdict": self.verdict,
            "caveat": self.caveat,
            "pass_fraction": self.pass_fraction,
            "flag_counts": self.flag_counts,
            "dominant_flag": self.dominant_flag,
            "thresholds": self.thresholds.to_json(),
            "points": [p.to_json() for p in self.points],
        }


def verdict_for(prof: MultiscaleProfile, th: ClassifyThresholds, d: int) -> PointVerdict:
    ok = prof.usable
    dbl = prof.doubling[ok & np.isfinite(prof.doubling)]
    max_dbl = float(dbl.max()) if len(dbl) else math.nan
    theta_fine = float(prof.thetas[-1])
    flags = []
    if prof.jones_alpha > th.j_max:
        flags.append("jones")
    if max_dbl > th.m_max:
        flags.append("doubling")
    if theta_fine <= th.tau:
        flags.append("low-density")
    passed = bool(ok.any() and prof.jones_alpha <= th.j_max and not max_dbl > th.m_max)
    return PointVerdict(prof.point.tolist(), prof.jones_alpha, max_dbl, theta_fine, passed, flags, int(ok.sum()))


def summarize(verdicts: list, th: ClassifyThresholds) -> ClassifyReport:
    """Pool point verdicts into a report.

    A point passes when its Jones sum and doubling stay under the
    thresholds. The measure is called consistent with rectifiability when
    enough points pass and low density at the finest scale is rare, since
    density collapse is the signature of a singular measure.
    """
    resolved = [v for v in verdicts if v.resolved_scales > 0]
    counts = Counter(f for v in verdicts for f in v.flags)
    dominant = max(sorted(counts), key=lambda f: counts[f]) if counts else None
    if not resolved:
        return ClassifyReport(verdicts, 0.0, dict(counts), dominant, "insufficient data", th)
    frac = sum(v.passed for v in verdicts) / len(verdicts)
    low = counts.get("low-density", 0) / len(verdicts)
    good = frac >= th.pass_fraction and low <= 1.0 - th.pass_fraction
    return ClassifyReport(
        verdicts, frac, dict(counts), dominant, "consistent-with-rectifiable" if good else "fails-criteria", th
    )


def classify(
    mu,
    sample,
    grid: RadiusGrid | None,
    d: int = 1,
    thresholds: ClassifyThresholds = ClassifyThresholds(),
    cfg: FitConfig = FitConfig(),
    profiles: list | None = None,
) -> ClassifyReport:
    """Per-point Jones and doubling verdicts plus a pooled label; see ``summarize``."""
    sample = [np.asarray(p, dtype=float) for p in sample]
    if not sample:
        raise ValueError("classify needs at least one sample point")
    if profiles is None:
        if grid is None:
            return summarize([PointVerdict(p.tolist(), 0.0, math.nan, 0.0, False, [], 0) for p in sample], thresholds)
        cache = AlphaCache()
        profiles = [profile(mu, p, grid, d, cfg, cache=cache, with_beta=False) for p in sample]
    return summarize([verdict_for(pr, thresholds, d) for pr in profiles], thresholds)


# ---------------------------------------------------------------------------
# stopping-time diagnostics


@dataclass(frozen=True)
class StopThresholds:
    epsilon: float = 1e-3
    tau: float = 0.05
    A: float = 20.0
    C1: float = 4.0

    def __post_init__(self):
        if min(self.epsilon, self.tau, self.A, self.C1) <= 0:
            raise ValueError("stopping thresholds must be positive")

    def to_json(self) -> dict:
        return dict(self.__dict__)


@dataclass
class StopDiagnosis:
    point: list
    delta: float
    d_reg: float
    verdicts: list  # per radius: sorted list of flags among ND, LD, HD, BA
    thresholds: StopThresholds
    resolution: float

    def to_json(self) -> dict:
        return {
            "point": self.point,
            "delta": self.delta,
            "d_reg": self.d_reg,
            "verdicts": self.verdicts,
            "thresholds": self.thresholds.to_json(),
            "resolution": self.resolution,
        }


def regularized_distance(base, deltas) -> np.ndarray:
    """``d(x) = min_y (delta(y) + |x - y|)`` over the base points; 1-Lipschitz and at most ``delta``."""
    pts = np.atleast_2d(np.asarray(base, dtype=float))
    dl = np.asarray(deltas, dtype=float)
    dist = np.linalg.norm(pts[:, None, :] - pts[None, :, :], axis=2)
    return np.min(dl[None, :] + dist, axis=1)


def stopping_time(
    mu: DiscreteMeasure,
    base,
    grid: RadiusGrid,
    thresholds: StopThresholds = StopThresholds(),
    reference_plane: AffinePlane | None = None,
    d: int = 1,
    good_mask=None,
    cfg: FitConfig = FitConfig(),
) -> list:
    """Flag every grid ball around every base point and derive the stopping radius.

    ND: at least ``epsilon^(1/2)`` of the ball's mass lies off the good set
    (needs ``good_mask``, a boolean mask or index list over atoms).
    LD / HD: density ratio at most ``tau`` / at least ``A``.
    BA: the fitted plane makes an angle of at least ``epsilon^(1/4)`` with
    ``reference_plane`` (needs the plane).
    ``delta`` is the largest flagged radius, 0 if none.
    """
    th = thresholds
    radii = grid.radii
    if radii[0] >= th.C1:
        raise ValueError(f"grid radii must stay below C1 = {th.C1}")
    base = [np.asarray(p, dtype=float) for p in base]
    good = None
    if good_mask is not None:
        gm = np.asarray(good_mask)
        good = gm if gm.dtype == bool else np.isin(np.arange(len(mu)), gm)
        if len(good) != len(mu):
            raise ValueError("good_mask must cover every atom")
    nd_level = math.sqrt(th.epsilon)
    ba_level = th.epsilon ** 0.25
    out = []
    cache = AlphaCache()
    for x in base:
        verdicts, delta, prev = [], 0.0, None
        for r in radii:
            r = float(r)
            flags = []
            idx = mu.inside(x, r)
            mass = float(mu.weights[idx].sum())
            theta = mass / r**d
            if good is not None and mass > 0:
                off = float(mu.weights[idx][~good[idx]].sum())
                if off >= nd_level * mass:
                    flags.append("ND")
            if theta <= th.tau:
                flags.append("LD")
            if theta >= th.A:
                flags.append("HD")
            if reference_plane is not None and mass > 0 and len(idx) > 1:
                res = cache.get(mu, Ball(x, r), d, cfg, (prev,) if prev is not None else ())
                prev = res.plane_best
                if plane_angle(res.plane_best, reference_plane) >= ba_level:
                    flags.append("BA")
            if flags and r > delta:
                delta = r
            verdicts.append(flags)
        out.append([x, delta, verdicts])
    d_reg = regularized_distance([o[0] for o in out], [o[1] for o in out]) if out else []
    step = 2.0 ** (1.0 / grid.per_octave)
    return [
        StopDiagnosis(o[0].tolist(), o[1], float(dr), o[2], th, step)
        for o, dr in zip(out, d_reg)
    ]
