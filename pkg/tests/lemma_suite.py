"""Nested-ball instances and the checks run on them by the acceptance suite.

Run as a script to (re)calibrate the frozen constants:

    python tests/lemma_suite.py --calibrate

The constants are measured on the calibration seed, doubled, and written to
``fixtures/lemma_constants.json``; the acceptance run uses a different seed.
"""

from __future__ import annotations

import argparse
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from alphaflat.coefficients import FitConfig, alpha
from alphaflat.flat import bl_distance, flat_measure
from alphaflat.geometry import plane_angle, plane_local_hausdorff
from alphaflat.measure import Ball, DiscreteMeasure

FIXTURE = Path(__file__).parent / "fixtures" / "lemma_constants.json"
CALIBRATION_SEED = 1
CHECK_SEED = 2
CFG = FitConfig(quad=16, max_atoms=128)
UNIT = Ball([0.0, 0.0], 1.0)


@dataclass
class Instance:
    mu: DiscreteMeasure
    x: np.ndarray
    r: float


def make_instance(rng) -> Instance:
    """A near-flat line measure (jitter, noise, optional kink and outliers) and a ball with B(x,2r) inside the unit ball."""
    k = 300
    ang = rng.uniform(0, np.pi)
    u = np.array([np.cos(ang), np.sin(ang)])
    nrm = np.array([-u[1], u[0]])
    t = np.linspace(-1.1, 1.1, k) + rng.uniform(-0.1, 0.1, k) * 2.2 / k
    kink = rng.uniform(-0.1, 0.1) * (rng.uniform() < 0.5)
    h = rng.uniform(-0.1, 0.1) + kink * np.maximum(t - rng.uniform(-0.5, 0.5), 0)
    h = h + rng.uniform(0, 0.004) * rng.standard_normal(k)
    pts = t[:, None] * u + h[:, None] * nrm
    w = rng.uniform(0.95, 1.05, k) * 2.2 / k
    if rng.uniform() < 0.5:
        rad = np.sqrt(rng.uniform(0, 1, 3))
        a = rng.uniform(0, 2 * np.pi, 3)
        pts = np.vstack([pts, np.column_stack([rad * np.cos(a), rad * np.sin(a)])])
        w = np.concatenate([w, np.full(3, rng.uniform(0, 3) * 2.2 / k)])
    mu = DiscreteMeasure(pts, w)
    r = rng.uniform(0.15, 0.3)
    cand = pts[:k][np.linalg.norm(pts[:k], axis=1) < 1 - 2 * r]
    x = cand[rng.integers(len(cand))] + rng.uniform(-0.02, 0.02, 2)
    if np.linalg.norm(x) > 1 - 2 * r:
        x = x * (1 - 2 * r) / np.linalg.norm(x) * 0.999
    return Instance(mu, x, float(r))


def _theta(mu, c, r):
    return mu.mass_in(c, r) / r


def _inner_balls(rng, center, radius, count=5):
    """Pairs (y, s) with y in B(center, radius/2) and B(y, 2s) inside B(center, radius)."""
    out = []
    for _ in range(count):
        v = rng.standard_normal(2)
        y = center + v / np.linalg.norm(v) * rng.uniform(0, radius / 2)
        room = radius - np.linalg.norm(y - center)
        out.append((y, rng.uniform(0.05, 0.5) * room))
    return out


def evaluate(inst: Instance, rng) -> dict:
    """Quantities for every lemma on one instance; ratios are the constants the bounds need."""
    mu, x, r = inst.mu, inst.x, inst.r
    small = Ball(x, r)
    big = alpha(mu, UNIT, 1, CFG)
    sm = alpha(mu, small, 1, CFG)
    m_small, m_big = mu.mass_in(x, r), mu.mass_in([0, 0], 1.0)
    out = {"alpha_small": sm.alpha, "alpha_big": big.alpha}

    # monotonicity: slack = solver agreement budget + measured quadrature mismatch
    ratio = m_big / (r * m_small)
    q_small = flat_measure(big.c_best, big.plane_best, small, CFG.quad, mu.local_view(x, r).points + x).quadrature
    q_big = flat_measure(big.c_best, big.plane_best, UNIT, CFG.quad, mu.local_view([0, 0], 1.0).points).quadrature
    mismatch = abs(bl_distance(mu, q_small, small).value - bl_distance(mu, q_big, small).value) / (r * m_small)
    out["monotone_excess"] = sm.alpha - ratio * big.alpha * (1 + 2 * CFG.agreement_tol) - mismatch

    # plane meets the inner ball whenever F is below s * mu(B(y, s))
    misses = 0
    checked = 0
    for res, c, rad in ((big, np.zeros(2), 1.0), (sm, x, r)):
        for y, s in _inner_balls(rng, c, rad):
            if res.f_value < s * mu.mass_in(y, s):
                checked += 1
                if not res.plane_best.distance(y[None, :])[0] < 2 * s:
                    misses += 1
    out["meets_checked"], out["meets_missed"] = checked, misses

    # density of the fitted plane against the density ratios
    dens = []
    for res, c, rad in ((big, np.zeros(2), 1.0), (sm, x, r)):
        if res.alpha < mu.mass_in(c, rad / 8) / (8 * mu.mass_in(c, rad)):
            dens.append(max(res.c_best / _theta(mu, c, rad), _theta(mu, c, rad / 2) / res.c_best))
    out["density_ratio"] = max(dens) if dens else None

    # plane closeness and density closeness across the nested pair
    out["angle_ratio"] = out["density_gap_ratio"] = None
    if sm.f_value < r / 8 * mu.mass_in(x, r / 8):
        lhs = plane_angle(sm.plane_best, big.plane_best) + plane_local_hausdorff(sm.plane_best, big.plane_best, x, r / 2)
        out["angle_ratio"] = lhs / ((sm.f_value + big.f_value) / (r * mu.mass_in(x, r / 2)))
        if big.f_value < mu.mass_in([0, 0], 1 / 8) / 8:
            scale = (sm.f_value + big.f_value) / r**2 * (1 + _theta(mu, [0, 0], 1.0) / _theta(mu, x, r / 2)) / r
            out["density_gap_ratio"] = abs(sm.c_best - big.c_best) / scale
    return out


def run(seed: int, count: int = 100) -> list:
    rng = np.random.default_rng(seed)
    return [evaluate(make_instance(rng), rng) for _ in range(count)]


def _max(rows, key):
    vals = [r[key] for r in rows if r[key] is not None]
    return max(vals) if vals else 0.0


def calibrate(count: int = 100) -> dict:
    rows = run(CALIBRATION_SEED, count)
    consts = {
        "seed": CALIBRATION_SEED,
        "instances": count,
        "density_K": max(8.0, 2 * _max(rows, "density_ratio")),
        "angle_C": 2 * _max(rows, "angle_ratio"),
        "density_gap_C": 2 * _max(rows, "density_gap_ratio"),
    }
    FIXTURE.parent.mkdir(exist_ok=True)
    FIXTURE.write_text(json.dumps(consts, indent=1) + "\n")
    return consts


def load_constants() -> dict:
    return json.loads(FIXTURE.read_text())


if __name__ == "__main__":
    ap = argparse.ArgumentParser()
    ap.add_argument("--calibrate", action="store_true")
    ap.add_argument("--count", type=int, default=100)
    args = ap.parse_args()
    if args.calibrate:
        print(calibrate(args.count))
    else:
        rows = run(CHECK_SEED, args.count)
        print({k: _max(rows, k) for k in ("monotone_excess", "density_ratio", "angle_ratio", "density_gap_ratio")})
        print(math.fsum(r["meets_missed"] for r in rows), "misses of", sum(r["meets_checked"] for r in rows))
