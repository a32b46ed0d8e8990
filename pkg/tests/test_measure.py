import json
import math

import numpy as np
import pytest
from hypothesis import assume, given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from alphaflat.measure import (
    Ball,
    DiscreteMeasure,
    MeasureFormatError,
    aggregate,
    ball_mass,
    density_ratio,
    nn_spacing,
    read_measure,
    rescale,
    restrict,
    write_measure,
)

coords = st.floats(-4, 4, allow_nan=False, width=64)
weights = st.floats(0, 3, allow_nan=False)


@st.composite
def measures(draw, n=2, max_atoms=20):
    k = draw(st.integers(1, max_atoms))
    pts = draw(arrays(float, (k, n), elements=coords))
    w = draw(arrays(float, k, elements=weights))
    return DiscreteMeasure(pts, w, n)


def test_open_ball_excludes_boundary():
    mu = DiscreteMeasure([[1.0, 0.0], [0.5, 0.0]], [1.0, 2.0])
    assert mu.mass_in([0, 0], 1.0) == 2.0
    assert ball_mass(mu, Ball([0, 0], 1.0 + 1e-12)) == 3.0


def test_rejects_bad_input():
    with pytest.raises(ValueError):
        DiscreteMeasure([[0.0, 0.0]], [-1.0])
    with pytest.raises(ValueError):
        DiscreteMeasure([[0.0, np.nan]], [1.0])
    with pytest.raises(ValueError):
        DiscreteMeasure([[0.0, 0.0]], [1.0, 2.0])
    with pytest.raises(ValueError):
        Ball([0, 0], 0.0)


def test_density_on_empty_ball():
    mu = DiscreteMeasure([[5.0, 5.0]], [1.0])
    st_ = density_ratio(mu, [0, 0], 1.0, 1)
    assert st_.theta == 0.0 and not st_.doubling_defined and math.isnan(st_.doubling_ratio)


def test_density_values():
    mu = DiscreteMeasure([[0.0, 0.0], [1.5, 0.0]], [1.0, 3.0])
    s = density_ratio(mu, [0, 0], 1.0, 1)
    assert s.theta == 1.0 and s.doubling_ratio == 4.0


@given(measures(), st.floats(0.1, 3), st.floats(0.1, 3))
def test_ball_mass_monotone(mu, r1, r2):
    lo, hi = sorted((r1, r2))
    assert mu.mass_in([0, 0], lo) <= mu.mass_in([0, 0], hi)


@given(measures(), st.floats(0.1, 5))
def test_restrict_keeps_ball_mass(mu, r):
    b = Ball([0.3, -0.2], r)
    assert ball_mass(restrict(mu, b), b) == ball_mass(mu, b)


@given(measures(), st.floats(0.25, 4), st.floats(0.5, 4))
def test_rescale_preserves_relative_mass(mu, r, norm):
    x = np.array([0.5, 0.25])
    dist = np.linalg.norm(mu.points - x, axis=1)
    assume(np.all(np.abs(dist - r) > 1e-9 * r))
    img = rescale(mu, x, r, norm)
    assert math.isclose(img.mass_in([0, 0], 1.0) * norm, mu.mass_in(x, r), rel_tol=1e-12, abs_tol=1e-12)


@given(measures(), measures())
def test_mass_additive_over_disjoint_subsets(a, b):
    both = DiscreteMeasure(np.vstack([a.points, b.points]), np.concatenate([a.weights, b.weights]), 2)
    assert math.isclose(both.mass_in([0, 0], 2.0), a.mass_in([0, 0], 2.0) + b.mass_in([0, 0], 2.0), abs_tol=1e-12)


@given(measures(max_atoms=30), st.floats(0.05, 2))
def test_aggregate_conserves_mass(mu, cell):
    agg = aggregate(mu, cell)
    assert math.isclose(agg.total_mass, mu.total_mass, rel_tol=1e-12, abs_tol=1e-12)
    assert len(agg) <= len(mu)


def test_nn_spacing():
    mu = DiscreteMeasure(np.column_stack([np.arange(5) * 0.5, np.zeros(5)]), np.ones(5))
    assert nn_spacing(mu) == 0.5
    assert mu.resolution_floor() == 4.0


@pytest.mark.parametrize("suffix", [".json", ".csv"])
def test_round_trip(tmp_path, suffix):
    mu = DiscreteMeasure(np.random.default_rng(0).normal(size=(7, 3)), np.arange(7) / 3.0)
    path = tmp_path / f"m{suffix}"
    write_measure(mu, path)
    assert read_measure(path) == mu


def test_malformed_files(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"ambient_dim": 2, "points": [[0, 0, 0]], "weights": [1]}))
    with pytest.raises(MeasureFormatError):
        read_measure(bad)
    neg = tmp_path / "neg.csv"
    neg.write_text("x0,x1,weight\n0,0,-1\n")
    with pytest.raises(MeasureFormatError):
        read_measure(neg)
    ragged = tmp_path / "ragged.csv"
    ragged.write_text("0,0,1\n0,1\n")
    with pytest.raises(MeasureFormatError):
        read_measure(ragged)
