import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from alphaflat.flat import (
    FlatFit,
    SolverError,
    bl_distance,
    flat_measure,
    minimize_convex_pwl,
    quadrature_nodes,
    slice_geometry,
    unit_ball_volume,
    w1_distance,
)
from alphaflat.geometry import AffinePlane
from alphaflat.measure import Ball, DiscreteMeasure

from oracles import bl_vertex_enumeration, w1_assignment

UNIT = Ball([0.0, 0.0], 1.0)


def _random_measure(rng, k, n=2, scale=1.0):
    r = scale * np.sqrt(rng.uniform(0, 1, k))
    t = rng.uniform(0, 2 * np.pi, k)
    pts = np.column_stack([r * np.cos(t), r * np.sin(t)]) if n == 2 else rng.uniform(-0.5, 0.5, (k, n))
    return DiscreteMeasure(pts, rng.uniform(0.1, 1.0, k), n)


@st.composite
def pairs(draw, max_atoms=6):
    seed = draw(st.integers(0, 2**31))
    rng = np.random.default_rng(seed)
    return (
        _random_measure(rng, draw(st.integers(0, max_atoms))) if draw(st.booleans()) else _random_measure(rng, max_atoms),
        _random_measure(rng, draw(st.integers(1, max_atoms))),
        _random_measure(rng, draw(st.integers(1, max_atoms))),
    )


def test_single_atom_against_nothing():
    sigma = DiscreteMeasure([[0.25, 0.0]], [2.0])
    res = bl_distance(sigma, DiscreteMeasure.empty(2), UNIT)
    assert math.isclose(res.value, 2 * 0.75, abs_tol=1e-12)


def test_two_atoms_close_together():
    sigma = DiscreteMeasure([[0.0, 0.0]], [1.0])
    nu = DiscreteMeasure([[0.1, 0.0]], [1.0])
    assert math.isclose(bl_distance(sigma, nu, UNIT).value, 0.1, abs_tol=1e-12)


def test_atoms_outside_ball_ignored():
    sigma = DiscreteMeasure([[0.0, 0.0], [3.0, 0.0]], [1.0, 100.0])
    assert math.isclose(bl_distance(sigma, DiscreteMeasure.empty(2), UNIT).value, 1.0)


def test_degenerate():
    empty = DiscreteMeasure.empty(2)
    assert bl_distance(empty, empty, UNIT).status == "degenerate"


def test_matches_vertex_enumeration_small():
    rng = np.random.default_rng(0)
    for _ in range(25):
        sigma = _random_measure(rng, rng.integers(0, 3))
        nu = _random_measure(rng, rng.integers(1, 3))
        res = bl_distance(sigma, nu, UNIT)
        assert math.isclose(res.value, bl_vertex_enumeration(res.points, res.weights, [0, 0], 1.0), abs_tol=1e-9)


def test_lp_and_network_agree_and_witness_feasible():
    rng = np.random.default_rng(1)
    for _ in range(20):
        sigma, nu = _random_measure(rng, 15), _random_measure(rng, 12)
        a = bl_distance(sigma, nu, UNIT, method="network")
        b = bl_distance(sigma, nu, UNIT, method="lp")
        assert math.isclose(a.value, b.value, rel_tol=1e-7, abs_tol=1e-9)
        for res in (a, b):
            assert res.max_violation(UNIT) <= 1e-9
            assert math.isclose(float(res.witness @ res.weights), res.value, rel_tol=1e-7, abs_tol=1e-9)


def test_zero_net_atoms_get_feasible_values():
    sigma = DiscreteMeasure([[0.0, 0.0], [0.5, 0.0]], [1.0, 1.0])
    nu = DiscreteMeasure([[0.0, 0.0], [0.0, 0.5]], [1.0, 1.0])
    res = bl_distance(sigma, nu, UNIT)
    assert res.max_violation(UNIT) <= 1e-12


def test_capped_support():
    rng = np.random.default_rng(2)
    sigma, nu = _random_measure(rng, 300), _random_measure(rng, 300)
    exact = bl_distance(sigma, nu, UNIT).value
    capped = bl_distance(sigma, nu, UNIT, max_support=100)
    assert capped.status == "capped-support"
    assert abs(capped.value - exact) <= capped.error_bound


def test_unknown_method():
    with pytest.raises(ValueError):
        bl_distance(DiscreteMeasure([[0.0, 0.0]], [1.0]), DiscreteMeasure.empty(2), UNIT, method="magic")


@given(pairs())
def test_symmetry_triangle_scaling(trip):
    s, n, l = trip
    f = lambda a, b: bl_distance(a, b, UNIT).value  # noqa: E731
    assert math.isclose(f(s, n), f(n, s), abs_tol=1e-9)
    assert f(s, l) <= f(s, n) + f(n, l) + 1e-9
    t = 2.5
    scaled = lambda m: DiscreteMeasure(m.points, t * m.weights, 2)  # noqa: E731
    assert math.isclose(f(scaled(s), scaled(n)), t * f(s, n), rel_tol=1e-9, abs_tol=1e-12)


def test_w1_against_assignment():
    rng = np.random.default_rng(4)
    for _ in range(10):
        p, q = rng.uniform(-1, 1, (4, 2)), rng.uniform(-1, 1, (4, 2))
        ref = w1_assignment(p, q)
        mp, mq = DiscreteMeasure(p, np.full(4, 0.25)), DiscreteMeasure(q, np.full(4, 0.25))
        assert math.isclose(w1_distance(mp, mq), ref, abs_tol=1e-9)
        assert math.isclose(w1_distance(mp, mq, method="network"), ref, abs_tol=1e-9)


def test_w1_needs_probability_measures():
    with pytest.raises(ValueError):
        w1_distance(DiscreteMeasure([[0.0, 0.0]], [2.0]), DiscreteMeasure([[0.0, 0.0]], [1.0]))


def test_kantorovich_rubinstein_interior():
    rng = np.random.default_rng(5)
    big = Ball([0.0, 0.0], 10.0)
    for _ in range(10):
        p = DiscreteMeasure(rng.uniform(-0.5, 0.5, (6, 2)), np.full(6, 1 / 6))
        q = DiscreteMeasure(rng.uniform(-0.5, 0.5, (5, 2)), np.full(5, 0.2))
        assert math.isclose(bl_distance(p, q, big).value, w1_distance(p, q), abs_tol=1e-7)


@pytest.mark.parametrize("d,n", [(1, 2), (1, 3), (2, 3)])
def test_quadrature_volume(d, n):
    rng = np.random.default_rng(6)
    basis = rng.normal(size=(d, n))
    plane = AffinePlane(rng.uniform(-0.4, 0.4, n), basis)
    b = Ball(np.zeros(n), 1.0)
    _, ell = slice_geometry(plane, b)
    nodes, w = quadrature_nodes(plane, b, 16, anchors=rng.uniform(-1, 1, (30, n)))
    assert math.isclose(w.sum(), unit_ball_volume(d) * ell**d, rel_tol=1e-9)
    assert np.all(np.linalg.norm(nodes, axis=1) < 1.0)
    assert np.all(plane.distance(nodes) < 1e-12)


def test_quadrature_includes_anchor_projections():
    plane = AffinePlane([0, 0], [[1, 0]])
    anchors = np.array([[0.1, 0.3], [-0.4, -0.2]])
    nodes, w = quadrature_nodes(plane, UNIT, 8, anchors)
    for a in anchors:
        assert np.min(np.linalg.norm(nodes - [a[0], 0.0], axis=1)) < 1e-15
    assert np.max(np.diff(nodes[:, 0])) <= 1 / 8 * (1 + 1e-9)


def test_plane_missing_ball():
    fm = flat_measure(1.0, AffinePlane([0, 2], [[1, 0]]), UNIT)
    assert len(fm.quadrature) == 0


def test_flatfit_slope_is_subgradient():
    rng = np.random.default_rng(7)
    mu = _random_measure(rng, 20)
    plane = AffinePlane([0, 0.1], [[1, 0.2]])
    nodes, q = quadrature_nodes(plane, UNIT, 16, mu.points)
    fit = FlatFit(mu.points, mu.weights / mu.total_mass, nodes, q, [0, 0], 1.0)
    cs = np.linspace(0, 1.5, 13)
    vals = [fit(c) for c in cs]
    for c0, (v0, g0) in zip(cs, vals):
        for c1, (v1, _) in zip(cs, vals):
            assert v1 >= v0 + g0 * (c1 - c0) - 1e-9
    assert math.isclose(fit.at_zero, vals[0][0], abs_tol=1e-12)


def test_minimize_convex_pwl():
    fun = lambda c: (abs(c - 3.7) + 0.5 * max(0, c - 5), (1.5 if c > 5 else 1.0) if c > 3.7 else -1.0)  # noqa: E731
    c, v, lower = minimize_convex_pwl(fun, 1.0, 2.0)
    assert math.isclose(c, 3.7, rel_tol=1e-9) and v <= 1e-9 and lower <= v
    # minimum at zero
    c, v, _ = minimize_convex_pwl(lambda c: (2 + c, 1.0), 1.0, 16.0)
    assert c == 0.0 and v == 2.0


def test_solver_error_type():
    assert issubclass(SolverError, RuntimeError)
