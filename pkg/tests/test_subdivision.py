import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.optimize import brentq

from geotension.geometry import (
    ALL_GEOMETRIES,
    ClosedPolygon,
    DegenerateEdgeError,
    Geometry,
    exterior_angles,
    geodesic_distance,
    random_isometry,
    unit_tangent,
)
from geotension.subdivision import (
    ALPHA_MAX,
    ALPHA_MIN,
    AngleRangeError,
    SchemeConfig,
    classical_angles,
    insert_points,
    insert_vertex,
    lah_tensions,
    linear_refine,
    subdivide_classical,
    subdivide_logexp,
    subdivide_step,
)

from conftest import oracle_distance, random_points, star_polygon

seeds = st.integers(0, 2**32 - 1)
alphas = st.floats(ALPHA_MIN, ALPHA_MAX)


def signed_angle(a, b, base, g):
    """Angle from tangent ``a`` to tangent ``b`` at ``base``, counter-clockwise."""
    if Geometry.parse(g) is Geometry.SPHERICAL:
        return np.arctan2(np.sum(np.cross(a, b) * base, -1), np.sum(a * b, -1))
    return np.arctan2(a[..., 0] * b[..., 1] - a[..., 1] * b[..., 0], np.sum(a * b, -1))


def bisection_midpoint(p, q, g):
    """Point on the p-q geodesic equidistant from both ends, located by root finding.

    The geodesic is traced with textbook parametrisations and distances are
    measured with the textbook formulas from conftest.
    """
    g = Geometry.parse(g)
    if g is Geometry.EUCLIDEAN:
        path = lambda t: p + t * (q - p)
    elif g is Geometry.SPHERICAL:
        w = np.arccos(np.clip(p @ q, -1, 1))
        path = lambda t: (np.sin((1 - t) * w) * p + np.sin(t * w) * q) / np.sin(w)
    else:
        # the geodesic through p and q is the image of a diameter under the
        # disk automorphism z -> (z + p) / (1 + conj(p) z)
        zp, zq = complex(*p), complex(*q)
        u = (zq - zp) / (1 - np.conj(zp) * zq)
        s = np.arctanh(abs(u))

        def path(t):
            z = np.tanh(t * s) * u / abs(u)
            z = (z + zp) / (1 + np.conj(zp) * z)
            return np.array([z.real, z.imag])
    f = lambda t: oracle_distance(p, path(t), g) - oracle_distance(path(t), q, g)
    return path(brentq(f, 0.0, 1.0, xtol=1e-15, rtol=1e-15))


@pytest.mark.parametrize("g", ALL_GEOMETRIES, ids=lambda g: g.label)
def test_zero_angle_is_midpoint(g):
    rng = np.random.default_rng(7)
    p, q = random_points(g, 200, rng), random_points(g, 200, rng)
    if g is Geometry.HYPERBOLIC:
        p, q = 0.6 * p, 0.6 * q
    m = insert_points(p, q, np.zeros(len(p)), g)
    want = np.array([bisection_midpoint(a, b, g) for a, b in zip(p, q)])
    np.testing.assert_allclose(m, want, atol=1e-9)


@given(seeds, alphas)
def test_inserted_vertex_is_equidistant_and_at_angle(seed, alpha):
    rng = np.random.default_rng(seed)
    for g in ALL_GEOMETRIES:
        p, q = random_points(g, 10, rng), random_points(g, 10, rng)
        if g is Geometry.HYPERBOLIC:
            p, q = 0.5 * p, 0.5 * q
        if g is Geometry.SPHERICAL:
            keep = np.sum(p * q, 1) > -0.5
            p, q = p[keep], q[keep]
        a = np.full(len(p), alpha)
        m = insert_points(p, q, a, g)
        np.testing.assert_allclose(oracle_distance(p, m, g), oracle_distance(m, q, g), atol=1e-9)
        got = signed_angle(unit_tangent(p, q, g), unit_tangent(p, m, g), p, g)
        np.testing.assert_allclose(got, a, atol=1e-9)


def test_euclidean_insertion_example():
    # alpha = pi/6 on the unit edge gives the apex of an isosceles triangle
    m = insert_vertex([0.0, 0.0], [1.0, 0.0], np.pi / 6, "E2")
    np.testing.assert_allclose(m, [0.5, 0.5 * np.tan(np.pi / 6)], atol=1e-15)


def test_insertion_contract_errors():
    with pytest.raises(AngleRangeError):
        insert_vertex([0.0, 0.0], [1.0, 0.0], np.pi / 4, "E2")
    with pytest.raises(AngleRangeError):
        insert_vertex([0.0, 0.0], [1.0, 0.0], np.nan, "E2")
    with pytest.raises(DegenerateEdgeError):
        insert_vertex([0.1, 0.0], [0.1, 0.0], 0.1, "H2")


@given(seeds, st.integers(4, 12), st.integers(0, 3), st.sampled_from([-0.5, -0.25, 0.0]))
def test_interpolatory_and_sizes(seed, n, k, mu):
    rng = np.random.default_rng(seed)
    for g in ALL_GEOMETRIES:
        P = ClosedPolygon(g, star_polygon(g, n, rng))
        Q = subdivide_classical(P, mu, k)
        assert len(Q.vertices) == n * 2**k
        np.testing.assert_array_equal(Q.vertices[:: 2**k], P.vertices)
        if k:
            R = subdivide_logexp(P, "four", k)
            np.testing.assert_array_equal(R.vertices[:: 2**k], P.vertices)


def test_classical_angle_weights():
    d = np.array([0.1, 0.2, 0.3, 0.4, 0.5])
    a = classical_angles(d, -0.25)
    # edge 0 uses delta_{-1}, delta_0, delta_1, delta_2
    want = (-0.25 * (0.5 + 0.3) + 1.25 * (0.1 + 0.2)) / 8
    assert a[0] == pytest.approx(want)
    np.testing.assert_allclose(classical_angles(d, -0.25, orientation=-1), -a)
    assert np.all(classical_angles(np.full(5, 9.0), 0.0) == ALPHA_MAX)


def test_mirrored_rule_reproduces_circles():
    # on a regular polygon every delta is equal, so alpha = delta / 4 for any mu,
    # which is exactly the chord-to-arc-midpoint angle
    t = 2 * np.pi * np.arange(10) / 10
    P = ClosedPolygon("E2", np.stack([np.cos(t), np.sin(t)], 1))
    for mu in (-0.5, -0.25, 0.0):
        Q = subdivide_classical(P, mu, 3, orientation=-1)
        np.testing.assert_allclose(np.linalg.norm(Q.vertices, axis=1), 1.0, atol=1e-12)
    inner = subdivide_classical(P, 0.0, 1)
    # the literal convention places the new vertices on the concave side
    assert np.all(np.linalg.norm(inner.vertices[1::2], axis=1) < np.cos(np.pi / 10))


@given(seeds)
def test_reversal_symmetry(seed):
    rng = np.random.default_rng(seed)
    for g in ALL_GEOMETRIES:
        v = star_polygon(g, 8, rng)
        a = subdivide_classical(ClosedPolygon(g, v), -0.1, 2).vertices
        b = subdivide_classical(ClosedPolygon(g, v[::-1]), -0.1, 2).vertices
        # reversing the input gives the same point set
        d = geodesic_distance(a[:, None], b[None], g).min(1)
        assert d.max() < 1e-9


@given(seeds)
def test_isometry_equivariance(seed):
    rng = np.random.default_rng(seed)
    for g in ALL_GEOMETRIES:
        v = star_polygon(g, 7, rng)
        iso = random_isometry(g, rng)
        a = iso.apply(subdivide_classical(ClosedPolygon(g, v), -0.2, 2).vertices)
        b = subdivide_classical(ClosedPolygon(g, iso.apply(v)), -0.2, 2).vertices
        np.testing.assert_allclose(a, b, atol=1e-9)


def test_logexp_matches_linear_on_plane():
    rng = np.random.default_rng(3)
    v = star_polygon("E2", 12, rng)
    for stencil in ("four", "six"):
        np.testing.assert_allclose(subdivide_logexp(ClosedPolygon("E2", v), stencil, 3).vertices,
                                   linear_refine(v, stencil, 3), atol=1e-12)


def test_logexp_needs_enough_vertices():
    P = ClosedPolygon("E2", np.array([[0, 0], [1, 0], [1, 1], [0, 1.0]]))
    with pytest.raises(ValueError):
        subdivide_logexp(P, "six", 1)


def test_subdivide_step_length_check():
    v = np.array([[0, 0], [1, 0], [1, 1], [0, 1.0]])
    with pytest.raises(ValueError):
        subdivide_step(v, np.zeros(3), "E2")


def test_lah_tension_range():
    d = np.random.default_rng(0).normal(size=50)
    mu = lah_tensions(d, -0.1)
    assert mu.min() >= -0.5 and mu.max() <= 0.1
    assert np.allclose(lah_tensions(np.ones(8), -0.1), -0.1)


def test_scheme_config_validation():
    with pytest.raises(ValueError):
        SchemeConfig("spline")
    with pytest.raises(ValueError):
        SchemeConfig("classical", mu=np.inf)
    assert SchemeConfig("classical").levels == 5


@pytest.mark.parametrize("g", ALL_GEOMETRIES, ids=lambda g: g.label)
def test_refined_polygons_are_valid(g):
    rng = np.random.default_rng(11)
    P = ClosedPolygon(g, star_polygon(g, 12, rng))
    for mu in (-0.5, 0.0):
        Q = subdivide_classical(P, mu, 5)
        assert np.all(np.isfinite(Q.vertices))
        assert np.all(np.isfinite(exterior_angles(Q.vertices, g)))
