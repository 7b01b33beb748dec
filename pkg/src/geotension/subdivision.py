"""Angle-parameterised vertex insertion and the fixed-rule subdivision schemes.

Every scheme here is interpolatory: level ``k+1`` keeps the vertices of level
``k`` at even indices and inserts one vertex per edge at odd indices.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import _backend as B
from .geometry import (
    DEGENERATE_EDGE,
    DISK_CLAMP,
    ClosedPolygon,
    DegenerateEdgeError,
    Geometry,
    GeometryError,
    exp_map,
    exterior_angles,
    log_map,
    mobius_add,
    mobius_neg_add,
    rotate_in_tangent_plane,
)

ALPHA_MIN = -np.pi / 4 + 0.02
ALPHA_MAX = np.pi / 4 - 0.02
HYP_EDGE_CLAMP = 4.0
WARMUP_MU = -0.15

FOUR_POINT_WEIGHTS = np.array([-1.0, 9.0, 9.0, -1.0]) / 16.0
SIX_POINT_WEIGHTS = np.array([3.0, -25.0, 150.0, 150.0, -25.0, 3.0]) / 256.0
STENCILS = {
    "four": (np.arange(-1, 3), FOUR_POINT_WEIGHTS),
    "six": (np.arange(-2, 4), SIX_POINT_WEIGHTS),
}

HYP_RULES = ("corrected", "literal")


class AngleRangeError(ValueError):
    """Insertion angle outside the admissible interval."""


def _check_alpha(alpha):
    a = np.asarray(B.to_numpy(alpha))
    if np.any(a < ALPHA_MIN - 1e-15) or np.any(a > ALPHA_MAX + 1e-15) or not np.all(np.isfinite(a)):
        raise AngleRangeError(
            f"insertion angles must lie in [{ALPHA_MIN:.6f}, {ALPHA_MAX:.6f}]"
        )


def insert_points(p, p_next, alpha, g: Geometry, hyp_rule: str = "corrected"):
    """Insert one vertex per edge ``p -> p_next`` at insertion angle ``alpha``.

    Batched over rows; works on numpy arrays and torch tensors alike.
    """
    g = Geometry.parse(g)
    m = B.xp(p, p_next, alpha)
    cos_a = m.cos(alpha)
    if g is Geometry.EUCLIDEAN:
        d = p_next - p
        e = B.norm(d)
        tangent = d / e[..., None]
        # sin|a| / sin(pi - 2|a|) == 1 / (2 cos a), no 0/0 at a = 0
        reach = e / (2.0 * cos_a)
        return p + reach[..., None] * rotate_in_tangent_plane(p, tangent, alpha, g)

    if g is Geometry.SPHERICAL:
        pq = B.dot(p, p_next)
        chord = p_next - pq[..., None] * p
        e = m.atan2(B.norm(chord), pq)
        tangent = chord / B.norm(chord)[..., None]
        reach = B.atan(m.tan(e / 2.0) / m.abs(cos_a))
        direction = rotate_in_tangent_plane(p, tangent, alpha, g)
        q = m.cos(reach)[..., None] * p + m.sin(reach)[..., None] * direction
        return B.normalize(q)

    u = mobius_neg_add(p, p_next)
    half = B.norm(u)  # tanh(e / 2)
    tangent = u / half[..., None]
    half = B.clip(half, None, np.tanh(HYP_EDGE_CLAMP / 2.0))
    # right-angled triangle: tanh(reach) = tanh(e / 2) / cos a; the ray misses
    # the bisector when the ratio reaches 1, so cap just below it
    ratio = B.clip(half / m.abs(cos_a), 0.0, 1.0 - 1e-12)
    if hyp_rule == "corrected":
        step = ratio / (1.0 + m.sqrt(1.0 - ratio * ratio))  # tanh(atanh(ratio) / 2)
    elif hyp_rule == "literal":
        step = ratio  # reach = 2 atanh(ratio), so tanh(reach / 2) = ratio
    else:
        raise ValueError(f"hyp_rule must be one of {HYP_RULES}")
    direction = rotate_in_tangent_plane(p, tangent, alpha, g)
    q = mobius_add(p, step[..., None] * direction)
    r = B.norm(q)[..., None]
    return q * B.clip(DISK_CLAMP / m.where(r > 0, r, 1.0), None, 1.0)


def insert_vertex(p, p_next, alpha: float, g: Geometry, hyp_rule: str = "corrected") -> np.ndarray:
    """Single-edge insertion with full contract checks."""
    g = Geometry.parse(g)
    p = np.asarray(p, dtype=np.float64)
    p_next = np.asarray(p_next, dtype=np.float64)
    if p.shape != (g.dim,) or p_next.shape != (g.dim,):
        raise GeometryError(f"{g.label} points need {g.dim} coordinates")
    _check_alpha(alpha)
    from .geometry import geodesic_distance
    if geodesic_distance(p, p_next, g) <= DEGENERATE_EDGE:
        raise DegenerateEdgeError("edge too short for insertion")
    return insert_points(p[None], p_next[None], np.array([alpha], dtype=np.float64), g, hyp_rule)[0]


def classical_angles(deltas, mu, orientation: int = 1):
    """Per-edge insertion angle of the fixed-tension rule, clamped to the
    admissible interval.

    ``mu`` may be a scalar or one value per edge. ``orientation=-1`` mirrors
    the rule so that positive turning inserts on the convex side.
    """
    m = B.xp(deltas)
    d_prev = m.roll(deltas, 1, 0)
    d_next = m.roll(deltas, -1, 0)
    d_next2 = m.roll(deltas, -2, 0)
    alpha = (mu * (d_prev + d_next2) + (1.0 - mu) * (deltas + d_next)) / 8.0
    return B.clip(orientation * alpha, ALPHA_MIN, ALPHA_MAX)


def subdivide_step(vertices, alphas, g: Geometry, hyp_rule: str = "corrected"):
    """One refinement level: ``N`` vertices in, ``2N`` out, originals kept at even indices."""
    g = Geometry.parse(g)
    m = B.xp(vertices, alphas)
    if len(alphas) != len(vertices):
        raise ValueError(f"need {len(vertices)} insertion angles, got {len(alphas)}")
    if not B.is_torch(vertices, alphas):
        _check_alpha(alphas)
    if B.is_torch(vertices, alphas):
        vertices = B.asarray(vertices, alphas if B.is_torch(alphas) else vertices)
        alphas = B.asarray(alphas, vertices)
    q = insert_points(vertices, m.roll(vertices, -1, 0), alphas, g, hyp_rule)
    return B.interleave(vertices, q)


def _as_polygon(P, g=None) -> ClosedPolygon:
    if isinstance(P, ClosedPolygon):
        return P
    if g is None:
        raise GeometryError("raw vertex arrays need an explicit geometry")
    return ClosedPolygon(Geometry.parse(g), P)


def classical_refine(vertices, g: Geometry, mu, k: int, hyp_rule: str = "corrected",
                     orientation: int = 1):
    """Array-level driver for the fixed-tension scheme."""
    for _ in range(k):
        alphas = classical_angles(exterior_angles(vertices, g), mu, orientation)
        vertices = subdivide_step(vertices, alphas, g, hyp_rule)
    return vertices


def subdivide_classical(P: ClosedPolygon, mu: float, k: int, hyp_rule: str = "corrected",
                        orientation: int = 1) -> ClosedPolygon:
    """``k`` levels of the fixed-tension rule; output has ``N * 2**k`` vertices."""
    P = _as_polygon(P)
    if k < 0:
        raise ValueError("k must be nonnegative")
    out = classical_refine(P.vertices, P.geometry, mu, k, hyp_rule, orientation)
    return ClosedPolygon(P.geometry, out)


def logexp_points(vertices, g: Geometry, stencil: str = "four"):
    """New vertex per edge at ``exp_{p_j}(sum_k w_k log_{p_j}(p_{j+k}))``."""
    g = Geometry.parse(g)
    offsets, weights = STENCILS[stencil]
    if len(vertices) < len(offsets):
        raise ValueError(f"{stencil}-point stencil needs at least {len(offsets)} vertices")
    m = B.xp(vertices)
    acc = sum(
        w * log_map(vertices, m.roll(vertices, -int(off), 0), g)
        for off, w in zip(offsets, weights)
        if off != 0
    )
    return exp_map(vertices, acc, g)


def subdivide_logexp(P: ClosedPolygon, stencil: str, k: int) -> ClosedPolygon:
    """``k`` levels of the log-exp manifold lift of the four- or six-point rule."""
    P = _as_polygon(P)
    if stencil not in STENCILS:
        raise ValueError(f"stencil must be one of {sorted(STENCILS)}")
    v = P.vertices
    for _ in range(k):
        q = logexp_points(v, P.geometry, stencil)
        if P.geometry is Geometry.HYPERBOLIC:
            r = np.linalg.norm(q, axis=-1, keepdims=True)
            q = q * np.minimum(1.0, DISK_CLAMP / r)
        v = B.interleave(v, q)
    return ClosedPolygon(P.geometry, v)


def linear_refine(vertices, stencil: str, k: int):
    """Plain Euclidean linear interpolatory scheme, ``sum_k w_k p_{j+k}``."""
    offsets, weights = STENCILS[stencil]
    for _ in range(k):
        q = sum(w * np.roll(vertices, -int(off), 0) for off, w in zip(offsets, weights))
        vertices = B.interleave(vertices, q)
    return vertices


def lah_tensions(deltas, mu_star: float, slope: float = -0.5, lo: float = -0.5, hi: float = 0.1):
    """Per-edge tension of the curvature-proportional heuristic.

    The local curvature of edge ``j`` is the mean absolute exterior angle over
    the stencil window ``j-1 .. j+2``; it is compared against the polygon mean.
    """
    a = np.abs(np.asarray(deltas, dtype=np.float64))
    window = (np.roll(a, 1) + a + np.roll(a, -1) + np.roll(a, -2)) / 4.0
    return np.clip(mu_star + slope * (window - a.mean()), lo, hi)


def lah_angles(vertices, g: Geometry, mu_star: float, slope: float = -0.5, orientation: int = 1):
    deltas = exterior_angles(vertices, g)
    return classical_angles(deltas, lah_tensions(deltas, mu_star, slope), orientation)


def lah_refine(vertices, g: Geometry, mu_star: float, k: int, slope: float = -0.5,
               hyp_rule: str = "corrected", orientation: int = 1):
    for _ in range(k):
        vertices = subdivide_step(vertices, lah_angles(vertices, g, mu_star, slope, orientation), g, hyp_rule)
    return vertices


@dataclass(frozen=True)
class SchemeConfig:
    """A named refinement method.

    ``kind`` is one of ``classical``, ``logexp4``, ``logexp6``, ``lah``,
    ``neural``. ``checkpoint`` is only used by ``neural``.
    """

    kind: str
    mu: float = 0.0
    slope: float = -0.5
    levels: int = 5
    hyp_rule: str = "corrected"
    checkpoint: Optional[str] = None

    def __post_init__(self):
        if self.kind not in ("classical", "logexp4", "logexp6", "lah", "neural"):
            raise ValueError(f"unknown scheme kind {self.kind!r}")
        if not np.isfinite(self.mu):
            raise ValueError("mu must be finite")
        if self.levels < 0:
            raise ValueError("levels must be nonnegative")
