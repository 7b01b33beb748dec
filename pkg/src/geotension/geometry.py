"""Model-space primitives for the Euclidean plane, the unit sphere and the
Poincare disk.

Points are rows of float64 arrays: shape (..., 2) on E2 and H2, (..., 3) on
S2. Tangent directions on H2 are expressed in the frame obtained by the
Mobius translation that carries the base point to the origin; on S2 they are
ambient 3-vectors orthogonal to the base point.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.transform import Rotation

from . import _backend as B

DEGENERATE_EDGE = 1e-12
DISK_CLAMP = 0.999


class GeometryError(ValueError):
    """Mismatched or unknown geometry."""


class DomainError(ValueError):
    """Argument outside the domain of an operation."""


class DegenerateEdgeError(ValueError):
    """Two consecutive points closer than ``DEGENERATE_EDGE``."""


class Geometry(enum.Enum):
    EUCLIDEAN = 0
    SPHERICAL = 1
    HYPERBOLIC = -1

    @property
    def kappa(self) -> int:
        return self.value

    @property
    def dim(self) -> int:
        return 3 if self is Geometry.SPHERICAL else 2

    @property
    def label(self) -> str:
        return {0: "E2", 1: "S2", -1: "H2"}[self.value]

    @classmethod
    def parse(cls, value) -> "Geometry":
        if isinstance(value, Geometry):
            return value
        if isinstance(value, (int, np.integer)):
            return cls(int(value))
        key = str(value).strip().upper()
        aliases = {
            "E2": cls.EUCLIDEAN, "EUCLIDEAN": cls.EUCLIDEAN,
            "S2": cls.SPHERICAL, "SPHERICAL": cls.SPHERICAL,
            "H2": cls.HYPERBOLIC, "HYPERBOLIC": cls.HYPERBOLIC,
        }
        if key not in aliases:
            raise GeometryError(f"unknown geometry {value!r}; expected one of E2, S2, H2")
        return aliases[key]


ALL_GEOMETRIES = (Geometry.EUCLIDEAN, Geometry.SPHERICAL, Geometry.HYPERBOLIC)


def check_points(x, g: Geometry, tol: float = 1e-12) -> np.ndarray:
    """Validate point invariants for ``g`` and return the array."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != g.dim:
        raise GeometryError(f"{g.label} points need {g.dim} coordinates, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise DomainError("non-finite coordinates")
    if g is Geometry.SPHERICAL:
        dev = np.abs(np.linalg.norm(x, axis=-1) - 1.0)
        if np.any(dev > tol):
            raise DomainError(f"spherical points off the unit sphere by {dev.max():.3g}")
    elif g is Geometry.HYPERBOLIC:
        if np.any(np.linalg.norm(x, axis=-1) >= 1.0):
            raise DomainError("hyperbolic points must lie strictly inside the unit disk")
    return x


# ---------------------------------------------------------------- Mobius

def mobius_add(z, w):
    """Mobius (gyrovector) addition on the Poincare disk, batched over rows."""
    if not B.is_torch(z, w):
        z = np.asarray(z, dtype=np.float64)
        w = np.asarray(w, dtype=np.float64)
        if np.any(np.sum(z * z, axis=-1) >= 1.0) or np.any(np.sum(w * w, axis=-1) >= 1.0):
            raise DomainError("mobius_add arguments must lie in the open unit disk")
    zw = B.dot(z, w)[..., None]
    zz = B.dot(z, z)[..., None]
    ww = B.dot(w, w)[..., None]
    num = (1.0 + 2.0 * zw + ww) * z + (1.0 - zz) * w
    den = 1.0 + 2.0 * zw + zz * ww
    return num / den


def mobius_neg_add(z, w):
    """``(-z) (+) w``: the image of ``w`` under the isometry sending ``z`` to 0."""
    return mobius_add(-z, w)


# ---------------------------------------------------------------- distances

def geodesic_distance(p, q, g: Geometry):
    """Geodesic distance between corresponding rows of ``p`` and ``q``."""
    g = Geometry.parse(g)
    if g is Geometry.EUCLIDEAN:
        return B.norm(q - p)
    if g is Geometry.SPHERICAL:
        # atan2 form keeps full precision at short range
        m = B.xp(p, q)
        return m.atan2(B.norm(B.cross3(p, q)), B.dot(p, q))
    r = B.norm(mobius_neg_add(p, q))
    return 2.0 * B.atanh(B.clip(r, 0.0, 1.0 - 1e-16))


def pairwise_distance(a, b, g: Geometry):
    """(|a|, |b|) matrix of geodesic distances."""
    return geodesic_distance(a[:, None, :], b[None, :, :], g)


def chord_lengths(vertices):
    """Ambient Euclidean lengths of the cyclic edges."""
    m = B.xp(vertices)
    return B.norm(m.roll(vertices, -1, 0) - vertices)


def edge_lengths(vertices, g: Geometry):
    """Geodesic lengths of the cyclic edges ``p_j -> p_{j+1}``."""
    m = B.xp(vertices)
    return geodesic_distance(vertices, m.roll(vertices, -1, 0), g)


# ---------------------------------------------------------------- tangents

def unit_tangent(p, q, g: Geometry):
    """Unit direction at ``p`` of the geodesic towards ``q``."""
    g = Geometry.parse(g)
    if not B.is_torch(p, q):
        d = np.atleast_1d(geodesic_distance(np.asarray(p, float), np.asarray(q, float), g))
        if np.any(d <= DEGENERATE_EDGE):
            raise DegenerateEdgeError("coincident points have no tangent direction")
    if g is Geometry.EUCLIDEAN:
        return B.normalize(q - p)
    if g is Geometry.SPHERICAL:
        return B.normalize(q - B.dot(p, q)[..., None] * p)
    return B.normalize(mobius_neg_add(p, q))


def rotate_in_tangent_plane(base, direction, alpha, g: Geometry):
    """Rotate a tangent direction counter-clockwise by ``alpha``.

    On S2 the oriented plane is spanned by ``(T, p x T)``.
    """
    g = Geometry.parse(g)
    m = B.xp(direction, alpha)
    c = m.cos(alpha)[..., None] if not np.isscalar(alpha) else np.cos(alpha)
    s = m.sin(alpha)[..., None] if not np.isscalar(alpha) else np.sin(alpha)
    if g is Geometry.SPHERICAL:
        return c * direction + s * B.cross3(base, direction)
    rot90 = m.stack([-direction[..., 1], direction[..., 0]], axis=-1)
    return c * direction + s * rot90


def exterior_angles(vertices, g: Geometry):
    """Signed turning angle at every vertex of a closed polygon, in (-pi, pi]."""
    g = Geometry.parse(g)
    m = B.xp(vertices)
    prev = m.roll(vertices, 1, 0)
    nxt = m.roll(vertices, -1, 0)
    t_out = unit_tangent(vertices, nxt, g)
    t_in = -unit_tangent(vertices, prev, g)
    cos = B.dot(t_in, t_out)
    if g is Geometry.SPHERICAL:
        sin = B.dot(B.cross3(t_in, t_out), vertices)
    else:
        sin = B.cross2(t_in, t_out)
    return m.atan2(sin, cos)


# ---------------------------------------------------------------- log / exp

def log_map(p, q, g: Geometry):
    """Riemannian logarithm: tangent vector at ``p`` whose length is d(p, q)."""
    g = Geometry.parse(g)
    if g is Geometry.EUCLIDEAN:
        return q - p
    if g is Geometry.SPHERICAL:
        if not B.is_torch(p, q) and np.any(np.linalg.norm(np.asarray(p) + np.asarray(q), axis=-1) < 1e-12):
            raise DomainError("log map undefined for antipodal points")
        d = geodesic_distance(p, q, g)[..., None]
        return d * B.normalize(q - B.dot(p, q)[..., None] * p)
    u = mobius_neg_add(p, q)
    r = B.norm(u)[..., None]
    return 2.0 * B.atanh(B.clip(r, 0.0, 1.0 - 1e-16)) * B.normalize(u)


def exp_map(p, v, g: Geometry):
    """Riemannian exponential at ``p`` of a tangent vector in log-map coordinates."""
    g = Geometry.parse(g)
    if g is Geometry.EUCLIDEAN:
        return p + v
    m = B.xp(p, v)
    n = B.norm(v)[..., None]
    u = B.normalize(v)
    if g is Geometry.SPHERICAL:
        return B.normalize(m.cos(n) * p + m.sin(n) * u)
    return mobius_add(p, m.tanh(n / 2.0) * u)


# ---------------------------------------------------------------- isometries

@dataclass(frozen=True)
class Isometry:
    """Orientation-preserving isometry ``x -> shift (+) (R x)`` (H2),
    ``R x + shift`` (E2) or ``R x`` (S2)."""

    geometry: Geometry
    rotation: np.ndarray
    shift: np.ndarray = field(default=None)

    def apply(self, x):
        x = np.asarray(x, dtype=np.float64)
        y = x @ self.rotation.T
        if self.shift is None:
            return y
        if self.geometry is Geometry.HYPERBOLIC:
            return mobius_add(np.broadcast_to(self.shift, y.shape), y)
        return y + self.shift

    def inverse_apply(self, y):
        y = np.asarray(y, dtype=np.float64)
        if self.shift is not None:
            if self.geometry is Geometry.HYPERBOLIC:
                y = mobius_add(np.broadcast_to(-self.shift, y.shape), y)
            else:
                y = y - self.shift
        return y @ self.rotation


def _rot2(theta):
    c, s = np.cos(theta), np.sin(theta)
    return np.array([[c, -s], [s, c]])


def random_isometry(g: Geometry, rng: np.random.Generator, translate: bool = True,
                    max_shift: float = 0.3) -> Isometry:
    """Draw a random orientation-preserving isometry of the model space.

    E2 and H2 use a uniform rotation about the origin, optionally followed by
    a translation (Mobius on H2) by a uniform point of norm at most
    ``max_shift``. S2 uses a uniform element of SO(3).
    """
    g = Geometry.parse(g)
    if g is Geometry.SPHERICAL:
        return Isometry(g, Rotation.random(random_state=rng).as_matrix())
    rot = _rot2(rng.uniform(0.0, 2.0 * np.pi))
    if not translate:
        return Isometry(g, rot)
    radius = max_shift * np.sqrt(rng.uniform())
    phi = rng.uniform(0.0, 2.0 * np.pi)
    return Isometry(g, rot, radius * np.array([np.cos(phi), np.sin(phi)]))


# ---------------------------------------------------------------- polygons

@dataclass(frozen=True)
class ClosedPolygon:
    geometry: Geometry
    vertices: np.ndarray

    def __post_init__(self):
        g = Geometry.parse(self.geometry)
        object.__setattr__(self, "geometry", g)
        v = check_points(self.vertices, g, tol=1e-10)
        if v.ndim != 2 or len(v) < 3:
            raise ValueError(f"closed polygon needs an (N, {g.dim}) array with N >= 3")
        if np.any(edge_lengths(v, g) <= DEGENERATE_EDGE):
            raise DegenerateEdgeError("closed polygon has coincident consecutive vertices")
        object.__setattr__(self, "vertices", v)

    def __len__(self):
        return len(self.vertices)

    def edge_lengths(self):
        return edge_lengths(self.vertices, self.geometry)

    def exterior_angles(self):
        return exterior_angles(self.vertices, self.geometry)

    def mesh_width(self) -> float:
        return float(self.edge_lengths().max())

    def reversed(self) -> "ClosedPolygon":
        return ClosedPolygon(self.geometry, self.vertices[::-1].copy())

    def transformed(self, iso: Isometry) -> "ClosedPolygon":
        return ClosedPolygon(self.geometry, iso.apply(self.vertices))
