"""Per-edge network inputs.

Edge ``j`` (from ``p_j`` to ``p_{j+1}``) is described by the four exterior
angles of the classical stencil, the two adjacent edge lengths relative to the
polygon mean, and the geometry code.
"""
import numpy as np

from . import _backend as B
from .geometry import DEGENERATE_EDGE, DegenerateEdgeError, Geometry, edge_lengths, exterior_angles

N_FEATURES = 7
N_INTRINSIC = 6


def extract_features(vertices, g: Geometry):
    """(N, 7) matrix ``[d_{j-1}, d_j, d_{j+1}, d_{j+2}] / pi, e_j / ebar, e_{j+1} / ebar, kappa``."""
    g = Geometry.parse(g)
    m = B.xp(vertices)
    if len(vertices) < 4:
        raise ValueError("feature stencil needs at least 4 vertices")
    e = edge_lengths(vertices, g)
    if not B.is_torch(vertices) and np.any(e <= DEGENERATE_EDGE):
        raise DegenerateEdgeError("degenerate edge in feature extraction")
    d = exterior_angles(vertices, g) / np.pi
    r = e / m.mean(e)
    kappa = 0.0 * r + float(g.kappa)
    cols = [m.roll(d, 1, 0), d, m.roll(d, -1, 0), m.roll(d, -2, 0), r, m.roll(r, -1, 0), kappa]
    return m.stack(cols, axis=-1)
