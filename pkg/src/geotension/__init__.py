"""Interpolatory curve subdivision on the plane, the sphere and the Poincare
disk, with fixed, heuristic and learned per-edge tension."""
from .geometry import ALL_GEOMETRIES, ClosedPolygon, Geometry
from .subdivision import SchemeConfig, subdivide_classical, subdivide_logexp

__version__ = "0.1.0"

__all__ = [
    "ALL_GEOMETRIES",
    "ClosedPolygon",
    "Geometry",
    "SchemeConfig",
    "subdivide_classical",
    "subdivide_logexp",
    "__version__",
]
