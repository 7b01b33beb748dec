"""Fidelity and fairness measures for refined polygons."""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from . import _backend as B
from .geometry import Geometry, chord_lengths, edge_lengths, exterior_angles, pairwise_distance

BENDING_EPS = 1e-8
N_GROUND_TRUTH = 1000
CSV_FIELDS = ("curve_id", "geometry", "method", "mean_nn", "chamfer", "hausdorff", "bending", "g1")


def _nonempty(*sets):
    for s in sets:
        if len(s) == 0:
            raise ValueError("point sets must be nonempty")


def mean_nn(Q, G, g: Geometry) -> float:
    """One-sided mean nearest-neighbour distance from ``Q`` to ``G``."""
    _nonempty(Q, G)
    return float(pairwise_distance(np.asarray(Q), np.asarray(G), g).min(axis=1).mean())


def sym_chamfer(Q, G, g: Geometry) -> float:
    _nonempty(Q, G)
    D = pairwise_distance(np.asarray(Q), np.asarray(G), g)
    return float(0.5 * (D.min(axis=1).mean() + D.min(axis=0).mean()))


def hausdorff(Q, G, g: Geometry) -> float:
    _nonempty(Q, G)
    D = pairwise_distance(np.asarray(Q), np.asarray(G), g)
    return float(max(D.min(axis=1).max(), D.min(axis=0).max()))


def bending_energy(vertices, g: Geometry, eps: float = BENDING_EPS, lengths: str = "auto"):
    """Mean of ``(delta_j / ((e_j + e_{j-1}) / 2 + eps))**2``.

    ``lengths="auto"`` uses geodesic edge lengths on E2 and S2 and ambient
    chord lengths on H2; ``"geodesic"`` or ``"chord"`` force one choice.
    """
    g = Geometry.parse(g)
    m = B.xp(vertices)
    if lengths == "auto":
        lengths = "chord" if g is Geometry.HYPERBOLIC else "geodesic"
    e = chord_lengths(vertices) if lengths == "chord" else edge_lengths(vertices, g)
    d = exterior_angles(vertices, g)
    local = 0.5 * (e + m.roll(e, 1, 0)) + eps
    return m.mean((d / local) ** 2)


def g1_proxy(vertices, g: Geometry):
    return B.xp(vertices).amax(abs(exterior_angles(vertices, g)))


def smoothness_loss(vertices, g: Geometry):
    return B.xp(vertices).mean(exterior_angles(vertices, g) ** 2)


@dataclass
class MetricsReport:
    curve_id: str
    geometry: str
    method: str
    mean_nn: float
    chamfer: float
    hausdorff: float
    bending: float
    g1: float
    bending_lengths: str = "geodesic"

    def row(self) -> dict:
        d = asdict(self)
        return {k: d[k] for k in CSV_FIELDS}


def evaluate_polygon(Q, G, g: Geometry, curve_id: str = "", method: str = "") -> MetricsReport:
    """All metrics of a refined polygon ``Q`` against ground truth ``G``."""
    g = Geometry.parse(g)
    Q = np.asarray(Q, dtype=np.float64)
    G = np.asarray(G, dtype=np.float64)
    D = pairwise_distance(Q, G, g)
    q_to_g = D.min(axis=1)
    g_to_q = D.min(axis=0)
    return MetricsReport(
        curve_id=curve_id,
        geometry=g.label,
        method=method,
        mean_nn=float(q_to_g.mean()),
        chamfer=float(0.5 * (q_to_g.mean() + g_to_q.mean())),
        hausdorff=float(max(q_to_g.max(), g_to_q.max())),
        bending=float(bending_energy(Q, g)),
        g1=float(g1_proxy(Q, g)),
        bending_lengths="chord" if g is Geometry.HYPERBOLIC else "geodesic",
    )
