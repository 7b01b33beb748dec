import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from geotension.geometry import Geometry

settings.register_profile("default", max_examples=40, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def star_polygon(g, n, rng, wobble=0.25, scale=None):
    """Random star-shaped closed polygon, counter-clockwise, well inside the model space."""
    g = Geometry.parse(g)
    t = np.sort(rng.uniform(0, 2 * np.pi, n))
    t = 2 * np.pi * np.arange(n) / n + 0.3 * (t - t.mean()) / n
    r = 1.0 + wobble * rng.uniform(-1, 1, n)
    xy = np.stack([r * np.cos(t), r * np.sin(t)], -1)
    if g is Geometry.EUCLIDEAN:
        return (scale or 1.0) * xy + rng.uniform(-1, 1, 2)
    if g is Geometry.HYPERBOLIC:
        return (scale or 0.5) * xy / (1 + wobble)
    # cap around a random pole
    s = scale or 0.6
    colat = s * np.linalg.norm(xy, axis=1)
    lon = np.arctan2(xy[:, 1], xy[:, 0])
    p = np.stack([np.sin(colat) * np.cos(lon), np.sin(colat) * np.sin(lon), np.cos(colat)], -1)
    from scipy.spatial.transform import Rotation
    return p @ Rotation.random(random_state=rng).as_matrix().T


def random_points(g, n, rng):
    g = Geometry.parse(g)
    if g is Geometry.EUCLIDEAN:
        return rng.normal(size=(n, 2))
    if g is Geometry.SPHERICAL:
        p = rng.normal(size=(n, 3))
        return p / np.linalg.norm(p, axis=1, keepdims=True)
    r = 0.9 * np.sqrt(rng.uniform(size=n))
    phi = rng.uniform(0, 2 * np.pi, n)
    return np.stack([r * np.cos(phi), r * np.sin(phi)], -1)


def oracle_distance(p, q, g):
    """Textbook distance formulas, independent of the Mobius machinery."""
    g = Geometry.parse(g)
    p, q = np.asarray(p, float), np.asarray(q, float)
    if g is Geometry.EUCLIDEAN:
        return np.linalg.norm(p - q, axis=-1)
    if g is Geometry.SPHERICAL:
        return np.arccos(np.clip(np.sum(p * q, -1), -1, 1))
    num = 2 * np.sum((p - q) ** 2, -1)
    den = (1 - np.sum(p * p, -1)) * (1 - np.sum(q * q, -1))
    return np.arccosh(1 + num / den)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# one line per acceptance criterion, echoed in the terminal summary
ACCEPTANCE = {}


def record_criterion(number, title, ok, detail):
    line = f"criterion {number:2d} {'PASS' if ok else 'FAIL'}  {title}: {detail}"
    ACCEPTANCE[number] = line
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.write_sep("=", "acceptance criteria")
        for n in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[n])
