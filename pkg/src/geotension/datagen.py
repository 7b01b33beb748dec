"""Synthetic closed-curve families on E2, S2 and H2, arc-length control
sampling, and the stratified on-disk dataset."""
from __future__ import annotations

import json
import shutil
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np

from .geometry import ALL_GEOMETRIES, ClosedPolygon, Geometry, edge_lengths, mobius_add, pairwise_distance

N_GT = 1000
N_CTRL = 12
PER_GEOMETRY = 400
TRAIN_FRACTION = 0.8
H2_FOURIER_RADIUS = 0.58
H2_CLIP = 0.97
MIN_CONTROL_GAP = 1e-6

FAMILIES = {
    Geometry.EUCLIDEAN: ("ellipse", "fourier", "fourier_hf", "superellipse"),
    Geometry.SPHERICAL: ("lissajous", "polar_fourier", "perturbed_great_circle"),
    Geometry.HYPERBOLIC: ("fourier", "hyperbolic_circle", "offset_ellipse"),
}
LISSAJOUS_FREQS = [(a, b) for a in (2, 3) for b in (3, 4, 5) if a != b]
FORMAT_VERSION = 1


class DatasetError(ValueError):
    pass


@dataclass
class CurveSample:
    id: str
    geometry: Geometry
    family: str
    ground_truth: np.ndarray
    control: np.ndarray
    params: Dict = field(default_factory=dict)

    @property
    def polygon(self) -> ClosedPolygon:
        return ClosedPolygon(self.geometry, self.control)


def _t(n=N_GT):
    return 2.0 * np.pi * np.arange(n) / n


def _normalize_planar(xy):
    xy = xy - xy.mean(axis=0)
    return xy / np.linalg.norm(xy, axis=1).max()


def _fourier_xy(rng, n_terms, t):
    xy = np.zeros((len(t), 2))
    coef = []
    for k in range(1, n_terms + 1):
        # coefficient variance k^(-3/2)
        a = rng.normal(0.0, k ** -0.75, size=2)
        b = rng.normal(0.0, k ** -0.75, size=2)
        xy += np.outer(np.cos(k * t), a) + np.outer(np.sin(k * t), b)
        coef.append([a.tolist(), b.tolist()])
    return xy, coef


def _euclidean(family, rng, t):
    if family == "ellipse":
        a, b = rng.uniform(0.6, 2.0, size=2)
        return np.stack([a * np.cos(t), b * np.sin(t)], -1), {"a": a, "b": b}
    if family in ("fourier", "fourier_hf"):
        n_terms = 3 if family == "fourier" else 4
        xy, coef = _fourier_xy(rng, n_terms, t)
        return xy, {"terms": n_terms, "coef": coef}
    if family == "superellipse":
        n = rng.uniform(2.0, 6.0)
        c, s = np.cos(t), np.sin(t)
        xy = np.stack([np.abs(c) ** (2 / n) * np.sign(c), np.abs(s) ** (2 / n) * np.sign(s)], -1)
        return xy, {"n": n}
    raise DatasetError(f"unknown E2 family {family!r}; valid: {FAMILIES[Geometry.EUCLIDEAN]}")


def _spherical(family, rng, t):
    if family == "lissajous":
        a, b = LISSAJOUS_FREQS[rng.integers(len(LISSAJOUS_FREQS))]
        p = np.stack([np.cos(a * t), np.cos(b * t + np.pi / 4), np.sin(a * t) * np.sin(b * t)], -1)
        params = {"a": int(a), "b": int(b)}
    elif family == "polar_fourier":
        theta0 = rng.uniform(np.pi / 4, 3 * np.pi / 4)
        d_theta, c1 = _fourier_xy(rng, 3, t)
        colat = np.clip(theta0 + 0.3 * d_theta[:, 0], 0.1, np.pi - 0.1)
        azim = t + 0.3 * d_theta[:, 1]
        p = np.stack([np.sin(colat) * np.cos(azim), np.sin(colat) * np.sin(azim), np.cos(colat)], -1)
        params = {"theta0": theta0, "coef": c1}
    elif family == "perturbed_great_circle":
        eps = rng.uniform(0.0, 0.3)
        n = int(rng.integers(2, 5))
        p = np.stack([np.cos(t), np.sin(t), eps * np.sin(n * t)], -1)
        params = {"eps": eps, "n": n}
    else:
        raise DatasetError(f"unknown S2 family {family!r}; valid: {FAMILIES[Geometry.SPHERICAL]}")
    return p / np.linalg.norm(p, axis=1, keepdims=True), params


def hyperbolic_circle(center, radius, t):
    """Points at hyperbolic distance ``radius`` from ``center``, uniform in arc length."""
    u = np.tanh(radius / 2.0) * np.stack([np.cos(t), np.sin(t)], -1)
    return mobius_add(np.broadcast_to(np.asarray(center, float), u.shape), u)


def _hyperbolic(family, rng, t):
    if family == "fourier":
        xy, coef = _fourier_xy(rng, 3, t)
        return H2_FOURIER_RADIUS * _normalize_planar(xy), {"coef": coef}
    if family == "hyperbolic_circle":
        r = rng.uniform(0.3, 0.6)
        rho, phi = 0.4 * np.sqrt(rng.uniform()), rng.uniform(0, 2 * np.pi)
        c = rho * np.array([np.cos(phi), np.sin(phi)])
        return hyperbolic_circle(c, r, t), {"r": r, "center": c.tolist()}
    if family == "offset_ellipse":
        cx, cy = rng.uniform(-0.4, 0.4, size=2)
        a, b = rng.uniform(0.2, 0.6, size=2)
        z = np.stack([cx + a * np.cos(t), cy + b * np.sin(t)], -1)
        r = np.linalg.norm(z, axis=1, keepdims=True)
        z = z * np.minimum(1.0, (H2_CLIP - 1e-6) / r)
        return z, {"cx": cx, "cy": cy, "a": a, "b": b}
    raise DatasetError(f"unknown H2 family {family!r}; valid: {FAMILIES[Geometry.HYPERBOLIC]}")


def ground_truth_curve(g: Geometry, family: str, rng: np.random.Generator, n: int = N_GT):
    """1000 samples at uniform parameter ``t in [0, 2pi)`` and the generator parameters."""
    g = Geometry.parse(g)
    t = _t(n)
    if g is Geometry.EUCLIDEAN:
        xy, params = _euclidean(family, rng, t)
        return _normalize_planar(xy), params
    if g is Geometry.SPHERICAL:
        return _spherical(family, rng, t)
    return _hyperbolic(family, rng, t)


def arclength_indices(gt, n: int, g: Geometry, closed: bool = True) -> np.ndarray:
    """Indices of ``gt`` nearest (in arc length) to fractions ``i / n`` of the
    total length; the closing segment ``c_{M-1} -> c_0`` counts when ``closed``."""
    if n < 4:
        raise ValueError("need at least 4 control points")
    seg = edge_lengths(np.asarray(gt, float), g)
    if not closed:
        seg = seg[:-1]
    cum = np.concatenate([[0.0], np.cumsum(seg)])
    total = cum[-1]
    starts = cum[: len(gt)]
    targets = total * np.arange(n) / n
    return np.array([int(np.argmin(np.abs(starts - s))) for s in targets])


def arclength_sample(gt, n: int, g: Geometry) -> ClosedPolygon:
    g = Geometry.parse(g)
    gt = np.asarray(gt, dtype=np.float64)
    return ClosedPolygon(g, gt[arclength_indices(gt, n, g)])


def _control_ok(ctrl, g) -> bool:
    D = pairwise_distance(ctrl, ctrl, g)
    np.fill_diagonal(D, np.inf)
    return bool(D.min() > MIN_CONTROL_GAP)


def gen_curve(g: Geometry, family: str, seed, curve_id: str = "", n_ctrl: int = N_CTRL,
              max_tries: int = 20) -> CurveSample:
    """One ground-truth curve and its arc-length-uniform control polygon.

    Draws that yield coincident control vertices are redrawn from the same
    seed stream, so the result is still a pure function of ``seed``.
    """
    g = Geometry.parse(g)
    if family not in FAMILIES[g]:
        raise DatasetError(f"unknown {g.label} family {family!r}; valid: {', '.join(FAMILIES[g])}")
    rng = np.random.default_rng(seed)
    for _ in range(max_tries):
        gt, params = ground_truth_curve(g, family, rng)
        idx = arclength_indices(gt, n_ctrl, g)
        ctrl = gt[idx]
        if len(set(idx.tolist())) == n_ctrl and _control_ok(ctrl, g):
            return CurveSample(curve_id, g, family, gt, ctrl, _jsonable(params))
    raise DatasetError(f"could not draw a non-degenerate {family} curve")


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


# ---------------------------------------------------------------- dataset

def curve_seed(seed: int, g: Geometry, index: int) -> np.random.SeedSequence:
    return np.random.SeedSequence([int(seed), int(g.kappa) + 1, int(index)])


def generate_samples(seed: int = 0, per_geometry: int = PER_GEOMETRY,
                     geometries=(Geometry.EUCLIDEAN, Geometry.SPHERICAL, Geometry.HYPERBOLIC),
                     families: Optional[Dict[Geometry, tuple]] = None):
    """Samples and a stratified train/val split, without touching disk."""
    samples: List[CurveSample] = []
    split: Dict[str, str] = {}
    for g in geometries:
        fams = (families or FAMILIES)[g]
        ids = []
        for i in range(per_geometry):
            fam = fams[i % len(fams)]
            cid = f"{g.label}-{i:04d}"
            samples.append(gen_curve(g, fam, curve_seed(seed, g, i), cid))
            ids.append(cid)
        order = np.random.default_rng([int(seed), 99, int(g.kappa) + 1]).permutation(per_geometry)
        n_train = int(round(TRAIN_FRACTION * per_geometry))
        for rank, i in enumerate(order):
            split[ids[i]] = "train" if rank < n_train else "val"
    return samples, split


@dataclass
class Dataset:
    samples: List[CurveSample]
    split: Dict[str, str]
    seed: int = 0

    def subset(self, which: str, geometry: Optional[Geometry] = None) -> List[CurveSample]:
        return [s for s in self.samples if self.split[s.id] == which
                and (geometry is None or s.geometry is Geometry.parse(geometry))]

    @property
    def train(self):
        return self.subset("train")

    @property
    def val(self):
        return self.subset("val")

    def manifest(self) -> dict:
        counts = {}
        for s in self.samples:
            counts.setdefault(s.geometry.label, {"total": 0, "train": 0, "val": 0, "families": {}})
            c = counts[s.geometry.label]
            c["total"] += 1
            c[self.split[s.id]] += 1
            c["families"][s.family] = c["families"].get(s.family, 0) + 1
        return {
            "format_version": FORMAT_VERSION,
            "seed": self.seed,
            "n_ground_truth": N_GT,
            "n_control": N_CTRL,
            "counts": counts,
            "family_weights": "uniform (cycled by index)",
            "lissajous_frequencies": LISSAJOUS_FREQS,
            "split": self.split,
        }


def build_dataset(seed: int = 0, per_geometry: int = PER_GEOMETRY) -> Dataset:
    samples, split = generate_samples(seed, per_geometry)
    return Dataset(samples, split, seed)


def _hex(a: np.ndarray) -> str:
    return np.ascontiguousarray(a, dtype="<f8").tobytes().hex()


def _unhex(s: str, dim: int) -> np.ndarray:
    return np.frombuffer(bytes.fromhex(s), dtype="<f8").reshape(-1, dim).copy()


def sample_record(s: CurveSample) -> dict:
    return {
        "id": s.id,
        "geometry": s.geometry.label,
        "family": s.family,
        "params": s.params,
        "ground_truth_hex": _hex(s.ground_truth),
        "control_hex": _hex(s.control),
        "ground_truth": np.round(s.ground_truth, 12).tolist(),
        "control": np.round(s.control, 12).tolist(),
    }


def sample_from_record(rec: dict) -> CurveSample:
    g = Geometry.parse(rec["geometry"])
    return CurveSample(rec["id"], g, rec["family"], _unhex(rec["ground_truth_hex"], g.dim),
                       _unhex(rec["control_hex"], g.dim), rec.get("params", {}))


DATASET_ENTRIES = ("manifest.json", "train", "val")


def save_dataset(ds: Dataset, out_dir, force: bool = False) -> Path:
    """Write ``manifest.json`` and ``{train,val}/{geometry}/{id}.jsonl``.

    Files other than the dataset entries (say an echoed run config) are left
    alone; existing dataset entries are only replaced with ``force``.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    present = [out / n for n in DATASET_ENTRIES if (out / n).exists()]
    if present and not force:
        raise FileExistsError(f"{out} already holds a dataset; pass force to overwrite")
    for p in present:
        shutil.rmtree(p) if p.is_dir() else p.unlink()
    for s in ds.samples:
        d = out / ds.split[s.id] / s.geometry.label
        d.mkdir(parents=True, exist_ok=True)
        (d / f"{s.id}.jsonl").write_text(json.dumps(sample_record(s)) + "\n")
    (out / "manifest.json").write_text(json.dumps(ds.manifest(), indent=1, sort_keys=True) + "\n")
    return out


def load_dataset(path) -> Dataset:
    path = Path(path)
    mf = path / "manifest.json"
    if not mf.exists():
        raise DatasetError(f"no dataset at {path} (missing manifest.json)")
    manifest = json.loads(mf.read_text())
    samples = []
    # generation order: geometries E2, S2, H2, then curve index
    labels = [g.label for g in ALL_GEOMETRIES]
    for cid, which in sorted(manifest["split"].items(), key=lambda kv: (labels.index(kv[0].split("-")[0]), kv[0])):
        label = cid.split("-")[0]
        rec = json.loads((path / which / label / f"{cid}.jsonl").read_text().splitlines()[0])
        samples.append(sample_from_record(rec))
    return Dataset(samples, manifest["split"], manifest.get("seed", 0))
