"""Evaluation harnesses: baselines, oracle tension search, effective tension,
noise robustness, proximity and decay diagnostics, ablations and the ISS
ground-track study."""
from __future__ import annotations

import csv
import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .datagen import CurveSample, Dataset, arclength_sample
from .geometry import ClosedPolygon, Geometry, exterior_angles, geodesic_distance
from .metrics import CSV_FIELDS, MetricsReport, evaluate_polygon, g1_proxy, mean_nn
from .predictor import PredictorConfig, load_checkpoint, predict_angles, subdivide_neural
from .subdivision import (
    ALPHA_MAX,
    ALPHA_MIN,
    WARMUP_MU,
    SchemeConfig,
    classical_angles,
    classical_refine,
    lah_refine,
    subdivide_logexp,
    subdivide_step,
)
from .training import ConfigurationError, TrainConfig, train

MU_GRID = np.linspace(-0.5, 0.05, 21)
MU_EFF_CLAMP = (-3.0, 1.5)
MU_EFF_DEGENERATE = 1e-6
ROBUSTNESS_SIGMAS = (0.0, 0.03, 0.06, 0.10, 0.15, 0.20)
METRIC_NAMES = ("mean_nn", "chamfer", "hausdorff", "bending", "g1")

# named baselines of the comparison tables
METHODS = {
    "4pt": SchemeConfig("classical", mu=0.0),
    "6pt": SchemeConfig("classical", mu=-0.25),
    "logexp4": SchemeConfig("logexp4"),
    "logexp6": SchemeConfig("logexp6"),
}


# ---------------------------------------------------------------- refinement

@dataclass
class Predictor:
    params: dict
    cfg: PredictorConfig

    @classmethod
    def load(cls, path):
        params, cfg, _ = load_checkpoint(path)
        return cls(params, cfg)


def refine(P: ClosedPolygon, scheme: SchemeConfig, k: Optional[int] = None,
           predictor: Optional[Predictor] = None) -> ClosedPolygon:
    """Apply ``scheme`` for ``k`` levels (default ``scheme.levels``)."""
    k = scheme.levels if k is None else k
    g = P.geometry
    if scheme.kind == "classical":
        v = classical_refine(P.vertices, g, scheme.mu, k, scheme.hyp_rule)
    elif scheme.kind in ("logexp4", "logexp6"):
        return subdivide_logexp(P, "four" if scheme.kind == "logexp4" else "six", k)
    elif scheme.kind == "lah":
        v = lah_refine(P.vertices, g, scheme.mu, k, scheme.slope, scheme.hyp_rule)
    else:
        if predictor is None:
            if scheme.checkpoint is None:
                raise ConfigurationError("the neural method needs a checkpoint")
            predictor = Predictor.load(scheme.checkpoint)
        return subdivide_neural(P, predictor.params, predictor.cfg, k, hyp_rule=scheme.hyp_rule)
    return ClosedPolygon(g, v)


# ---------------------------------------------------------------- evaluation

@dataclass
class EvalRun:
    method: str
    rows: List[MetricsReport]

    def aggregate(self) -> Dict[str, Dict[str, Dict[str, float]]]:
        """Mean and population SD of every metric per geometry."""
        out: Dict[str, Dict[str, Dict[str, float]]] = {}
        for label in sorted({r.geometry for r in self.rows}):
            rows = [r for r in self.rows if r.geometry == label]
            out[label] = {"n": len(rows)}
            for name in METRIC_NAMES:
                vals = np.array([getattr(r, name) for r in rows])
                out[label][name] = {"mean": float(vals.mean()), "std": float(vals.std())}
        return out

    def mean(self, metric: str, geometry) -> float:
        return self.aggregate()[Geometry.parse(geometry).label][metric]["mean"]

    def write(self, out_dir, stem: Optional[str] = None) -> Tuple[Path, Path]:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        stem = stem or self.method
        csv_path = out / f"{stem}.csv"
        write_rows(csv_path, [r.row() for r in self.rows], CSV_FIELDS)
        json_path = out / f"{stem}.json"
        json_path.write_text(json.dumps({"method": self.method, "aggregate": self.aggregate()},
                                        indent=1, sort_keys=True) + "\n")
        return csv_path, json_path


def write_rows(path, rows: Sequence[dict], fields: Sequence[str]):
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(fields))
        w.writeheader()
        for r in rows:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})


def read_rows(path) -> List[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def _eval_one(args):
    sample, scheme, k, predictor, method = args
    Q = refine(sample.polygon, scheme, k, predictor)
    return evaluate_polygon(Q.vertices, sample.ground_truth, sample.geometry, sample.id, method)


def evaluate_method(scheme: SchemeConfig, samples: Sequence[CurveSample], k: int = 5,
                    predictor: Optional[Predictor] = None, method: Optional[str] = None,
                    jobs: int = 1) -> EvalRun:
    """Refine every sample ``k`` levels and score it against its ground truth."""
    if scheme.kind == "neural" and predictor is None:
        if scheme.checkpoint is None:
            raise ConfigurationError("the neural method needs a checkpoint")
        predictor = Predictor.load(scheme.checkpoint)
    method = method or scheme.kind
    work = [(s, scheme, k, predictor, method) for s in samples]
    if jobs > 1:
        with ProcessPoolExecutor(jobs) as pool:
            rows = list(pool.map(_eval_one, work, chunksize=8))
    else:
        rows = [_eval_one(w) for w in work]
    return EvalRun(method, rows)


# ---------------------------------------------------------------- oracle

@dataclass
class OracleResult:
    geometry: str
    mu_star: float
    table: List[Tuple[float, float]]
    baseline: float  # mean-NN of the four-point rule, mu = 0

    @property
    def improvement(self) -> float:
        """Relative mean-NN gain of the best grid value over mu = 0."""
        return (self.baseline - self.best_mean_nn) / self.baseline

    @property
    def best_mean_nn(self) -> float:
        return min(v for _, v in self.table)

    def value_at(self, mu: float) -> float:
        return dict((round(m, 12), v) for m, v in self.table)[round(mu, 12)]


def oracle_grid_search(samples: Sequence[CurveSample], g, k: int = 5, grid=MU_GRID,
                       jobs: int = 1) -> OracleResult:
    """Mean one-sided mean-NN of the fixed-tension rule at each grid value.

    The default grid does not contain 0, so the four-point baseline is
    evaluated separately when needed.
    """
    g = Geometry.parse(g)
    subset = [s for s in samples if s.geometry is g]
    if not subset:
        raise ConfigurationError(f"no {g.label} samples for the oracle search")

    def score(mu):
        run = evaluate_method(SchemeConfig("classical", mu=float(mu)), subset, k, jobs=jobs)
        return float(np.mean([r.mean_nn for r in run.rows]))

    table = [(float(mu), score(mu)) for mu in grid]
    best = min(table, key=lambda t: t[1])
    at_zero = [v for mu, v in table if mu == 0.0]
    return OracleResult(g.label, best[0], table, at_zero[0] if at_zero else score(0.0))


# ---------------------------------------------------------------- effective tension

@dataclass
class TensionProfile:
    """Per-edge effective tension; ``nan`` marks edges where it is undefined."""

    values: np.ndarray
    clamp: Tuple[float, float] = MU_EFF_CLAMP

    @property
    def defined(self) -> np.ndarray:
        return self.values[np.isfinite(self.values)]

    def stats(self) -> Dict[str, float]:
        d = self.defined
        return {"mean": float(d.mean()) if d.size else float("nan"),
                "std": float(d.std()) if d.size else float("nan"),
                "n_defined": int(d.size), "n_undefined": int(self.values.size - d.size)}


def mu_effective_from_angles(deltas, alphas) -> TensionProfile:
    """Invert the fixed-tension rule edge by edge."""
    d = np.asarray(deltas, dtype=np.float64)
    a = np.asarray(alphas, dtype=np.float64)
    A = (np.roll(d, 1) + np.roll(d, -2)) / 8.0
    Bv = (d + np.roll(d, -1)) / 8.0
    den = A - Bv
    ok = np.abs(den) >= MU_EFF_DEGENERATE
    mu = np.full(d.shape, np.nan)
    mu[ok] = np.clip((a[ok] - Bv[ok]) / den[ok], *MU_EFF_CLAMP)
    return TensionProfile(mu)


def mu_effective(P: ClosedPolygon, alphas) -> TensionProfile:
    if len(alphas) != len(P):
        raise ValueError(f"need {len(P)} angles, got {len(alphas)}")
    return mu_effective_from_angles(P.exterior_angles(), alphas)


def tension_profiles(samples: Sequence[CurveSample], predictor: Predictor, per_geometry: int = 60,
                     level: int = 1) -> Dict[str, TensionProfile]:
    """Pooled effective tension of the predictor on the first neural level
    (after the warm-up), over up to ``per_geometry`` curves per geometry."""
    out = {}
    for g in (Geometry.EUCLIDEAN, Geometry.SPHERICAL, Geometry.HYPERBOLIC):
        vals = []
        for s in [s for s in samples if s.geometry is g][:per_geometry]:
            v = classical_refine(s.control, g, WARMUP_MU, 1)
            for _ in range(level - 1):
                v = subdivide_step(v, predict_angles(v, g, predictor.params, predictor.cfg), g)
            alphas = predict_angles(v, g, predictor.params, predictor.cfg)
            vals.append(mu_effective_from_angles(exterior_angles(v, g), alphas).values)
        if vals:
            out[g.label] = TensionProfile(np.concatenate(vals))
    return out


@dataclass
class SingleTensionCheck:
    means: Dict[str, float]
    spread: float
    interval: Tuple[float, float]
    spread_exceeds_interval: bool
    single_mu_possible: bool


def single_tension_check(means: Dict[str, float], interval=(-0.5, 0.0)) -> SingleTensionCheck:
    """Can one global tension inside ``interval`` equal every per-geometry mean?

    It can only if the means coincide and sit inside the interval; a spread
    wider than the interval already rules it out.
    """
    vals = np.array(list(means.values()), dtype=np.float64)
    spread = float(vals.max() - vals.min())
    width = interval[1] - interval[0]
    possible = spread == 0.0 and interval[0] <= vals[0] <= interval[1]
    return SingleTensionCheck(dict(means), spread, tuple(interval), bool(spread > width), bool(possible))


# ---------------------------------------------------------------- robustness

@dataclass
class RobustnessRow:
    method: str
    sigma: float
    g1_mean: float
    g1_std: float
    n: int


def perturb(P: ClosedPolygon, sigma: float, z: np.ndarray) -> ClosedPolygon:
    """Gaussian vertex noise of SD ``sigma * mean edge length`` (E2)."""
    if P.geometry is not Geometry.EUCLIDEAN:
        raise ValueError("robustness noise is defined for E2 polygons")
    ebar = float(P.edge_lengths().mean())
    return ClosedPolygon(P.geometry, P.vertices + sigma * ebar * z)


def robustness_study(samples: Sequence[CurveSample], methods: Dict[str, SchemeConfig],
                     sigmas=ROBUSTNESS_SIGMAS, k: int = 4, seed: int = 0,
                     predictor: Optional[Predictor] = None) -> List[RobustnessRow]:
    """Mean G1 proxy per (method, sigma). Each curve reuses one standard
    normal draw across all sigmas, so the rows differ only by noise scale."""
    curves = [s for s in samples if s.geometry is Geometry.EUCLIDEAN]
    draws = [np.random.default_rng([seed, 4, i]).standard_normal(s.control.shape) for i, s in enumerate(curves)]
    rows = []
    for name, scheme in methods.items():
        for sigma in sigmas:
            g1 = [float(g1_proxy(refine(perturb(s.polygon, sigma, z), scheme, k, predictor).vertices, s.geometry))
                  for s, z in zip(curves, draws)]
            rows.append(RobustnessRow(name, float(sigma), float(np.mean(g1)), float(np.std(g1)), len(g1)))
    return rows


# ---------------------------------------------------------------- diagnostics

def fit_slope(x, y) -> float:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    return float(np.polyfit(x, y, 1)[0])


@dataclass
class DecayReport:
    max_angles: List[float]
    mesh_widths: List[float]
    rate: float


def angle_decay(P: ClosedPolygon, mu: float = 0.0, levels: int = 5, orientation: int = 1) -> DecayReport:
    """Max |exterior angle| per level of the fixed-tension rule and the
    fitted log2 decay rate (1 means halving per level)."""
    v = P.vertices
    g = P.geometry
    max_d, widths = [], []
    for lvl in range(levels + 1):
        poly = ClosedPolygon(g, v)
        max_d.append(float(np.abs(poly.exterior_angles()).max()))
        widths.append(poly.mesh_width())
        if lvl < levels:
            v = classical_refine(v, g, mu, 1, orientation=orientation)
    rate = -fit_slope(np.arange(levels + 1), np.log2(max_d))
    return DecayReport(max_d, widths, rate)


def is_convex(P: ClosedPolygon) -> bool:
    d = P.exterior_angles()
    return bool(np.all(d > 0) or np.all(d < 0))


@dataclass
class ProximityReport:
    levels: List[int]
    mesh_width: List[float]
    max_angle: List[float]
    deviation: List[float]
    slope_deviation_vs_h: float
    slope_angle_vs_h: float
    angle_ratios: List[float]


def proximity_diagnostic(predictor: Predictor, samples: Sequence[CurveSample], levels: int = 5,
                         warmup_mu: float = WARMUP_MU) -> ProximityReport:
    """Per level: mesh width h, max |delta|, and the largest distance between
    the predicted and the mu = 0 inserted points from the same input, each
    averaged over ``samples``. Slopes are fitted in log-log."""
    h = np.zeros(levels)
    amax = np.zeros(levels)
    dev = np.zeros(levels)
    for s in samples:
        g = s.geometry
        v = classical_refine(s.control, g, warmup_mu, 1)
        for lvl in range(levels):
            poly = ClosedPolygon(g, v)
            h[lvl] += poly.mesh_width()
            amax[lvl] += float(np.abs(poly.exterior_angles()).max())
            nxt = subdivide_step(v, predict_angles(v, g, predictor.params, predictor.cfg), g)
            ref = subdivide_step(v, classical_angles(poly.exterior_angles(), 0.0), g)
            dev[lvl] += float(geodesic_distance(nxt[1::2], ref[1::2], g).max())
            v = nxt
    n = max(len(samples), 1)
    h, amax, dev = h / n, amax / n, dev / n
    safe = np.maximum(dev, 1e-300)
    return ProximityReport(
        list(range(levels)), h.tolist(), amax.tolist(), dev.tolist(),
        fit_slope(np.log(h), np.log(safe)), fit_slope(np.log(h), np.log(amax)),
        (amax[1:] / amax[:-1]).tolist(),
    )


# ---------------------------------------------------------------- ablations

ABLATIONS = ("LearnedEmbed", "OneHot", "NoGeom", "NoEquiv", "NoBending", "NoSmooth")


def ablation_configs(condition: str, pcfg: PredictorConfig, tcfg: TrainConfig):
    """Predictor and training configs for one ablation condition."""
    if condition == "LearnedEmbed":
        return pcfg, tcfg
    if condition == "OneHot":
        return replace(pcfg, geometry_mode="onehot"), tcfg
    if condition == "NoGeom":
        return replace(pcfg, geometry_mode="none"), tcfg
    if condition == "NoEquiv":
        return pcfg, replace(tcfg, lambda_e=0.0)
    if condition == "NoBending":
        return pcfg, replace(tcfg, lambda_b=0.0)
    if condition == "NoSmooth":
        return pcfg, replace(tcfg, lambda_s={k: 0.0 for k in tcfg.lambda_s})
    raise ConfigurationError(f"unknown ablation {condition!r}; valid: {', '.join(ABLATIONS)}")


def ablation_run(condition: str, dataset: Dataset, pcfg: PredictorConfig, tcfg: TrainConfig,
                 seed: int = 0, train_subset=None, val_subset=None, out_dir=None, k: int = 5):
    p, t = ablation_configs(condition, pcfg, tcfg)
    result = train(dataset, p, t, seed, out_dir, train_subset=train_subset, val_subset=val_subset)
    val = list(val_subset if val_subset is not None else dataset.val)
    run = evaluate_method(SchemeConfig("neural"), val, k, Predictor(result.params, p), method=condition)
    return run, result


# ---------------------------------------------------------------- ISS

ISS_INCLINATION_DEG = 51.64
ISS_PERIOD_MIN = 92.68
ISS_LAMBDA0_DEG = -155.0
SIDEREAL_DAY_S = 23 * 3600 + 56 * 60 + 4
ISS_POINTS = 520
ISS_CONTROL = 16


def _latlon_to_xyz(lat, lon):
    return np.stack([np.cos(lat) * np.cos(lon), np.cos(lat) * np.sin(lon), np.sin(lat)], axis=-1)


def iss_orbit(theta):
    """Sub-satellite latitude and longitude (radians) at argument of latitude ``theta``."""
    inc = np.radians(ISS_INCLINATION_DEG)
    period = ISS_PERIOD_MIN * 60.0
    omega_e = 2.0 * np.pi / SIDEREAL_DAY_S
    t = period * theta / (2.0 * np.pi)
    lat = np.arcsin(np.sin(inc) * np.sin(theta))
    lon = np.arctan2(np.cos(inc) * np.sin(theta), np.cos(theta)) - omega_e * t + np.radians(ISS_LAMBDA0_DEG)
    return lat, lon


def slerp(a, b, s):
    om = float(geodesic_distance(a, b, Geometry.SPHERICAL))
    s = np.asarray(s, dtype=np.float64)[:, None]
    return (np.sin((1 - s) * om) * a + np.sin(s * om) * b) / np.sin(om)


@dataclass
class IssTrack:
    ground_truth: np.ndarray
    control: ClosedPolygon
    n_orbit: int
    n_closure: int
    gap_deg: float

    def latlon_deg(self) -> np.ndarray:
        x = self.ground_truth
        lat = np.degrees(np.arcsin(np.clip(x[:, 2], -1, 1)))
        lon = np.degrees(np.arctan2(x[:, 1], x[:, 0]))
        return np.stack([lat, lon], axis=-1)


def iss_track(n_points: int = ISS_POINTS, n_control: int = ISS_CONTROL) -> IssTrack:
    """One revolution of the ground track closed by a great-circle arc.

    The closure receives a share of the samples proportional to its length.
    """
    fine = _latlon_to_xyz(*iss_orbit(np.linspace(0.0, 2.0 * np.pi, 20001)))
    orbit_len = float(geodesic_distance(fine[:-1], fine[1:], Geometry.SPHERICAL).sum())
    close_len = float(geodesic_distance(fine[-1], fine[0], Geometry.SPHERICAL))
    n_close = int(round(n_points * close_len / (orbit_len + close_len)))
    n_orbit = n_points - n_close
    orbit = _latlon_to_xyz(*iss_orbit(np.linspace(0.0, 2.0 * np.pi, n_orbit)))
    closure = slerp(orbit[-1], orbit[0], np.arange(1, n_close + 1) / (n_close + 1))
    gt = np.concatenate([orbit, closure])
    gap = np.degrees(2.0 * np.pi / SIDEREAL_DAY_S * ISS_PERIOD_MIN * 60.0)
    return IssTrack(gt, arclength_sample(gt, n_control, Geometry.SPHERICAL), n_orbit, n_close, float(gap))


def iss_evaluate(methods: Dict[str, SchemeConfig], k: int = 5, predictor: Optional[Predictor] = None,
                 track: Optional[IssTrack] = None):
    track = track or iss_track()
    reports, outputs = {}, {}
    for name, scheme in methods.items():
        Q = refine(track.control, scheme, k, predictor)
        outputs[name] = Q.vertices
        reports[name] = evaluate_polygon(Q.vertices, track.ground_truth, Geometry.SPHERICAL, "iss", name)
    return track, reports, outputs
