"""Loss, gradients, AdamW, learning-rate schedule and two-level early stopping
for the tension predictor.

The loss is written against the shared array surface, so the same function
evaluates on numpy (used for finite-difference checks and validation) and on
torch float64 tensors (used for gradients).
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np
import torch

from . import _backend as B
from .datagen import CurveSample, Dataset
from .features import extract_features
from .geometry import ALL_GEOMETRIES, Geometry, geodesic_distance, pairwise_distance, random_isometry
from .metrics import bending_energy, mean_nn, smoothness_loss
from .predictor import (
    PredictorConfig,
    dropout_masks,
    flatten_params,
    forward,
    init_params,
    load_checkpoint,
    save_checkpoint,
    subdivide_neural,
    unflatten_params,
)
from .subdivision import classical_refine, subdivide_step


class ConfigurationError(ValueError):
    pass


@dataclass
class TrainConfig:
    lambda_c: float = 1.0
    lambda_b: float = 1e-4
    lambda_e: float = 0.10
    lambda_s: Dict[str, float] = field(default_factory=lambda: {"E2": 0.05, "S2": 0.15, "H2": 0.05})
    warmup_mu: float = -0.15
    neural_steps: int = 2
    batch_size: int = 8
    lr: float = 1e-3
    betas: tuple = (0.9, 0.95)
    adam_eps: float = 1e-8
    weight_decay: float = 1e-4
    clip_norm: float = 0.5
    epochs: int = 300
    warmup_epochs: int = 5
    eval_every: int = 10
    lr_patience: int = 10
    stop_patience: int = 25
    min_improve: float = 1e-5
    lr_min: float = 1e-6
    k_equiv: int = 2
    eval_levels: int = 5
    hyp_rule: str = "corrected"
    equiv_translate: bool = False

    def __post_init__(self):
        missing = {"E2", "S2", "H2"} - set(self.lambda_s)
        if missing:
            raise ConfigurationError(f"lambda_s needs all geometries; missing {sorted(missing)}")
        for name in ("batch_size", "epochs", "eval_every", "neural_steps"):
            if getattr(self, name) < 1:
                raise ConfigurationError(f"{name} must be positive")
        if self.lr <= 0 or self.lr_min <= 0:
            raise ConfigurationError("learning rates must be positive")

    def to_dict(self):
        d = asdict(self)
        d["betas"] = list(self.betas)
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        if "betas" in d:
            d["betas"] = tuple(d["betas"])
        return cls(**d)


# ---------------------------------------------------------------- schedule

def lr_at_epoch(e: int, cfg: TrainConfig) -> float:
    """Linear warm-up over ``warmup_epochs`` then cosine decay to zero at ``epochs``."""
    if e < cfg.warmup_epochs:
        return cfg.lr * (e + 1) / cfg.warmup_epochs
    span = max(cfg.epochs - cfg.warmup_epochs, 1)
    return cfg.lr * 0.5 * (1.0 + math.cos(math.pi * min(e - cfg.warmup_epochs, span) / span))


@dataclass
class EarlyStopping:
    """Level 1 halves the LR multiplier after ``lr_patience`` stale checks;
    level 2 stops after ``stop_patience`` stale checks."""

    lr_patience: int
    stop_patience: int
    min_improve: float
    floor: float
    best: float = math.inf
    best_epoch: int = -1
    stale: int = 0
    stale_lr: int = 0
    multiplier: float = 1.0
    reductions: int = 0

    def update(self, metric: float, epoch: int) -> bool:
        """Record one check; returns True when training should stop."""
        if metric < self.best - self.min_improve:
            self.best, self.best_epoch = float(metric), epoch
            self.stale = self.stale_lr = 0
            return False
        self.stale += 1
        self.stale_lr += 1
        if self.stale_lr >= self.lr_patience:
            self.multiplier = max(self.multiplier * 0.5, self.floor)
            self.reductions += 1
            self.stale_lr = 0
        return self.stale >= self.stop_patience


# ---------------------------------------------------------------- AdamW

@dataclass
class AdamState:
    params: np.ndarray
    m: np.ndarray
    v: np.ndarray
    step: int = 0

    @classmethod
    def fresh(cls, flat):
        flat = np.asarray(flat, dtype=np.float64).copy()
        return cls(flat, np.zeros_like(flat), np.zeros_like(flat))


def clip_by_global_norm(g: np.ndarray, max_norm: float):
    n = float(np.linalg.norm(g))
    if n > max_norm:
        return g * (max_norm / n), n
    return g, n


def adamw_step(state: AdamState, grad, lr: float, cfg: TrainConfig):
    """Decoupled-decay Adam update after global-norm clipping.

    Returns ``(state, info)``; a non-finite gradient leaves the state untouched.
    """
    grad = np.asarray(grad, dtype=np.float64)
    if not np.all(np.isfinite(grad)):
        return state, {"skipped": True, "grad_norm": float("nan")}
    grad, gnorm = clip_by_global_norm(grad, cfg.clip_norm)
    b1, b2 = cfg.betas
    t = state.step + 1
    m = b1 * state.m + (1 - b1) * grad
    v = b2 * state.v + (1 - b2) * grad * grad
    m_hat = m / (1 - b1 ** t)
    v_hat = v / (1 - b2 ** t)
    p = state.params * (1 - lr * cfg.weight_decay)
    p = p - lr * m_hat / (np.sqrt(v_hat) + cfg.adam_eps)
    return AdamState(p, m, v, t), {"skipped": False, "grad_norm": gnorm}


# ---------------------------------------------------------------- losses

def _detach(x):
    return x.detach() if B.is_torch(x) else x


def chamfer_loss(Q, G, g: Geometry):
    """Symmetric mean-NN with the nearest-neighbour assignment held fixed."""
    G = B.asarray(G, Q)
    with torch.no_grad():
        D = pairwise_distance(_detach(Q), G, g)
    D = B.to_numpy(D)
    q_nn = np.argmin(D, axis=1)
    g_nn = np.argmin(D, axis=0)
    fwd = geodesic_distance(Q, G[q_nn], g)
    bwd = geodesic_distance(Q[g_nn], G, g)
    m = B.xp(Q)
    return 0.5 * (m.mean(fwd) + m.mean(bwd))


@dataclass
class LossParts:
    total: object
    chamfer: float
    smooth: float
    bending: float
    equiv: float

    def values(self):
        return {"loss": float(B.to_numpy(self.total)), "chamfer": self.chamfer,
                "smooth": self.smooth, "bending": self.bending, "equiv": self.equiv}


def warmup_polygon(sample: CurveSample, cfg: TrainConfig):
    """Classical warm-up level; plain numpy, so it never reaches the tape."""
    return classical_refine(sample.control, sample.geometry, cfg.warmup_mu, 1, cfg.hyp_rule)


def equivariance_isometries(g: Geometry, rng: np.random.Generator, cfg: TrainConfig):
    return [random_isometry(g, rng, translate=cfg.equiv_translate) for _ in range(cfg.k_equiv)]


def _scalar(x):
    return float(B.to_numpy(x))


def finish_loss(sample: CurveSample, v, params, pcfg: PredictorConfig, cfg: TrainConfig,
                isometries, like=None) -> LossParts:
    """Loss terms on the refined polygon ``v`` (numpy or torch)."""
    g = sample.geometry
    l_c = chamfer_loss(v, sample.ground_truth, g)
    l_s = smoothness_loss(v, g)
    l_b = bending_energy(v, g)
    l_e = 0.0 * l_c
    if cfg.lambda_e != 0.0 and isometries:
        fixed = B.to_numpy(_detach(v))
        base = forward(B.asarray(extract_features(fixed, g), like if like is not None else v), params, pcfg)
        for iso in isometries:
            moved = forward(B.asarray(extract_features(iso.apply(fixed), g), like if like is not None else v),
                            params, pcfg)
            l_e = l_e + B.xp(v).sum((base - moved) ** 2)
        l_e = l_e / len(isometries)
    total = (cfg.lambda_c * l_c + cfg.lambda_s[g.label] * l_s
             + cfg.lambda_b * l_b + cfg.lambda_e * l_e)
    return LossParts(total, _scalar(l_c), _scalar(l_s), _scalar(l_b), _scalar(l_e))


def _to_backend_params(params, like_torch: bool):
    if like_torch:
        return params
    return {k: B.to_numpy(v) for k, v in params.items()}


def sample_loss(sample: CurveSample, params, pcfg: PredictorConfig, cfg: TrainConfig,
                mask_key: Optional[Sequence[int]] = None, isometries=()) -> LossParts:
    """Warm-up level, ``neural_steps`` predicted levels and the weighted loss.

    ``mask_key`` turns on dropout; masks for step ``t`` use ``mask_key + (t,)``.
    Works with numpy or torch parameter dicts.
    """
    torch_mode = B.is_torch(*params.values())
    v = warmup_polygon(sample, cfg)
    if torch_mode:
        v = torch.as_tensor(v)
    for t in range(cfg.neural_steps):
        feats = extract_features(v, sample.geometry)
        masks = None if mask_key is None else dropout_masks(tuple(mask_key) + (t,), len(v), pcfg)
        alphas = forward(feats, params, pcfg, masks)
        v = subdivide_step(v, alphas, sample.geometry, cfg.hyp_rule)
    return finish_loss(sample, v, params, pcfg, cfg, isometries)


def grouped_losses(samples: Sequence[CurveSample], params, pcfg: PredictorConfig, cfg: TrainConfig,
                   mask_keys: Optional[Sequence[Sequence[int]]] = None, isometries=None) -> List[LossParts]:
    """Per-sample losses where each neural step runs one network call per
    geometry over the concatenated edge features of that geometry's samples."""
    torch_mode = B.is_torch(*params.values())
    verts = [warmup_polygon(s, cfg) for s in samples]
    if torch_mode:
        verts = [torch.as_tensor(v) for v in verts]
    m = B.xp(*verts)
    for t in range(cfg.neural_steps):
        feats = [extract_features(v, s.geometry) for v, s in zip(verts, samples)]
        alphas = [None] * len(samples)
        for g in ALL_GEOMETRIES:
            idx = [i for i, s in enumerate(samples) if s.geometry is g]
            if not idx:
                continue
            X = m.concatenate([feats[i] for i in idx], axis=0)
            masks = None
            if mask_keys is not None:
                per = [dropout_masks(tuple(mask_keys[i]) + (t,), len(verts[i]), pcfg) for i in idx]
                masks = [np.concatenate([p[layer] for p in per], axis=0) for layer in range(pcfg.trunk_depth)]
            out = forward(X, params, pcfg, masks)
            off = 0
            for i in idx:
                n = len(verts[i])
                alphas[i] = out[off:off + n]
                off += n
        verts = [subdivide_step(v, a, s.geometry, cfg.hyp_rule) for v, a, s in zip(verts, alphas, samples)]
    isometries = isometries or [()] * len(samples)
    return [finish_loss(s, v, params, pcfg, cfg, iso) for s, v, iso in zip(samples, verts, isometries)]


def params_to_torch(params: Dict[str, np.ndarray]):
    return {k: torch.tensor(np.asarray(v, dtype=np.float64), requires_grad=True) for k, v in params.items()}


def _grad_flat(tparams, pcfg):
    return flatten_params({k: (v.grad if v.grad is not None else torch.zeros_like(v))
                           for k, v in tparams.items()}, pcfg)


def batch_gradient(samples, params, pcfg: PredictorConfig, cfg: TrainConfig, mask_keys=None,
                   isometries=None, grouped: bool = True):
    """Mean loss and its gradient (flat, manifest order) over the finite samples.

    ``grouped=False`` differentiates each sample separately and averages the
    per-sample gradients, which is the reference for the grouped path.
    """
    isometries = isometries or [()] * len(samples)
    mask_keys = mask_keys if mask_keys is not None else [None] * len(samples)
    if grouped:
        tp = params_to_torch(params)
        keys = None if mask_keys[0] is None else mask_keys
        parts = grouped_losses(samples, tp, pcfg, cfg, keys, isometries)
        ok = [p for p in parts if np.isfinite(p.values()["loss"])]
        if ok:
            (sum(p.total for p in ok) / len(ok)).backward()
        grad = _grad_flat(tp, pcfg)
        return parts, grad, len(parts) - len(ok)
    grads, parts = [], []
    for s, key, iso in zip(samples, mask_keys, isometries):
        tp = params_to_torch(params)
        part = sample_loss(s, tp, pcfg, cfg, key, iso)
        parts.append(part)
        if np.isfinite(part.values()["loss"]):
            part.total.backward()
            grads.append(_grad_flat(tp, pcfg))
    grad = np.mean(grads, axis=0) if grads else np.zeros(sum(v.size for v in params.values()))
    return parts, grad, len(parts) - len(grads)


def finite_difference_gradient(loss_fn: Callable[[np.ndarray], float], flat: np.ndarray,
                               indices: Sequence[int], h: float = 1e-5) -> np.ndarray:
    """Central differences of ``loss_fn`` at ``flat`` along selected coordinates."""
    out = np.empty(len(indices))
    for n, i in enumerate(indices):
        up, down = flat.copy(), flat.copy()
        up[i] += h
        down[i] -= h
        out[n] = (loss_fn(up) - loss_fn(down)) / (2.0 * h)
    return out


# ---------------------------------------------------------------- validation

def validation_metric(samples: Sequence[CurveSample], params, pcfg: PredictorConfig, levels: int,
                      cfg: TrainConfig) -> Dict[str, float]:
    """Per-geometry mean of one-sided mean-NN after ``levels`` levels, plus their mean."""
    per: Dict[str, List[float]] = {}
    np_params = _to_backend_params(params, False)
    for s in samples:
        Q = subdivide_neural(s.polygon, np_params, pcfg, levels, cfg.warmup_mu, cfg.hyp_rule)
        per.setdefault(s.geometry.label, []).append(mean_nn(Q.vertices, s.ground_truth, s.geometry))
    out = {g: float(np.mean(v)) for g, v in sorted(per.items())}
    out["mean"] = float(np.mean(list(out.values())))
    return out


# ---------------------------------------------------------------- loop

@dataclass
class TrainResult:
    params: Dict[str, np.ndarray]
    log: List[dict]
    best_metric: float
    best_epoch: int
    stopped_early: bool


def _save_state(path: Path, state: AdamState, epoch: int, stopper: EarlyStopping, best_flat, log):
    np.savez(path, params=state.params, m=state.m, v=state.v, step=state.step, epoch=epoch,
             best_flat=best_flat, stopper=json.dumps(asdict(stopper)), log=json.dumps(log))


def _load_state(path: Path):
    z = np.load(path, allow_pickle=False)
    state = AdamState(z["params"].copy(), z["m"].copy(), z["v"].copy(), int(z["step"]))
    stopper = EarlyStopping(**json.loads(str(z["stopper"])))
    return state, int(z["epoch"]), stopper, z["best_flat"].copy(), json.loads(str(z["log"]))


def train(dataset: Dataset, pcfg: PredictorConfig, cfg: TrainConfig, seed: int = 0,
          out_dir=None, resume: bool = False, train_subset=None, val_subset=None,
          progress: Optional[Callable[[dict], None]] = None) -> TrainResult:
    """Optimise the predictor; writes ``train_log.jsonl``, ``best.ckpt`` and a
    resumable ``state.npz`` into ``out_dir`` when given."""
    train_set = list(train_subset if train_subset is not None else dataset.train)
    val_set = list(val_subset if val_subset is not None else dataset.val)
    if not train_set or not val_set:
        raise ConfigurationError("training needs nonempty train and validation splits")
    torch.set_num_threads(1)
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)

    init_seed = np.random.SeedSequence([seed, 1])
    state = AdamState.fresh(flatten_params(init_params(pcfg, init_seed), pcfg))
    stopper = EarlyStopping(cfg.lr_patience, cfg.stop_patience, cfg.min_improve, cfg.lr_min / cfg.lr)
    best_flat = state.params.copy()
    log: List[dict] = []
    start = 0
    if resume:
        if out is None or not (out / "state.npz").exists():
            raise ConfigurationError("nothing to resume: no state.npz in the output directory")
        state, start, stopper, best_flat, log = _load_state(out / "state.npz")

    stopped = False
    for epoch in range(start, cfg.epochs):
        lr = lr_at_epoch(epoch, cfg) * stopper.multiplier
        order = np.random.default_rng([seed, 2, epoch]).permutation(len(train_set))
        sums = {"loss": 0.0, "chamfer": 0.0, "smooth": 0.0, "bending": 0.0, "equiv": 0.0}
        n_ok = skipped = steps_skipped = 0
        for b, lo in enumerate(range(0, len(order), cfg.batch_size)):
            batch = [train_set[i] for i in order[lo:lo + cfg.batch_size]]
            iso_rng = np.random.default_rng([seed, 3, epoch, b])
            isos = [equivariance_isometries(s.geometry, iso_rng, cfg) for s in batch]
            keys = [(seed, epoch, b, i) for i in range(len(batch))]
            params = unflatten_params(state.params, pcfg)
            parts, grad, n_bad = batch_gradient(batch, params, pcfg, cfg, keys, isos, grouped=True)
            skipped += n_bad
            for p in parts:
                vals = p.values()
                if np.isfinite(vals["loss"]):
                    n_ok += 1
                    for k in sums:
                        sums[k] += vals[k]
            state, info = adamw_step(state, grad, lr, cfg)
            steps_skipped += int(info["skipped"])
        rec = {"epoch": epoch, "lr": lr, "lr_multiplier": stopper.multiplier,
               **{k: v / max(n_ok, 1) for k, v in sums.items()},
               "skipped_samples": skipped, "skipped_steps": steps_skipped}
        check = (epoch + 1) % cfg.eval_every == 0 or epoch == cfg.epochs - 1
        if check:
            params = unflatten_params(state.params, pcfg)
            val = validation_metric(val_set, params, pcfg, cfg.eval_levels, cfg)
            val_train_protocol = validation_metric(val_set, params, pcfg, 1 + cfg.neural_steps, cfg)
            improved_before = stopper.best
            stopped = stopper.update(val["mean"], epoch)
            if stopper.best < improved_before:
                best_flat = state.params.copy()
            rec.update({"val_mean_nn": val, "val_mean_nn_train_levels": val_train_protocol,
                        "best": stopper.best, "best_epoch": stopper.best_epoch,
                        "stale_checks": stopper.stale, "lr_reductions": stopper.reductions})
        log.append(rec)
        if progress is not None:
            progress(rec)
        if out is not None:
            with open(out / "train_log.jsonl", "w") as fh:
                fh.writelines(json.dumps(r, sort_keys=True) + "\n" for r in log)
            if check:
                save_checkpoint(unflatten_params(best_flat, pcfg), pcfg,
                                {"epoch": stopper.best_epoch, "metric": stopper.best, "seed": seed},
                                out / "best.ckpt")
                _save_state(out / "state.npz", state, epoch + 1, stopper, best_flat, log)
        if stopped:
            break

    return TrainResult(unflatten_params(best_flat, pcfg), log, stopper.best, stopper.best_epoch, stopped)


# ---------------------------------------------------------------- presets

def desk_preset(epochs: int = 30):
    """30 curves per geometry, width 32, 30 epochs; other settings at their defaults."""
    return PredictorConfig(width=32), TrainConfig(epochs=epochs)


def full_preset():
    """Full-size settings; long-running on a CPU."""
    return PredictorConfig(), TrainConfig()


DESK_CURVES_PER_GEOMETRY = 30


def with_overrides(cfg, **kw):
    return replace(cfg, **kw)
