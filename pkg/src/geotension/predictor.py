"""Per-edge tension predictor: geometry embedding, input projection, residual
trunk and a bounded sigmoid head.

Parameters live in a plain ``dict`` of arrays keyed by the manifest names, so
the same ``forward`` runs on numpy float64 for evaluation and on torch
float64 tensors when gradients are needed.
"""
from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import _backend as B
from .features import N_INTRINSIC, extract_features
from .geometry import ClosedPolygon, Geometry
from .subdivision import ALPHA_MAX, ALPHA_MIN, WARMUP_MU, classical_refine, subdivide_step

LN_EPS = 1e-5
LOGIT_CLIP = 30.0
GEOMETRY_MODES = ("learned", "onehot", "none")
HEAD_OUT_INITS = ("zero", "he")
CHECKPOINT_MAGIC = b"GTCK"
CHECKPOINT_VERSION = 1


class CheckpointError(ValueError):
    """Malformed, mismatched or corrupted predictor parameters."""


@dataclass(frozen=True)
class PredictorConfig:
    width: int = 128
    trunk_depth: int = 4
    embed_dim: int = 8
    head_hidden: int = 32
    dropout_rate: float = 0.05
    alpha_min: float = ALPHA_MIN
    alpha_max: float = ALPHA_MAX
    geometry_mode: str = "learned"
    head_out_init: str = "zero"

    def __post_init__(self):
        if self.head_out_init not in HEAD_OUT_INITS:
            raise ValueError(f"head_out_init must be one of {HEAD_OUT_INITS}")
        if self.geometry_mode not in GEOMETRY_MODES:
            raise ValueError(f"geometry_mode must be one of {GEOMETRY_MODES}")
        if not (-np.pi / 4 < self.alpha_min < self.alpha_max < np.pi / 4):
            raise ValueError("need -pi/4 < alpha_min < alpha_max < pi/4")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError("dropout_rate must lie in [0, 1)")
        for name in ("width", "trunk_depth", "head_hidden"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")

    @property
    def cond_dim(self) -> int:
        return {"learned": self.embed_dim, "onehot": 3, "none": 0}[self.geometry_mode]

    @property
    def in_dim(self) -> int:
        return N_INTRINSIC + self.cond_dim

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "PredictorConfig":
        return cls(**d)


def param_manifest(cfg: PredictorConfig) -> List[Tuple[str, Tuple[int, ...]]]:
    """Ordered ``(name, shape)`` list; linear weights are ``(out, in)``."""
    d = cfg.width
    spec: List[Tuple[str, Tuple[int, ...]]] = []
    if cfg.geometry_mode == "learned":
        spec.append(("embed", (3, cfg.embed_dim)))
    spec += [("proj.w", (d, cfg.in_dim)), ("proj.b", (d,)), ("proj.ln.g", (d,)), ("proj.ln.b", (d,))]
    for i in range(cfg.trunk_depth):
        p = f"block{i}"
        spec += [
            (f"{p}.ln1.g", (d,)), (f"{p}.ln1.b", (d,)),
            (f"{p}.w1", (d, d)), (f"{p}.b1", (d,)),
            (f"{p}.ln2.g", (d,)), (f"{p}.ln2.b", (d,)),
            (f"{p}.w2", (d, d)), (f"{p}.b2", (d,)),
        ]
    spec += [
        ("head.w1", (cfg.head_hidden, d)), ("head.b1", (cfg.head_hidden,)),
        ("head.w2", (1, cfg.head_hidden)), ("head.b2", (1,)),
    ]
    return spec


def param_count(cfg: PredictorConfig) -> int:
    return int(sum(np.prod(s) for _, s in param_manifest(cfg)))


def linear_layers(cfg: PredictorConfig) -> List[str]:
    names = ["proj.w"]
    for i in range(cfg.trunk_depth):
        names += [f"block{i}.w1", f"block{i}.w2"]
    return names + ["head.w1", "head.w2"]


def init_params(cfg: PredictorConfig, seed=0) -> Dict[str, np.ndarray]:
    """He-normal weights, zero biases, LayerNorm gain 1 and shift 0.

    With ``head_out_init="zero"`` the final 32 -> 1 weight starts at zero, so
    the untrained network predicts the midpoint angle 0 on every edge; the
    draw sequence is the same either way.
    """
    rng = np.random.default_rng(seed)
    params = {}
    for name, shape in param_manifest(cfg):
        leaf = name.rsplit(".", 1)[-1]
        if name == "embed":
            params[name] = rng.normal(0.0, 1.0, size=shape)
        elif leaf.startswith("w"):
            params[name] = rng.normal(0.0, np.sqrt(2.0 / shape[1]), size=shape)
            if name == "head.w2" and cfg.head_out_init == "zero":
                params[name][:] = 0.0
        elif leaf == "g":
            params[name] = np.ones(shape)
        else:
            params[name] = np.zeros(shape)
    return params


def flatten_params(params, cfg: PredictorConfig) -> np.ndarray:
    return np.concatenate([np.asarray(B.to_numpy(params[n]), dtype=np.float64).ravel()
                           for n, _ in param_manifest(cfg)])


def unflatten_params(vec, cfg: PredictorConfig) -> Dict[str, np.ndarray]:
    vec = np.asarray(vec, dtype=np.float64)
    if vec.shape != (param_count(cfg),):
        raise CheckpointError(f"expected {param_count(cfg)} parameters, got {vec.size}")
    out, off = {}, 0
    for name, shape in param_manifest(cfg):
        n = int(np.prod(shape))
        out[name] = vec[off:off + n].reshape(shape).copy()
        off += n
    return out


def check_params(params, cfg: PredictorConfig):
    for name, shape in param_manifest(cfg):
        if name not in params:
            raise CheckpointError(f"missing parameter {name}")
        arr = params[name]
        if tuple(arr.shape) != shape:
            raise CheckpointError(f"{name}: shape {tuple(arr.shape)} does not match {shape}")
        if not bool(np.all(np.isfinite(B.to_numpy(arr)))):
            raise CheckpointError(f"{name}: non-finite entries")


# ---------------------------------------------------------------- forward

def _layer_norm(x, g, b):
    m = B.xp(x)
    mu = m.mean(x, axis=-1, keepdims=True)
    c = x - mu
    var = m.mean(c * c, axis=-1, keepdims=True)
    return c / m.sqrt(var + LN_EPS) * g + b


def _linear(x, w, b):
    return x @ w.T + b


def dropout_masks(key: Sequence[int], n_rows: int, cfg: PredictorConfig) -> List[np.ndarray]:
    """Inverted-dropout masks, one ``(n_rows, width)`` array per trunk block.

    ``key`` is any tuple of nonnegative ints (epoch, batch, sample, step ...);
    equal keys always give equal masks.
    """
    keep = 1.0 - cfg.dropout_rate
    masks = []
    for layer in range(cfg.trunk_depth):
        rng = np.random.default_rng([int(k) for k in key] + [layer])
        masks.append((rng.random((n_rows, cfg.width)) < keep) / keep)
    return masks


def _conditioning(features, params, cfg):
    m = B.xp(features)
    x = features[:, :N_INTRINSIC]
    if cfg.geometry_mode == "none":
        return x
    idx = np.rint(B.to_numpy(features[:, N_INTRINSIC])).astype(int) + 1
    if np.any((idx < 0) | (idx > 2)):
        raise ValueError("geometry code must be -1, 0 or +1")
    if cfg.geometry_mode == "learned":
        cond = params["embed"][idx]
    else:
        cond = B.asarray(np.eye(3)[idx], features)
    return m.concatenate([x, cond], axis=1)


def forward_logit(features, params, cfg: PredictorConfig, masks: Optional[List] = None):
    """Pre-sigmoid scalar per edge, clipped to ``[-30, 30]``.

    ``masks`` switches on training-mode dropout; ``None`` is evaluation mode.
    """
    if not B.is_torch(features, *params.values()):
        for name, _ in param_manifest(cfg):
            if not np.all(np.isfinite(params[name])):
                raise CheckpointError(f"{name}: non-finite entries")
    elif not B.is_torch(features):
        features = B.asarray(features, params["proj.w"])
    gelu = B.gelu
    h = gelu(_layer_norm(_linear(_conditioning(features, params, cfg), params["proj.w"], params["proj.b"]),
                         params["proj.ln.g"], params["proj.ln.b"]))
    for i in range(cfg.trunk_depth):
        p = f"block{i}."
        z = _linear(_layer_norm(h, params[p + "ln1.g"], params[p + "ln1.b"]), params[p + "w1"], params[p + "b1"])
        z = gelu(z)
        if masks is not None:
            z = z * B.asarray(masks[i], z)
        z = _linear(_layer_norm(z, params[p + "ln2.g"], params[p + "ln2.b"]), params[p + "w2"], params[p + "b2"])
        h = gelu(h + z)
    f = _linear(gelu(_linear(h, params["head.w1"], params["head.b1"])), params["head.w2"], params["head.b2"])[:, 0]
    return B.clip(f, -LOGIT_CLIP, LOGIT_CLIP)


def logit_to_angle(f, cfg: PredictorConfig):
    return cfg.alpha_min + (cfg.alpha_max - cfg.alpha_min) * B.sigmoid(f)


def forward(features, params, cfg: PredictorConfig, masks: Optional[List] = None, seed=None):
    """Insertion angle per edge, strictly inside ``(alpha_min, alpha_max)``.

    Pass ``seed`` (an int or int tuple) or explicit ``masks`` for training mode.
    """
    if seed is not None and masks is None:
        key = (seed,) if np.isscalar(seed) else tuple(seed)
        masks = dropout_masks(key, len(features), cfg)
    return logit_to_angle(forward_logit(features, params, cfg, masks), cfg)


def predict_angles(vertices, g: Geometry, params, cfg: PredictorConfig, masks=None):
    return forward(extract_features(vertices, g), params, cfg, masks)


def subdivide_neural(P: ClosedPolygon, params, cfg: PredictorConfig, k: int = 5,
                     warmup_mu: float = WARMUP_MU, hyp_rule: str = "corrected") -> ClosedPolygon:
    """One classical warm-up level then ``k - 1`` predicted levels."""
    if k < 0:
        raise ValueError("k must be nonnegative")
    v = P.vertices
    g = P.geometry
    if k >= 1:
        v = classical_refine(v, g, warmup_mu, 1, hyp_rule)
    for _ in range(k - 1):
        v = subdivide_step(v, predict_angles(v, g, params, cfg), g, hyp_rule)
    return ClosedPolygon(g, v)


# ---------------------------------------------------------------- checkpoints

def save_checkpoint(params, cfg: PredictorConfig, meta: Optional[dict], path) -> Path:
    """``GTCK`` + u64 header length + JSON header + little-endian float64 payload."""
    check_params(params, cfg)
    manifest, off = [], 0
    for name, shape in param_manifest(cfg):
        manifest.append({"name": name, "shape": list(shape), "offset": off})
        off += int(np.prod(shape))
    header = json.dumps({
        "format_version": CHECKPOINT_VERSION,
        "config": cfg.to_dict(),
        "manifest": manifest,
        "count": off,
        "meta": meta or {},
    }, sort_keys=True).encode("utf-8")
    payload = flatten_params(params, cfg).astype("<f8").tobytes()
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(CHECKPOINT_MAGIC + struct.pack("<Q", len(header)) + header + payload)
    tmp.replace(path)
    return path


def load_checkpoint(path, expect: Optional[PredictorConfig] = None):
    """Return ``(params, cfg, meta)``; raises ``CheckpointError`` on any defect."""
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc.strerror}") from None
    if raw[:4] != CHECKPOINT_MAGIC or len(raw) < 12:
        raise CheckpointError(f"{path}: not a predictor checkpoint")
    (hlen,) = struct.unpack("<Q", raw[4:12])
    try:
        header = json.loads(raw[12:12 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError):
        raise CheckpointError(f"{path}: corrupt header") from None
    if header.get("format_version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: unsupported format version {header.get('format_version')}")
    cfg = PredictorConfig.from_dict(header["config"])
    body = raw[12 + hlen:]
    if len(body) != 8 * header["count"] or header["count"] != param_count(cfg):
        raise CheckpointError(f"{path}: payload size does not match the manifest (truncated?)")
    if expect is not None:
        want = dict(param_manifest(expect))
        for name, shape in param_manifest(cfg):
            if want.get(name) != shape:
                raise CheckpointError(f"{path}: {name} has shape {shape}, requested config needs {want.get(name)}")
        if len(want) != len(param_manifest(cfg)):
            raise CheckpointError(f"{path}: layer inventory differs from requested config")
    params = unflatten_params(np.frombuffer(body, dtype="<f8").astype(np.float64), cfg)
    check_params(params, cfg)
    return params, cfg, header["meta"]


# ---------------------------------------------------------------- Lipschitz

def spectral_norm(W, iters: int = 100, seed=0) -> float:
    """Largest singular value by power iteration on ``W^T W``."""
    W = np.asarray(W, dtype=np.float64)
    v = np.random.default_rng(seed).normal(size=W.shape[1])
    v /= np.linalg.norm(v)
    sigma = 0.0
    for _ in range(iters):
        u = W @ v
        sigma = np.linalg.norm(u)
        if sigma == 0.0:
            return 0.0
        v = W.T @ (u / sigma)
        v /= np.linalg.norm(v)
    return float(np.linalg.norm(W @ v))


@dataclass
class LipschitzReport:
    layer_norms: Dict[str, float]
    lipschitz: float
    c_prox: float
    k_feat: float = 1.0 / np.pi
    k_ins: float = 2.0


def lipschitz_estimate(params, cfg: PredictorConfig, iters: int = 100, seed=0) -> LipschitzReport:
    """Product of per-layer spectral norms and the derived proximity constant
    ``(L + pi/8) * K_feat * K_ins``."""
    if iters < 10:
        raise ValueError("iters must be at least 10")
    norms = {n: spectral_norm(B.to_numpy(params[n]), iters, [i, int(seed)])
             for i, n in enumerate(linear_layers(cfg))}
    L = float(np.prod(list(norms.values())))
    return LipschitzReport(norms, L, (L + np.pi / 8) * (1.0 / np.pi) * 2.0)
