"""Array-backend dispatch shared by the numpy evaluation path and the torch
autodiff path.

Kernels in this package are written once against the small surface below and
run unchanged on ``numpy.ndarray`` (float64) or ``torch.Tensor`` (float64).
"""
import numpy as np
from scipy import special

try:
    import torch
except ImportError:  # pragma: no cover - torch is only needed for training
    torch = None


def is_torch(*arrays):
    return torch is not None and any(isinstance(a, torch.Tensor) for a in arrays)


def xp(*arrays):
    return torch if is_torch(*arrays) else np


def asarray(x, like):
    """Convert ``x`` to the backend of ``like`` (float64)."""
    if is_torch(like):
        if isinstance(x, torch.Tensor):
            return x
        return torch.as_tensor(np.asarray(x, dtype=np.float64))
    return np.asarray(x, dtype=np.float64)


def to_numpy(x):
    if is_torch(x):
        return x.detach().cpu().numpy()
    return np.asarray(x)


def dot(a, b):
    return xp(a, b).sum(a * b, axis=-1)


def safe_sqrt(x, floor=0.0):
    # zero gradient at exactly-zero input instead of inf * 0 = nan
    m = xp(x)
    pos = x > floor
    return m.where(pos, m.sqrt(m.where(pos, x, 1.0)), 0.0 * x)


def norm(a):
    return safe_sqrt(dot(a, a))


def normalize(a):
    n = norm(a)[..., None]
    m = xp(a)
    return a / m.where(n > 0, n, 1.0)


def cross3(a, b):
    m = xp(a, b)
    return m.stack(
        [
            a[..., 1] * b[..., 2] - a[..., 2] * b[..., 1],
            a[..., 2] * b[..., 0] - a[..., 0] * b[..., 2],
            a[..., 0] * b[..., 1] - a[..., 1] * b[..., 0],
        ],
        axis=-1,
    )


def cross2(a, b):
    return a[..., 0] * b[..., 1] - a[..., 1] * b[..., 0]


def erf(x):
    if is_torch(x):
        return torch.erf(x)
    return special.erf(x)


def gelu(x):
    return 0.5 * x * (1.0 + erf(x / np.sqrt(2.0)))


def sigmoid(x):
    if is_torch(x):
        return torch.sigmoid(x)
    return special.expit(x)


def atan(x):
    return xp(x).atan(x)


def atanh(x):
    return xp(x).atanh(x)


def clip(x, lo, hi):
    return xp(x).clip(x, lo, hi)


def interleave(a, b):
    """Rows ``a0, b0, a1, b1, ...`` for two (N, D) arrays."""
    m = xp(a, b)
    n, d = a.shape
    return m.stack([a, b], axis=1).reshape(2 * n, d)
