"""Two-layer ReLU network with hand-written backpropagation.

Logits can optionally be rescaled per sample to ``g = f * K / ||f||_1`` so
that the temperature of the LDR losses acts on a fixed score scale.
"""
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .baselines import ConfigError

NORM_EPS = 1e-8
PARAM_NAMES = ("W1", "b1", "W2", "b2")


@dataclass
class MlpModel:
    W1: np.ndarray  # (h, d)
    b1: np.ndarray  # (h,)
    W2: np.ndarray  # (K, h)
    b2: np.ndarray  # (K,)

    @property
    def shape(self):
        h, d = self.W1.shape
        return d, h, self.W2.shape[0]

    def params(self):
        return [self.W1, self.b1, self.W2, self.b2]

    def copy(self):
        return MlpModel(*(p.copy() for p in self.params()))


def init_mlp(d, K, hidden=None, seed=0):
    """Kaiming-uniform weights (fan-in, ReLU gain) and zero biases."""
    h = min(d, K) if hidden is None else hidden
    rng = np.random.default_rng(seed)
    b_in, b_out = np.sqrt(6.0 / d), np.sqrt(6.0 / h)
    return MlpModel(rng.uniform(-b_in, b_in, (h, d)), np.zeros(h),
                    rng.uniform(-b_out, b_out, (K, h)), np.zeros(K))


def normalize_logits(F):
    """Per-row ``F * K / ||F||_1``; rows with norm at most ``NORM_EPS`` pass through."""
    K = F.shape[-1]
    s = np.abs(F).sum(axis=-1, keepdims=True)
    active = s > NORM_EPS
    return np.where(active, F * K / np.where(active, s, 1.0), F), s, active


def forward_batch(model, X, normalize=False):
    """Raw logits ``F``, the (possibly normalized) logits ``G`` and a backward cache."""
    X = np.atleast_2d(X)
    pre = X @ model.W1.T + model.b1
    H = np.maximum(pre, 0.0)
    F = H @ model.W2.T + model.b2
    if normalize:
        G, s, active = normalize_logits(F)
    else:
        G, s, active = F, None, None
    return F, G, (X, pre, H, F, G, s, active)


def forward(model, x, normalize=True):
    F, G, cache = forward_batch(model, np.asarray(x, dtype=float)[None], normalize)
    return F[0], G[0], cache


def backward(model, cache, dG):
    """Parameter gradients given ``dL/dG`` for every row of the cache.

    The loss is taken to be the sum over rows; divide ``dG`` by the batch
    size beforehand for a mean.
    """
    X, pre, H, F, G, s, active = cache
    dG = np.atleast_2d(dG)
    if s is None:
        dF = dG
    else:
        K = F.shape[1]
        inner = (G * dG).sum(axis=1, keepdims=True) / K
        scaled = (K / np.where(active, s, 1.0)) * (dG - np.sign(F) * inner)
        dF = np.where(active, scaled, dG)
    dW2 = dF.T @ H
    db2 = dF.sum(axis=0)
    dpre = (dF @ model.W2) * (pre > 0)
    dW1 = dpre.T @ X
    db1 = dpre.sum(axis=0)
    return [dW1, db1, dW2, db2]


def flatten(arrays):
    return np.concatenate([a.ravel() for a in arrays])


def unflatten(vec, like):
    out, pos = [], 0
    for a in like:
        out.append(vec[pos:pos + a.size].reshape(a.shape))
        pos += a.size
    return out


# checkpoint: magic, array count, then per array (ndim, dims...) as <u8, then
# all payloads as little-endian float64 in declaration order
_MAGIC = b"LDRMLP01"


def save_checkpoint(model, path):
    arrays = model.params()
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<Q", len(arrays)))
        for a in arrays:
            fh.write(struct.pack(f"<Q{a.ndim}Q", a.ndim, *a.shape))
        for a in arrays:
            fh.write(np.ascontiguousarray(a, dtype="<f8").tobytes())


def load_checkpoint(path):
    buf = Path(path).read_bytes()
    if buf[:8] != _MAGIC:
        raise ValueError(f"{path}: not a model checkpoint")
    (count,), pos = struct.unpack_from("<Q", buf, 8), 16
    shapes = []
    for _ in range(count):
        (ndim,) = struct.unpack_from("<Q", buf, pos)
        shapes.append(struct.unpack_from(f"<{ndim}Q", buf, pos + 8))
        pos += 8 * (ndim + 1)
    arrays = []
    for shape in shapes:
        n = int(np.prod(shape))
        arrays.append(np.frombuffer(buf, dtype="<f8", count=n, offset=pos).reshape(shape).copy())
        pos += 8 * n
    return MlpModel(*arrays)


def decision_grid(model, bounds, resolution, normalize=False):
    """Argmax class on a ``resolution x resolution`` grid over ``bounds``.

    ``bounds`` is ``(xmin, xmax, ymin, ymax)``. Row ``i`` of the result is
    the ``i``-th y value, column ``j`` the ``j``-th x value.
    """
    if model.shape[0] != 2:
        raise ConfigError("decision grids need a model with 2-D inputs")
    xmin, xmax, ymin, ymax = bounds
    xs = np.linspace(xmin, xmax, resolution)
    ys = np.linspace(ymin, ymax, resolution)
    gx, gy = np.meshgrid(xs, ys)
    _, G, _ = forward_batch(model, np.column_stack([gx.ravel(), gy.ravel()]), normalize)
    return np.argmax(G, axis=1).reshape(resolution, resolution)
