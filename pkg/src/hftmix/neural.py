"""Small numpy network toolkit with hand-written reverse-mode gradients.

Layers are stateless with respect to activations: ``forward`` returns the
output together with a cache, ``backward`` takes that cache back. This lets a
network run several forward passes (online/target, state/next-state) before
any backward pass. All arrays are 2-D ``(batch, features)`` in float64;
checkpoints store float32.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import CheckpointError, IndexOutOfRange, NonFiniteGradient, ShapeMismatch

LN_EPS = 1e-5
KL_FLOOR = 1e-12
CHECKPOINT_VERSION = 1
_MAGIC = b"HFTMIXCK"


class Parameter:
    __slots__ = ("name", "value", "grad")

    def __init__(self, name: str, value: np.ndarray):
        self.name = name
        self.value = np.asarray(value, dtype=float)
        self.grad = np.zeros_like(self.value)

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        return f"Parameter({self.name!r}, shape={self.value.shape})"


def _uniform(rng: np.random.Generator, fan_in: int, shape) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


class Dense:
    """``y = x W^T + b`` with ``W`` of shape (out, in)."""

    def __init__(self, name: str, n_in: int, n_out: int, rng: np.random.Generator):
        self.n_in, self.n_out = n_in, n_out
        self.W = Parameter(f"{name}.W", _uniform(rng, n_in, (n_out, n_in)))
        self.b = Parameter(f"{name}.b", _uniform(rng, n_in, (n_out,)))

    def params(self):
        return [self.W, self.b]

    def forward(self, x):
        x = np.asarray(x, dtype=float)
        if x.ndim != 2 or x.shape[1] != self.n_in:
            raise ShapeMismatch(f"{self.W.name}: expected (batch, {self.n_in}), got {x.shape}")
        return x @ self.W.value.T + self.b.value, x

    def backward(self, dy, cache):
        x = cache
        self.W.grad += dy.T @ x
        self.b.grad += dy.sum(axis=0)
        return dy @ self.W.value


def dense_forward(W, b, x):
    W, b, x = (np.asarray(a, dtype=float) for a in (W, b, x))
    if x.shape[-1] != W.shape[1] or b.shape[-1] != W.shape[0]:
        raise ShapeMismatch(f"W {W.shape}, b {b.shape}, x {x.shape} are incompatible")
    return x @ W.T + b


def dense_backward(W, x, dy):
    """Returns ``(dW, db, dx)`` for ``y = x W^T + b``."""
    W, x, dy = (np.atleast_2d(np.asarray(a, dtype=float)) for a in (W, x, dy))
    return dy.T @ x, dy.sum(axis=0), dy @ W


class Embedding:
    def __init__(self, name: str, num: int, dim: int, rng: np.random.Generator):
        self.num, self.dim = num, dim
        self.table = Parameter(f"{name}.table", _uniform(rng, dim, (num, dim)))

    def params(self):
        return [self.table]

    def forward(self, idx):
        idx = np.asarray(idx, dtype=np.int64).reshape(-1)
        if idx.size and (idx.min() < 0 or idx.max() >= self.num):
            raise IndexOutOfRange(f"{self.table.name}: index outside [0, {self.num})")
        return self.table.value[idx], idx

    def backward(self, dy, cache):
        np.add.at(self.table.grad, cache, dy)
        return None


def relu(x):
    mask = x > 0
    return x * mask, mask


def relu_backward(dy, mask):
    return dy * mask


def layer_norm(x, eps: float = LN_EPS):
    """Normalize each row to zero mean / unit variance (population); no affine."""
    x = np.asarray(x, dtype=float)
    if x.shape[-1] < 2:
        raise ShapeMismatch("layer_norm needs at least 2 features")
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + eps)
    xhat = xc * inv
    return xhat, (xhat, inv)


def layer_norm_backward(dy, cache):
    xhat, inv = cache
    return inv * (dy - dy.mean(axis=-1, keepdims=True) - xhat * (dy * xhat).mean(axis=-1, keepdims=True))


def softmax(logits, axis: int = -1):
    z = np.asarray(logits, dtype=float)
    z = z - z.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def log_softmax(logits, axis: int = -1):
    z = np.asarray(logits, dtype=float)
    z = z - z.max(axis=axis, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=axis, keepdims=True))


def kl_divergence(p, q, floor: float = KL_FLOOR):
    """KL(p || q) along the last axis, probabilities clamped at ``floor`` before the log."""
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    return (p * (np.log(np.maximum(p, floor)) - np.log(np.maximum(q, floor)))).sum(axis=-1)


def kl_to_logits(p, logits, tau: float = 1.0, floor: float = KL_FLOOR):
    """KL(p || softmax(logits / tau)) per row and its gradient w.r.t. ``logits``.

    The gradient ignores the floor (it is only active for probabilities below
    ``floor``, where the clamped log is constant).
    """
    q = softmax(np.asarray(logits, dtype=float) / tau)
    kl = kl_divergence(p, q, floor)
    grad = (q * p.sum(axis=-1, keepdims=True) - p) / tau
    return kl, grad


def kl_from_logits(logits, p, tau: float = 1.0, floor: float = KL_FLOOR):
    """KL(softmax(logits / tau) || p) per row and its gradient w.r.t. ``logits`` (reverse direction)."""
    z = np.asarray(logits, dtype=float) / tau
    q = softmax(z)
    log_q = np.log(np.maximum(q, floor))
    log_p = np.log(np.maximum(p, floor))
    kl = (q * (log_q - log_p)).sum(axis=-1)
    g = log_q - log_p
    grad = q * (g - (q * g).sum(axis=-1, keepdims=True)) / tau
    return kl, grad


class Module:
    """Base for composite networks: an ordered parameter registry."""

    def __init__(self):
        self._registry: list[Parameter] = []
        self.forward_calls = 0

    def register(self, *layers):
        for layer in layers:
            self._registry.extend(layer.params())
        return layers[0] if len(layers) == 1 else layers

    def parameters(self) -> list[Parameter]:
        return list(self._registry)

    def zero_grad(self):
        for p in self._registry:
            p.grad.fill(0.0)

    def state(self) -> dict[str, np.ndarray]:
        return {p.name: p.value.copy() for p in self._registry}

    def load_state(self, state: dict[str, np.ndarray]):
        for p in self._registry:
            if p.name not in state:
                raise CheckpointError(f"missing parameter {p.name}")
            v = np.asarray(state[p.name], dtype=float)
            if v.shape != p.value.shape:
                raise CheckpointError(f"{p.name}: shape {v.shape} != {p.value.shape}")
            p.value[...] = v

    def copy_from(self, other: Module):
        for mine, theirs in zip(self._registry, other._registry):
            mine.value[...] = theirs.value


@dataclass
class Adam:
    params: list
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)

    def __post_init__(self):
        self.m = [np.zeros_like(p.value) for p in self.params]
        self.v = [np.zeros_like(p.value) for p in self.params]

    def step(self):
        for p in self.params:
            if not np.all(np.isfinite(p.grad)):
                raise NonFiniteGradient(f"non-finite gradient in {p.name}")
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for p, m, v in zip(self.params, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * p.grad
            v *= self.beta2
            v += (1.0 - self.beta2) * p.grad * p.grad
            p.value -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def adam_step(state: Adam, params=None):
    state.step()
    return params if params is not None else state.params


@dataclass
class GradCheckReport:
    max_rel_error: float
    worst: str
    n_checked: int
    tolerance: float
    per_param: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return self.max_rel_error < self.tolerance


def grad_check(params, loss_fn, tolerance: float = 1e-4, h: float | tuple = 1e-6, max_entries: int | None = None,
               seed: int = 0, floor: float = 1e-7) -> GradCheckReport:
    """Compare analytic gradients with central differences.

    ``loss_fn(backward)`` returns the scalar loss; when ``backward`` is true it
    must also leave the analytic gradient in every ``Parameter.grad`` (zeroed
    first by this function). Relative error per entry is
    ``|g_a - g_n| / max(|g_a| + |g_n|, floor)``; at most ``max_entries``
    random entries per parameter are probed.

    ``h`` may be a tuple of step sizes; each entry then keeps its smallest
    error. Large steps can straddle a ReLU kink and small ones drown in
    round-off, while a wrong analytic gradient disagrees at every step.
    """
    steps = (h,) if np.isscalar(h) else tuple(h)
    params = list(params)
    for p in params:
        p.grad.fill(0.0)
    loss_fn(True)
    analytic = {p.name: p.grad.copy() for p in params}
    rng = np.random.default_rng(seed)
    worst, worst_name, n = 0.0, "", 0
    per = {}
    for p in params:
        flat = p.value.reshape(-1)
        idx = np.arange(flat.size)
        if max_entries is not None and flat.size > max_entries:
            idx = np.sort(rng.choice(flat.size, max_entries, replace=False))
        err_p = 0.0
        g_a = analytic[p.name].reshape(-1)
        for i in idx:
            old = flat[i]
            err = np.inf
            for step in steps:
                flat[i] = old + step
                lp = loss_fn(False)
                flat[i] = old - step
                lm = loss_fn(False)
                flat[i] = old
                g_n = (lp - lm) / (2 * step)
                err = min(err, abs(g_a[i] - g_n) / max(abs(g_a[i]) + abs(g_n), floor))
            err_p = max(err_p, err)
            n += 1
        per[p.name] = err_p
        if err_p > worst:
            worst, worst_name = err_p, p.name
    for p in params:
        p.grad[...] = analytic[p.name]
    return GradCheckReport(worst, worst_name, n, tolerance, per)


def save_checkpoint(path, params, manifest: dict) -> None:
    """Write ``magic | u64 header length | JSON header | float32 LE tensors``.

    Tensors follow registry order; the header lists names and shapes and
    carries the caller's manifest (seed, config hash, normalizer stats, ...).
    """
    params = list(params)
    header = dict(manifest)
    header["version"] = CHECKPOINT_VERSION
    header["tensors"] = [{"name": p.name, "shape": list(p.value.shape)} for p in params]
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        for p in params:
            fh.write(np.ascontiguousarray(p.value, dtype="<f4").tobytes())


def load_checkpoint(path) -> tuple[dict, dict[str, np.ndarray]]:
    data = Path(path).read_bytes()
    if data[:8] != _MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file")
    (hlen,) = struct.unpack("<Q", data[8:16])
    header = json.loads(data[16:16 + hlen])
    if "version" not in header:
        raise CheckpointError(f"{path}: header has no version")
    if header["version"] != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: unsupported version {header['version']}")
    off = 16 + hlen
    tensors = {}
    for t in header["tensors"]:
        count = int(np.prod(t["shape"], dtype=np.int64))
        arr = np.frombuffer(data, dtype="<f4", count=count, offset=off).reshape(t["shape"])
        tensors[t["name"]] = arr.astype(float)
        off += 4 * count
    if off != len(data):
        raise CheckpointError(f"{path}: {len(data) - off} trailing bytes")
    return header, tensors


def round_to_checkpoint_precision(module: Module):
    """Round parameters to float32 so in-memory values equal a saved-and-reloaded copy."""
    for p in module.parameters():
        p.value[...] = p.value.astype(np.float32).astype(float)
