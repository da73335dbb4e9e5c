"""Dense two-layer network numerics.

Everything trainable in the package is an affine -> ReLU -> affine network
(``DenseParams``).  This module holds the forward/backward pass, the two
losses, the optimizers, a seeded RNG wrapper, a finite-difference gradient
checker and the binary checkpoint format.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterator

import numpy as np

__all__ = [
    "DenseParams",
    "OptimState",
    "Rng",
    "NonFiniteGradientError",
    "init_dense",
    "zeros_dense",
    "mlp_forward",
    "mlp_backward",
    "softmax",
    "log_softmax",
    "sigmoid",
    "cross_entropy_loss",
    "sigmoid_bce",
    "optimizer_step",
    "finite_diff_check",
    "save_checkpoint",
    "load_checkpoint",
]

PARAM_NAMES = ("w1", "b1", "w2", "b2")
CHECKPOINT_MAGIC = b"DFM1"


class NonFiniteGradientError(FloatingPointError):
    """Raised when an update would inject NaN/inf into a parameter."""


@dataclass
class DenseParams:
    w1: np.ndarray  # [hidden, in]
    b1: np.ndarray  # [hidden]
    w2: np.ndarray  # [out, hidden]
    b2: np.ndarray  # [out]

    def __post_init__(self) -> None:
        hidden, in_dim = self.w1.shape
        out_dim = self.w2.shape[0]
        if self.b1.shape != (hidden,) or self.w2.shape != (out_dim, hidden) or self.b2.shape != (out_dim,):
            raise ValueError(
                f"inconsistent shapes: w1{self.w1.shape} b1{self.b1.shape} "
                f"w2{self.w2.shape} b2{self.b2.shape}"
            )

    @property
    def in_dim(self) -> int:
        return self.w1.shape[1]

    @property
    def hidden(self) -> int:
        return self.w1.shape[0]

    @property
    def out_dim(self) -> int:
        return self.w2.shape[0]

    @property
    def dtype(self) -> np.dtype:
        return self.w1.dtype

    def items(self) -> Iterator[tuple[str, np.ndarray]]:
        for name in PARAM_NAMES:
            yield name, getattr(self, name)

    def copy(self) -> "DenseParams":
        return DenseParams(*(t.copy() for _, t in self.items()))

    def astype(self, dtype) -> "DenseParams":
        return DenseParams(*(t.astype(dtype) for _, t in self.items()))

    def zeros_like(self) -> "DenseParams":
        return DenseParams(*(np.zeros_like(t) for _, t in self.items()))

    def flat(self) -> np.ndarray:
        return np.concatenate([t.ravel() for _, t in self.items()])

    def checksum(self) -> str:
        h = hashlib.sha256()
        for _, t in self.items():
            h.update(np.ascontiguousarray(t).tobytes())
        return h.hexdigest()

    def all_finite(self) -> bool:
        return all(np.isfinite(t).all() for _, t in self.items())


def init_dense(in_dim: int, hidden: int, out_dim: int, rng: "Rng", dtype=np.float32) -> DenseParams:
    """Glorot-uniform weights, zero biases."""
    a1 = np.sqrt(6.0 / (in_dim + hidden))
    a2 = np.sqrt(6.0 / (hidden + out_dim))
    w1 = rng.gen.uniform(-a1, a1, size=(hidden, in_dim)).astype(dtype)
    w2 = rng.gen.uniform(-a2, a2, size=(out_dim, hidden)).astype(dtype)
    return DenseParams(w1, np.zeros(hidden, dtype), w2, np.zeros(out_dim, dtype))


def zeros_dense(in_dim: int, hidden: int, out_dim: int, dtype=np.float32) -> DenseParams:
    return DenseParams(
        np.zeros((hidden, in_dim), dtype),
        np.zeros(hidden, dtype),
        np.zeros((out_dim, hidden), dtype),
        np.zeros(out_dim, dtype),
    )


class Rng:
    """Seeded PCG64 stream.

    Child streams are derived through ``SeedSequence`` spawn keys so that a
    worker never shares state with its parent.
    """

    def __init__(self, seed: int, _key: tuple[int, ...] = ()) -> None:
        self.seed = int(seed) & 0xFFFFFFFFFFFFFFFF
        self.key = tuple(_key)
        self.gen = np.random.Generator(np.random.PCG64(np.random.SeedSequence(self.seed, spawn_key=self.key)))

    def child(self, *key: int) -> "Rng":
        return Rng(self.seed, self.key + tuple(int(k) for k in key))

    def __repr__(self) -> str:
        return f"Rng(seed={self.seed}, key={self.key})"


@dataclass
class ForwardCache:
    c: np.ndarray
    pre: np.ndarray
    h: np.ndarray
    mask: np.ndarray | None


def mlp_forward(
    params: DenseParams,
    c: np.ndarray,
    dropout_p: float = 0.0,
    mode: str = "eval",
    rng: Rng | None = None,
) -> tuple[np.ndarray, ForwardCache]:
    """z = w2 · dropout(relu(w1 c + b1)) + b2 for a vector or a batch of rows.

    Train mode uses inverted dropout (kept units scaled by 1/(1-p)), so eval
    mode needs no rescaling.
    """
    if not 0.0 <= dropout_p < 1.0:
        raise ValueError(f"dropout_p must be in [0, 1), got {dropout_p}")
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    c = np.asarray(c)
    if c.shape[-1] != params.in_dim:
        raise ValueError(f"input has dim {c.shape[-1]}, network expects {params.in_dim}")
    c = c.astype(params.dtype, copy=False)
    pre = c @ params.w1.T + params.b1
    h = np.maximum(pre, 0)
    mask = None
    if mode == "train" and dropout_p > 0.0:
        if rng is None:
            raise ValueError("train-mode dropout needs an rng")
        keep = rng.gen.random(h.shape, dtype=np.float32) >= dropout_p
        mask = keep.astype(params.dtype) / params.dtype.type(1.0 - dropout_p)
        h = h * mask
    z = h @ params.w2.T + params.b2
    return z, ForwardCache(c, pre, h, mask)


def mlp_backward(params: DenseParams, cache: ForwardCache, dz: np.ndarray) -> DenseParams:
    """Parameter gradients given dL/dz; batch rows are summed."""
    dz = np.asarray(dz, dtype=params.dtype)
    c, h = cache.c, cache.h
    if dz.ndim == 1:
        dz, c, h = dz[None], c[None], h[None]
        pre = cache.pre[None]
        mask = None if cache.mask is None else cache.mask[None]
    else:
        pre, mask = cache.pre, cache.mask
    gw2 = dz.T @ h
    gb2 = dz.sum(axis=0, dtype=np.float64).astype(params.dtype)
    dh = dz @ params.w2
    if mask is not None:
        dh = dh * mask
    dpre = dh * (pre > 0)
    gw1 = dpre.T @ c
    gb1 = dpre.sum(axis=0, dtype=np.float64).astype(params.dtype)
    return DenseParams(gw1, gb1, gw2, gb2)


def softmax(z: np.ndarray) -> np.ndarray:
    """Max-shifted softmax over the last axis, returned in float64."""
    z = np.asarray(z, dtype=np.float64)
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def log_softmax(z: np.ndarray) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    s = z - z.max(axis=-1, keepdims=True)
    return s - np.log(np.exp(s).sum(axis=-1, keepdims=True))


def sigmoid(x):
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out if out.ndim else float(out)


LOG_CLAMP = 1e-12


def cross_entropy_loss(probs: np.ndarray, target) -> tuple[float | np.ndarray, np.ndarray]:
    """-log p[target] and its gradient w.r.t. the logits, p - onehot(target).

    Accepts one probability vector with an int target or a batch of rows with
    an int array; batch losses are returned per row (no averaging).
    """
    probs = np.asarray(probs, dtype=np.float64)
    if probs.ndim == 1:
        t = int(target)
        if not 0 <= t < probs.shape[0]:
            raise IndexError(f"target {t} out of range for {probs.shape[0]} classes")
        loss = -np.log(max(probs[t], LOG_CLAMP))
        grad = probs.copy()
        grad[t] -= 1.0
        return float(loss), grad
    t = np.asarray(target, dtype=np.int64)
    rows = np.arange(probs.shape[0])
    loss = -np.log(np.maximum(probs[rows, t], LOG_CLAMP))
    grad = probs.copy()
    grad[rows, t] -= 1.0
    return loss, grad


def sigmoid_bce(logit, label) -> tuple:
    """Binary cross-entropy on a raw logit.

    Uses max(z, 0) - z*y + log1p(exp(-|z|)), which never overflows.
    Gradient w.r.t. the logit is sigmoid(z) - y.
    """
    z = np.asarray(logit, dtype=np.float64)
    y = np.asarray(label, dtype=np.float64)
    loss = np.maximum(z, 0.0) - z * y + np.log1p(np.exp(-np.abs(z)))
    grad = sigmoid(z) - y
    if loss.ndim == 0:
        return float(loss), float(grad)
    return loss, grad


@dataclass
class OptimState:
    algorithm: str = "sgd"
    learning_rate: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: DenseParams | None = field(default=None, repr=False)
    v: DenseParams | None = field(default=None, repr=False)

    def __post_init__(self) -> None:
        if self.algorithm not in ("sgd", "adam"):
            raise ValueError(f"unknown optimizer {self.algorithm!r}")


def optimizer_step(params: DenseParams, grads: DenseParams, state: OptimState) -> tuple[DenseParams, OptimState]:
    """Update ``params`` in place and return ``(params, state)``."""
    for name, g in grads.items():
        p = getattr(params, name)
        if g.shape != p.shape:
            raise ValueError(f"gradient {name} has shape {g.shape}, parameter has {p.shape}")
        if not np.isfinite(g).all():
            raise NonFiniteGradientError(f"non-finite gradient in tensor {name!r}")
    state.step += 1
    lr = state.learning_rate
    if state.algorithm == "sgd":
        for name, g in grads.items():
            p = getattr(params, name)
            p -= (lr * g).astype(p.dtype, copy=False)
        return params, state

    if state.m is None:
        state.m = params.zeros_like()
        state.v = params.zeros_like()
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**state.step
    c2 = 1.0 - b2**state.step
    for name, g in grads.items():
        p = getattr(params, name)
        m = getattr(state.m, name)
        v = getattr(state.v, name)
        g = g.astype(p.dtype, copy=False)
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * np.square(g)
        denom = np.sqrt(v)
        denom *= 1.0 / np.sqrt(c2)
        denom += state.eps
        np.divide(m, denom, out=denom)
        denom *= lr / c1
        p -= denom
    return params, state


def finite_diff_check(
    f: Callable,
    params,
    epsilon: float = 1e-4,
) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``f(params)`` must return ``(value, grad)`` where ``grad`` has the same
    structure as ``params`` (an ndarray or a ``DenseParams``).  ``params`` is
    perturbed in place one coordinate at a time and restored afterwards.
    """
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    _, analytic = f(params)
    if isinstance(params, DenseParams):
        pairs = [(getattr(params, n), getattr(analytic, n)) for n in PARAM_NAMES]
    else:
        pairs = [(params, np.asarray(analytic))]
    worst = 0.0
    for p, a in pairs:
        flat_p = p.reshape(-1)
        flat_a = np.asarray(a, dtype=np.float64).reshape(-1)
        for i in range(flat_p.size):
            orig = flat_p[i]
            flat_p[i] = orig + epsilon
            fp = float(f(params)[0])
            flat_p[i] = orig - epsilon
            fm = float(f(params)[0])
            flat_p[i] = orig
            num = (fp - fm) / (2.0 * epsilon)
            denom = max(abs(flat_a[i]), abs(num), 1e-8)
            worst = max(worst, abs(flat_a[i] - num) / denom)
    return worst


def save_checkpoint(path, params: DenseParams, meta: dict | None = None) -> None:
    """Write ``DFM1`` binary weights plus a one-line ``.meta`` sidecar.

    Layout: magic, u32 number of shape entries (3), u32 in/hidden/out, then
    w1, b1, w2, b2 as little-endian float32.
    """
    path = Path(path)
    dims = (params.in_dim, params.hidden, params.out_dim)
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", len(dims)))
        fh.write(struct.pack("<3I", *dims))
        for _, t in params.items():
            fh.write(np.ascontiguousarray(t, dtype="<f4").tobytes())
    fields = {"in_dim": dims[0], "hidden": dims[1], "out_dim": dims[2]}
    fields.update(meta or {})
    line = " ".join(f"{k}={v}" for k, v in fields.items())
    Path(str(path) + ".meta").write_text(line + "\n")


def load_checkpoint(path) -> tuple[DenseParams, dict]:
    path = Path(path)
    raw = path.read_bytes()
    if raw[:4] != CHECKPOINT_MAGIC:
        raise ValueError(f"{path}: bad magic {raw[:4]!r}")
    (n,) = struct.unpack_from("<I", raw, 4)
    if n != 3:
        raise ValueError(f"{path}: expected 3 shape entries, got {n}")
    in_dim, hidden, out_dim = struct.unpack_from("<3I", raw, 8)
    offset = 20
    shapes = [(hidden, in_dim), (hidden,), (out_dim, hidden), (out_dim,)]
    tensors = []
    for shape in shapes:
        count = int(np.prod(shape))
        t = np.frombuffer(raw, dtype="<f4", count=count, offset=offset).astype(np.float32).reshape(shape)
        tensors.append(t)
        offset += 4 * count
    if offset != len(raw):
        raise ValueError(f"{path}: {len(raw) - offset} trailing bytes")
    meta: dict = {}
    meta_path = Path(str(path) + ".meta")
    if meta_path.exists():
        for tok in meta_path.read_text().split():
            k, _, v = tok.partition("=")
            meta[k] = v
    return DenseParams(*tensors), meta
