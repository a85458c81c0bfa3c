"""Minimal tensor/autodiff engine and the small CNN for both learning objectives.

A define-by-run graph over numpy arrays: every op returns a :class:`Tensor`
holding the forward value and a closure that maps the output gradient to
parent gradients. ``loss.backward()`` walks the graph once; walking it again
without a fresh forward raises :class:`GraphReuseError`.

The model is deliberately small: stacks of 3x3 conv + ReLU + 2x2 max-pool
(optionally ResNet-style residual blocks), global average pooling, and a
linear head of 101 (multi-class) or 21 (multi-label) outputs. float32 is the
training dtype; construct with ``dtype=np.float64`` for gradient checking.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


class ShapeMismatchError(Exception):
    """Input shape incompatible with the model configuration."""


class GraphReuseError(Exception):
    """backward() called twice on the same forward graph."""


class NonFiniteError(Exception):
    """A parameter went NaN/Inf; names the offending layer."""


class Tensor:
    """Array node in the autodiff graph."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_grad_fn", "_needs", "_done")

    def __init__(self, data, requires_grad: bool = False, parents=(), grad_fn=None):
        self.data = np.asarray(data)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = tuple(parents)
        self._grad_fn = grad_fn
        self._needs = requires_grad or any(p._needs for p in self._parents)
        self._done = False

    @property
    def shape(self):
        return self.data.shape

    def zero_grad(self):
        self.grad = None

    def backward(self, grad: np.ndarray | None = None):
        if self._done:
            raise GraphReuseError("graph already consumed; run forward again")
        if grad is None:
            if self.data.size != 1:
                raise ValueError("backward() without a gradient needs a scalar output")
            grad = np.ones_like(self.data)
        # iterative topological order over the subgraph that needs gradients
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen or not node._needs:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                stack.append((p, False))
        self.grad = grad
        for node in reversed(order):
            if node._grad_fn is None or node.grad is None:
                continue
            for parent, pgrad in zip(node._parents, node._grad_fn(node.grad)):
                if pgrad is None or not parent._needs:
                    continue
                parent.grad = pgrad if parent.grad is None else parent.grad + pgrad
            node._done = True
            node._grad_fn = None  # free closures (and enforce single use)
        self._done = True

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, grad={'set' if self.grad is not None else 'none'})"


# --------------------------------------------------------------------------
# ops

def conv2d(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """Stride-1, same-padding correlation. Kernel is square (1x1 or 3x3)."""
    k = w.data.shape[2]
    pad = k // 2
    xd = x.data
    xp = np.pad(xd, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else xd
    win = sliding_window_view(xp, (k, k), axis=(2, 3))  # (N, Cin, H, W, k, k)
    out = np.tensordot(win, w.data, axes=([1, 4, 5], [1, 2, 3]))
    out = np.moveaxis(out, 3, 1) + b.data[None, :, None, None]

    def grad_fn(g):
        gx = None
        if x._needs:
            gp = np.pad(g, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else g
            gwin = sliding_window_view(gp, (k, k), axis=(2, 3))
            w_flip = w.data[:, :, ::-1, ::-1]
            gx = np.moveaxis(
                np.tensordot(gwin, w_flip, axes=([1, 4, 5], [0, 2, 3])), 3, 1
            )
        gw = np.tensordot(g, win, axes=([0, 2, 3], [0, 2, 3])) if w._needs else None
        gb = g.sum(axis=(0, 2, 3)) if b._needs else None
        return gx, gw, gb

    return Tensor(out, parents=(x, w, b), grad_fn=grad_fn)


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0

    def grad_fn(g):
        return (g * mask,)

    return Tensor(np.where(mask, x.data, 0), parents=(x,), grad_fn=grad_fn)


def add(a: Tensor, b: Tensor) -> Tensor:
    if a.data.shape != b.data.shape:
        raise ShapeMismatchError(f"add: {a.data.shape} vs {b.data.shape}")

    def grad_fn(g):
        return g, g

    return Tensor(a.data + b.data, parents=(a, b), grad_fn=grad_fn)


def maxpool2(x: Tensor) -> Tensor:
    n, c, h, w = x.data.shape
    if h % 2 or w % 2:
        raise ShapeMismatchError(f"maxpool2 needs even dims, got {h}x{w}")
    h2, w2 = h // 2, w // 2
    r = x.data.reshape(n, c, h2, 2, w2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h2, w2, 4)
    idx = r.argmax(axis=-1)
    out = np.take_along_axis(r, idx[..., None], axis=-1)[..., 0]

    def grad_fn(g):
        dr = np.zeros((n, c, h2, w2, 4), dtype=g.dtype)
        np.put_along_axis(dr, idx[..., None], g[..., None], axis=-1)
        gx = dr.reshape(n, c, h2, w2, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h, w)
        return (gx,)

    return Tensor(out, parents=(x,), grad_fn=grad_fn)


def global_avg_pool(x: Tensor) -> Tensor:
    n, c, h, w = x.data.shape
    out = x.data.mean(axis=(2, 3))

    def grad_fn(g):
        return (np.broadcast_to(g[:, :, None, None], (n, c, h, w)) / (h * w),)

    return Tensor(out, parents=(x,), grad_fn=grad_fn)


def linear(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """x: (N, C), w: (K, C), b: (K,)."""
    out = x.data @ w.data.T + b.data

    def grad_fn(g):
        gx = g @ w.data if x._needs else None
        gw = g.T @ x.data if w._needs else None
        gb = g.sum(axis=0) if b._needs else None
        return gx, gw, gb

    return Tensor(out, parents=(x, w, b), grad_fn=grad_fn)


def softmax(z: np.ndarray) -> np.ndarray:
    """Row-wise softmax with max subtraction; rows sum to 1."""
    z = np.asarray(z, dtype=np.float64)
    shifted = z - z.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def sigmoid(z: np.ndarray) -> np.ndarray:
    """Elementwise logistic function, overflow-safe at both tails."""
    z = np.asarray(z, dtype=np.float64)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def cross_entropy_loss(z: Tensor, labels: np.ndarray) -> Tensor:
    """Mean negative log-softmax of the true class over the batch."""
    labels = np.asarray(labels)
    n, k = z.data.shape
    if labels.shape != (n,):
        raise ShapeMismatchError(f"labels shape {labels.shape} for batch {n}")
    if labels.min() < 0 or labels.max() >= k:
        raise ValueError("label outside logit range")
    shifted = z.data - z.data.max(axis=1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=1))
    loss = np.mean(lse - shifted[np.arange(n), labels])

    def grad_fn(g):
        p = np.exp(shifted) / np.exp(shifted).sum(axis=1, keepdims=True)
        p[np.arange(n), labels] -= 1.0
        return (g * p.astype(z.data.dtype) / n,)

    return Tensor(np.asarray(loss, dtype=z.data.dtype), parents=(z,), grad_fn=grad_fn)


def bce_loss(z: Tensor, targets: np.ndarray) -> Tensor:
    """Mean binary cross-entropy over every (sample, class) element.

    Probabilities are clamped to [1e-7, 1 - 1e-7] before the logs so
    saturated logits cannot produce infinities.
    """
    targets = np.asarray(targets, dtype=z.data.dtype)
    if targets.shape != z.data.shape:
        raise ShapeMismatchError(f"targets {targets.shape} vs logits {z.data.shape}")
    p = sigmoid(z.data)
    pc = np.clip(p, 1e-7, 1.0 - 1e-7)
    loss = -np.mean(targets * np.log(pc) + (1.0 - targets) * np.log(1.0 - pc))
    size = z.data.size

    def grad_fn(g):
        return (g * (p - targets).astype(z.data.dtype) / size,)

    return Tensor(np.asarray(loss, dtype=z.data.dtype), parents=(z,), grad_fn=grad_fn)


# --------------------------------------------------------------------------
# model

MULTICLASS_HEAD = 101
MULTILABEL_HEAD = 21


@dataclass(frozen=True)
class CnnConfig:
    """Architecture knobs for the small CNN.

    Every conv block is 3x3/stride 1/same padding followed by ReLU and a
    2x2 max-pool; ``residual`` swaps each block for a two-conv residual
    unit. ``input_size`` must be divisible by 2^(number of blocks).
    """

    input_size: int = 64
    conv_channels: tuple[int, ...] = (16, 32, 64)
    head: int = MULTICLASS_HEAD
    residual: bool = False
    init: str = "he_normal"
    seed: int = 0

    def __post_init__(self):
        if self.head not in (MULTICLASS_HEAD, MULTILABEL_HEAD):
            raise ValueError(f"head must be 101 or 21, got {self.head}")
        if not self.conv_channels:
            raise ValueError("need at least one conv block")
        factor = 2 ** len(self.conv_channels)
        if self.input_size % factor or self.input_size < factor:
            raise ValueError(
                f"input_size {self.input_size} not divisible by {factor} "
                f"for {len(self.conv_channels)} pooling stages"
            )
        if self.init not in ("he_normal", "xavier_uniform"):
            raise ValueError(f"unknown init scheme {self.init!r}")


def _init_array(rng, shape, fan_in, scheme, dtype):
    if scheme == "he_normal":
        return rng.normal(0.0, np.sqrt(2.0 / fan_in), size=shape).astype(dtype)
    limit = np.sqrt(6.0 / (fan_in + shape[0]))
    return rng.uniform(-limit, limit, size=shape).astype(dtype)


class SmallCnn:
    """Small CNN with either the 101-way or the 21-way head."""

    def __init__(self, config: CnnConfig, dtype=np.float32, params: dict | None = None):
        self.config = config
        self.dtype = dtype
        self.params: dict[str, Tensor] = params if params is not None else self._init_params()

    def _init_params(self) -> dict[str, Tensor]:
        rng = np.random.default_rng(np.random.SeedSequence(self.config.seed))
        params: dict[str, Tensor] = {}

        def param(name, shape, fan_in):
            params[name] = Tensor(
                _init_array(rng, shape, fan_in, self.config.init, self.dtype),
                requires_grad=True,
            )
            params[name + ".bias"] = Tensor(np.zeros(shape[0], dtype=self.dtype), requires_grad=True)

        c_in = 3
        for i, c_out in enumerate(self.config.conv_channels):
            param(f"conv{i}", (c_out, c_in, 3, 3), c_in * 9)
            if self.config.residual:
                param(f"conv{i}b", (c_out, c_out, 3, 3), c_out * 9)
                if c_in != c_out:
                    param(f"conv{i}proj", (c_out, c_in, 1, 1), c_in)
            c_in = c_out
        param("head", (self.config.head, c_in), c_in)
        return params

    def forward(self, batch: np.ndarray) -> Tensor:
        """Logits for a (N, 3, S, S) float batch with values in [0, 1]."""
        batch = np.asarray(batch)
        s = self.config.input_size
        if batch.ndim != 4 or batch.shape[1] != 3 or batch.shape[2:] != (s, s):
            raise ShapeMismatchError(
                f"expected (N, 3, {s}, {s}) input, got {batch.shape}"
            )
        h = Tensor(batch.astype(self.dtype, copy=False))
        p = self.params
        for i in range(len(self.config.conv_channels)):
            y = conv2d(h, p[f"conv{i}"], p[f"conv{i}.bias"])
            if self.config.residual:
                y = conv2d(relu(y), p[f"conv{i}b"], p[f"conv{i}b.bias"])
                skip = h
                if f"conv{i}proj" in p:
                    skip = conv2d(h, p[f"conv{i}proj"], p[f"conv{i}proj.bias"])
                y = add(y, skip)
            h = maxpool2(relu(y))
        pooled = global_avg_pool(h)
        return linear(pooled, p["head"], p["head.bias"])

    def zero_grad(self):
        for t in self.params.values():
            t.zero_grad()

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: t.data.copy() for k, t in self.params.items()}

    def load_state_dict(self, state: dict[str, np.ndarray]):
        if set(state) != set(self.params):
            raise ShapeMismatchError("parameter names do not match this architecture")
        for k, arr in state.items():
            if arr.shape != self.params[k].data.shape:
                raise ShapeMismatchError(f"{k}: shape {arr.shape} vs {self.params[k].data.shape}")
            self.params[k] = Tensor(arr.astype(self.dtype, copy=True), requires_grad=True)


class SGD:
    """Momentum SGD: v <- momentum*v + g; p <- p - lr*v."""

    def __init__(self, params: dict[str, Tensor], lr: float, momentum: float = 0.9):
        self.params = params
        self.lr = lr
        self.momentum = momentum
        self.velocity = {k: np.zeros_like(t.data) for k, t in params.items()}

    def step(self):
        for name, p in self.params.items():
            if p.grad is None:
                continue
            v = self.momentum * self.velocity[name] + p.grad
            self.velocity[name] = v
            p.data = p.data - self.lr * v
            if not np.isfinite(p.data).all():
                raise NonFiniteError(f"parameter {name!r} became non-finite")

    def zero_grad(self):
        for p in self.params.values():
            p.zero_grad()


def cosine_lr(base_lr: float, epoch: int, total_epochs: int) -> float:
    """Cosine decay from base_lr to 0 across the stage."""
    if total_epochs <= 1:
        return base_lr
    return base_lr * 0.5 * (1.0 + np.cos(np.pi * epoch / (total_epochs - 1)))


# --------------------------------------------------------------------------
# checkpoints

CHECKPOINT_VERSION = 1


def save_checkpoint(path, model: SmallCnn, meta: dict | None = None) -> None:
    """Single-file checkpoint: parameters bit-exact plus JSON metadata."""
    header = {
        "version": CHECKPOINT_VERSION,
        "config": asdict(model.config),
        "meta": meta or {},
    }
    arrays = {f"param/{k}": t.data for k, t in model.params.items()}
    with open(path, "wb") as fh:
        np.savez(fh, __meta__=np.array(json.dumps(header)), **arrays)


def load_checkpoint(path, dtype=np.float32) -> tuple[SmallCnn, dict]:
    """Rebuild the model from a checkpoint; returns (model, meta)."""
    with np.load(path, allow_pickle=False) as blob:
        header = json.loads(str(blob["__meta__"]))
        if header.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {header.get('version')}")
        cfg = dict(header["config"])
        cfg["conv_channels"] = tuple(cfg["conv_channels"])
        config = CnnConfig(**cfg)
        params = {
            k[len("param/") :]: Tensor(blob[k].copy(), requires_grad=True)
            for k in blob.files
            if k.startswith("param/")
        }
    model = SmallCnn(config, dtype=dtype, params=params)
    return model, header["meta"]
