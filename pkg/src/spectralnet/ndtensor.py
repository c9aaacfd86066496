"""Minimal reverse-mode autodiff over float64 numpy arrays.

Every operation returns a new :class:`Tensor` that remembers its parents and a
closure mapping the upstream gradient to gradients for those parents. Calling
:func:`backward` on a scalar walks the recorded graph once in reverse
topological order and accumulates into ``.grad`` of leaf tensors that were
created with ``requires_grad=True``.

The convolution forward pass accumulates sequentially in a fixed order so a
nested-loop reference reproduces it bit for bit. Backward passes use BLAS
matmuls, which are deterministic for a fixed platform and thread count.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

__all__ = [
    "Tensor",
    "ShapeError",
    "NonFiniteError",
    "RunningStats",
    "OptimizerState",
    "tensor",
    "add",
    "mul",
    "tsum",
    "conv2d",
    "affine",
    "relu",
    "batch_norm",
    "dropout",
    "global_avg_pool",
    "concat_channels",
    "softmax_cross_entropy",
    "graph_order",
    "backward",
    "sgd_momentum_step",
]


class ShapeError(ValueError):
    pass


class NonFiniteError(FloatingPointError):
    pass


BackwardFn = Callable[[np.ndarray], Sequence["np.ndarray | None"]]


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "name", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.array(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self.name = name
        self._parents: tuple[Tensor, ...] = ()
        self._backward: BackwardFn | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def is_leaf(self) -> bool:
        return self._backward is None

    def zero_grad(self) -> None:
        self.grad = None

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float("nan")

    def backward(self) -> None:
        backward(self)

    def __add__(self, other: "Tensor") -> "Tensor":
        return add(self, other)

    def __mul__(self, other) -> "Tensor":
        return mul(self, other)

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{tag}, requires_grad={self.requires_grad})"


def tensor(data, requires_grad: bool = False, name: str | None = None) -> Tensor:
    return Tensor(data, requires_grad=requires_grad, name=name)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _result(data: np.ndarray, parents: Iterable[Tensor], fn: BackwardFn) -> Tensor:
    if not np.all(np.isfinite(data)):
        raise NonFiniteError("non-finite value produced in forward pass")
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.name = None
    out._parents = tuple(parents)
    out.requires_grad = any(p.requires_grad for p in out._parents)
    out._backward = fn if out.requires_grad else None
    if not out.requires_grad:
        out._parents = ()
    return out


# --------------------------------------------------------------------------
# elementwise helpers


def add(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.shape != b.shape:
        raise ShapeError(f"add: shapes {a.shape} and {b.shape} differ")
    return _result(a.data + b.data, (a, b), lambda g: (g, g))


def mul(a: Tensor, b) -> Tensor:
    """Elementwise product; ``b`` may be a same-shape Tensor or a constant array/scalar."""
    a = _as_tensor(a)
    if isinstance(b, Tensor):
        if a.shape != b.shape:
            raise ShapeError(f"mul: shapes {a.shape} and {b.shape} differ")
        ad, bd = a.data, b.data
        return _result(ad * bd, (a, b), lambda g: (g * bd, g * ad))
    c = np.asarray(b, dtype=np.float64)
    return _result(a.data * c, (a,), lambda g: (np.broadcast_to(g * c, a.shape),))


def tsum(x: Tensor) -> Tensor:
    shape = x.shape
    return _result(np.array(x.data.sum()), (x,), lambda g: (np.full(shape, float(g)),))


# --------------------------------------------------------------------------
# convolution


def _conv_out_size(n: int, k: int, stride: int, padding: int) -> int:
    if k > n + 2 * padding:
        return 0
    return (n + 2 * padding - k) // stride + 1


def conv2d(
    x: Tensor,
    kernels: Tensor,
    bias: Tensor | None = None,
    stride: int = 1,
    padding: int = 0,
) -> Tensor:
    """Cross-correlate ``x[N,C,H,W]`` with ``kernels[F,C,kh,kw]``.

    Each output element is accumulated as ``((0 + w*x) + w*x) + ...`` over
    ``(c, i, j)`` in row-major order, then the bias is added. A nested-loop
    implementation using that order reproduces the result exactly.
    """
    if stride < 1 or padding < 0:
        raise ValueError("stride must be >= 1 and padding >= 0")
    if x.data.ndim != 4 or kernels.data.ndim != 4:
        raise ShapeError(f"conv2d expects 4-d input and kernels, got {x.shape} and {kernels.shape}")
    n, c, h, w = x.shape
    f, ck, kh, kw = kernels.shape
    if c != ck:
        raise ShapeError(f"conv2d: input has {c} channels but kernels expect {ck}")
    if bias is not None and bias.shape != (f,):
        raise ShapeError(f"conv2d: bias shape {bias.shape} != ({f},)")
    ho = _conv_out_size(h, kh, stride, padding)
    wo = _conv_out_size(w, kw, stride, padding)
    if ho <= 0 or wo <= 0 or n == 0 or f == 0:
        raise ShapeError(f"conv2d: zero-size output for input {x.shape}, kernels {kernels.shape}")

    p = padding
    xp = np.pad(x.data, ((0, 0), (0, 0), (p, p), (p, p))) if p else x.data
    wd = kernels.data
    hs = stride * (ho - 1) + 1
    ws = stride * (wo - 1) + 1
    # channel-major contiguous copies of every tap's strided window: [kh][kw] -> (C, N, ho, wo)
    xt = xp.transpose(1, 0, 2, 3)
    taps = [
        [np.ascontiguousarray(xt[:, :, i : i + hs : stride, j : j + ws : stride]) for j in range(kw)]
        for i in range(kh)
    ]
    acc = np.zeros((f, n, ho, wo))
    tmp = np.empty_like(acc)
    for ci in range(c):
        for i in range(kh):
            for j in range(kw):
                np.multiply(wd[:, ci, i, j][:, None, None, None], taps[i][j][ci][None], out=tmp)
                acc += tmp
    if bias is not None:
        acc += bias.data[:, None, None, None]
    out = acc.transpose(1, 0, 2, 3).copy()

    parents = (x, kernels) if bias is None else (x, kernels, bias)

    def _backward(g: np.ndarray):
        gx = gw = gb = None
        # (F, N*ho*wo) layout; matmuls go through BLAS
        gm = g.transpose(1, 0, 2, 3).reshape(f, -1)
        if x.requires_grad:
            gxp = np.zeros((c, n) + xp.shape[2:])
            for i in range(kh):
                for j in range(kw):
                    contrib = (wd[:, :, i, j].T @ gm).reshape(c, n, ho, wo)
                    gxp[:, :, i : i + hs : stride, j : j + ws : stride] += contrib
            gxp = gxp.transpose(1, 0, 2, 3)
            gx = gxp[:, :, p : p + h, p : p + w] if p else gxp
        if kernels.requires_grad:
            gw = np.empty(wd.shape)
            for i in range(kh):
                for j in range(kw):
                    gw[:, :, i, j] = gm @ taps[i][j].reshape(c, -1).T
        if bias is not None and bias.requires_grad:
            gb = gm.sum(axis=1)
        return (gx, gw) if bias is None else (gx, gw, gb)

    return _result(out, parents, _backward)


# --------------------------------------------------------------------------
# dense layers and activations


def affine(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    if x.data.ndim != 2 or weight.data.ndim != 2:
        raise ShapeError(f"affine expects 2-d input and weight, got {x.shape}, {weight.shape}")
    if x.shape[1] != weight.shape[0]:
        raise ShapeError(f"affine: input width {x.shape[1]} != weight rows {weight.shape[0]}")
    if bias.shape != (weight.shape[1],):
        raise ShapeError(f"affine: bias shape {bias.shape} != ({weight.shape[1]},)")
    xd, wd = x.data, weight.data
    out = xd @ wd + bias.data
    return _result(out, (x, weight, bias), lambda g: (g @ wd.T, xd.T @ g, g.sum(axis=0)))


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return _result(np.where(mask, x.data, 0.0), (x,), lambda g: (g * mask,))


@dataclass
class RunningStats:
    """Per-channel running mean/variance for batch norm. Empty until the first train-mode pass."""

    mean: np.ndarray | None = None
    var: np.ndarray | None = None
    momentum: float = 0.9

    @property
    def initialized(self) -> bool:
        return self.mean is not None

    def update(self, mean: np.ndarray, var: np.ndarray) -> None:
        if self.mean is None:
            self.mean, self.var = mean.copy(), var.copy()
        else:
            m = self.momentum
            self.mean = m * self.mean + (1.0 - m) * mean
            self.var = m * self.var + (1.0 - m) * var


def batch_norm(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    running: RunningStats,
    training: bool,
    eps: float = 1e-5,
) -> Tensor:
    if x.data.ndim != 4:
        raise ShapeError(f"batch_norm expects [N,C,H,W], got {x.shape}")
    if eps <= 0:
        raise ValueError("eps must be positive")
    n, c, h, w = x.shape
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ShapeError(f"batch_norm: gamma/beta must have shape ({c},)")
    m = n * h * w
    if m < 1:
        raise ShapeError("batch_norm: empty batch")
    xd = x.data
    if training:
        mean = xd.mean(axis=(0, 2, 3))
        var = xd.var(axis=(0, 2, 3))
        running.update(mean, var)
    else:
        if not running.initialized:
            raise RuntimeError("batch_norm: eval mode requested before any running-stat update")
        mean, var = running.mean, running.var
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (xd - mean[None, :, None, None]) * inv_std[None, :, None, None]
    gd = gamma.data[None, :, None, None]
    out = gd * xhat + beta.data[None, :, None, None]

    def _backward(g: np.ndarray):
        dgamma = (g * xhat).sum(axis=(0, 2, 3))
        dbeta = g.sum(axis=(0, 2, 3))
        dxhat = g * gd
        if training:
            s1 = dxhat.sum(axis=(0, 2, 3))[None, :, None, None]
            s2 = (dxhat * xhat).sum(axis=(0, 2, 3))[None, :, None, None]
            dx = (inv_std[None, :, None, None] / m) * (m * dxhat - s1 - xhat * s2)
        else:
            dx = dxhat * inv_std[None, :, None, None]
        return dx, dgamma, dbeta

    return _result(out, (x, gamma, beta), _backward)


def dropout(x: Tensor, rate: float, training: bool, rng: np.random.Generator | None = None) -> Tensor:
    """Inverted dropout: survivors scaled by ``1/(1-rate)`` so eval mode is the identity."""
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must lie in [0, 1), got {rate}")
    if not training or rate == 0.0:
        return x
    if rng is None:
        raise ValueError("dropout in train mode needs an rng")
    scale = (rng.random(x.shape) >= rate) / (1.0 - rate)
    return _result(x.data * scale, (x,), lambda g: (g * scale,))


def global_avg_pool(x: Tensor) -> Tensor:
    if x.data.ndim != 4:
        raise ShapeError(f"global_avg_pool expects [N,C,H,W], got {x.shape}")
    n, c, h, w = x.shape
    if h < 1 or w < 1:
        raise ShapeError("global_avg_pool: empty spatial extent")
    inv = 1.0 / (h * w)
    return _result(
        x.data.mean(axis=(2, 3)),
        (x,),
        lambda g: (np.broadcast_to(g[:, :, None, None] * inv, x.shape).copy(),),
    )


def concat_channels(inputs: Sequence[Tensor]) -> Tensor:
    if not inputs:
        raise ShapeError("concat_channels: no inputs")
    ref = inputs[0].shape
    for t in inputs:
        if t.data.ndim != 4 or (t.shape[0], *t.shape[2:]) != (ref[0], *ref[2:]):
            raise ShapeError(f"concat_channels: {t.shape} incompatible with {ref}")
    if len(inputs) == 1:
        return inputs[0]
    bounds = np.cumsum([0] + [t.shape[1] for t in inputs])
    out = np.concatenate([t.data for t in inputs], axis=1)
    return _result(
        out,
        tuple(inputs),
        lambda g: tuple(g[:, bounds[k] : bounds[k + 1]] for k in range(len(inputs))),
    )


def softmax_cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean negative log-likelihood of ``labels`` under ``softmax(logits)``."""
    labels = np.asarray(labels)
    if logits.data.ndim != 2:
        raise ShapeError(f"softmax_cross_entropy expects [N,K] logits, got {logits.shape}")
    n, k = logits.shape
    if labels.shape != (n,):
        raise ShapeError(f"labels shape {labels.shape} != ({n},)")
    if n == 0:
        raise ShapeError("softmax_cross_entropy: empty batch")
    if labels.min() < 0 or labels.max() >= k:
        raise ValueError(f"labels must lie in [0, {k})")
    labels = labels.astype(np.intp)
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    logsum = np.log(np.exp(z).sum(axis=1))
    rows = np.arange(n)
    loss = float(np.mean(logsum - z[rows, labels]))

    def _backward(g: np.ndarray):
        probs = np.exp(z - logsum[:, None])
        probs[rows, labels] -= 1.0
        return (probs * (float(g) / n),)

    return _result(np.array(loss), (logits,), _backward)


# --------------------------------------------------------------------------
# graph traversal


def graph_order(root: Tensor) -> list[Tensor]:
    """Tensors reachable from ``root`` in topological order (inputs before consumers)."""
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in reversed(node._parents):
            if id(parent) not in seen:
                stack.append((parent, False))
    return order


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into every reachable leaf with ``requires_grad``."""
    if loss.data.size != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    order = graph_order(loss)
    grads: dict[int, np.ndarray] = {id(loss): np.ones(loss.shape)}
    visited: set[int] = set()
    for node in reversed(order):
        assert id(node) not in visited, "graph cycle"
        visited.add(id(node))
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            if node.requires_grad:
                node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            pid = id(parent)
            grads[pid] = grads[pid] + pg if pid in grads else pg


# --------------------------------------------------------------------------
# optimisation


@dataclass
class OptimizerState:
    params: list[Tensor]
    learning_rate: float = 0.01
    momentum: float = 0.9
    velocity: list[np.ndarray] = field(default_factory=list)

    def __post_init__(self) -> None:
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be nonnegative")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError("momentum must lie in [0, 1)")
        ids = [id(p) for p in self.params]
        if len(set(ids)) != len(ids):
            raise ValueError("parameter registered twice")
        if not self.velocity:
            self.velocity = [np.zeros(p.shape) for p in self.params]


def sgd_momentum_step(params: Sequence[Tensor], state: OptimizerState) -> None:
    """``v <- momentum*v - lr*grad; w <- w + v`` for each parameter."""
    if len(params) != len(state.velocity):
        raise ValueError("optimizer state does not match parameter list")
    for p in params:
        if p.grad is None:
            raise RuntimeError(f"parameter {p.name or p.shape} has no gradient")
    for p, v in zip(params, state.velocity):
        v *= state.momentum
        v -= state.learning_rate * p.grad
        p.data += v
