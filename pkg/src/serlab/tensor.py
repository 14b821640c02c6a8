"""Reverse-mode gradient engine, parameter store, AdamW, and EMA updates.

Dense-ndarray nodes up to rank 3 (batch x time x feature). Values keep their
input dtype (float32 in training, float64 in gradient checks); reductions
accumulate in float64 before casting back. Backward skips subgraphs that
contain no trainable leaf, so frozen front-ends cost nothing at step time.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from serlab import kernels


class ShapeError(ValueError):
    pass


class Tensor:
    """One node of the computation graph: a value plus its gradient slot."""

    __slots__ = ("value", "_grad", "parents", "_backward", "requires_grad", "op")

    def __init__(self, value, parents=(), backward=None, requires_grad=False, op="leaf"):
        self.value = np.asarray(value)
        self._grad = None
        self.parents = parents
        self._backward = backward
        self.requires_grad = requires_grad or any(p.requires_grad for p in parents)
        self.op = op

    @property
    def grad(self) -> np.ndarray:
        if self._grad is None:
            self._grad = np.zeros_like(self.value)
        return self._grad

    @property
    def shape(self):
        return self.value.shape

    def accumulate(self, g: np.ndarray) -> None:
        if self._grad is None:
            self._grad = np.zeros_like(self.value)
        self._grad += g

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __neg__(self):
        return mul(self, -1.0)

    def __repr__(self):
        return f"Tensor(op={self.op}, shape={self.value.shape}, requires_grad={self.requires_grad})"


def constant(value) -> Tensor:
    return Tensor(np.asarray(value), op="const")


def parameter(value) -> Tensor:
    return Tensor(np.asarray(value), requires_grad=True, op="param")


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else constant(x)


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    """Sum a broadcast gradient back down to `shape`."""
    if g.shape == tuple(shape):
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# ---------------------------------------------------------------------------
# elementwise / arithmetic primitives


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out = Tensor(a.value + b.value, (a, b), op="add")

    def backward(o):
        if a.requires_grad:
            a.accumulate(_unbroadcast(o.grad, a.shape))
        if b.requires_grad:
            b.accumulate(_unbroadcast(o.grad, b.shape))

    out._backward = backward
    return out


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out = Tensor(a.value - b.value, (a, b), op="sub")

    def backward(o):
        if a.requires_grad:
            a.accumulate(_unbroadcast(o.grad, a.shape))
        if b.requires_grad:
            b.accumulate(_unbroadcast(-o.grad, b.shape))

    out._backward = backward
    return out


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out = Tensor(a.value * b.value, (a, b), op="mul")

    def backward(o):
        if a.requires_grad:
            a.accumulate(_unbroadcast(o.grad * b.value, a.shape))
        if b.requires_grad:
            b.accumulate(_unbroadcast(o.grad * a.value, b.shape))

    out._backward = backward
    return out


def exp(x: Tensor) -> Tensor:
    x = _as_tensor(x)
    out = Tensor(np.exp(x.value), (x,), op="exp")

    def backward(o):
        if x.requires_grad:
            x.accumulate(o.grad * o.value)

    out._backward = backward
    return out


def log(x: Tensor) -> Tensor:
    x = _as_tensor(x)
    out = Tensor(np.log(x.value), (x,), op="log")

    def backward(o):
        if x.requires_grad:
            x.accumulate(o.grad / x.value)

    out._backward = backward
    return out


def relu(x: Tensor) -> Tensor:
    x = _as_tensor(x)
    out = Tensor(np.maximum(x.value, 0), (x,), op="relu")

    def backward(o):
        if x.requires_grad:
            x.accumulate(o.grad * (x.value > 0))

    out._backward = backward
    return out


_GELU_C = math.sqrt(2.0 / math.pi)
_GELU_P = 0.044715


def gelu(x: Tensor) -> Tensor:
    """Tanh-approximation GELU (the erf form is ~30x slower elementwise)."""
    x = _as_tensor(x)
    v = x.value
    inner = _GELU_C * (v + _GELU_P * v * v * v)
    th = np.tanh(inner)
    out = Tensor((0.5 * v * (1.0 + th)).astype(v.dtype), (x,), op="gelu")

    def backward(o):
        if x.requires_grad:
            sech2 = 1.0 - th * th
            d_inner = _GELU_C * (1.0 + 3.0 * _GELU_P * v * v)
            x.accumulate(o.grad * (0.5 * (1.0 + th) + 0.5 * v * sech2 * d_inner))

    out._backward = backward
    return out


# ---------------------------------------------------------------------------
# linear algebra


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.value.shape[-1] != b.value.shape[-2]:
        raise ShapeError(f"matmul inner dims differ: {a.value.shape} vs {b.value.shape}")
    out = Tensor(np.matmul(a.value, b.value), (a, b), op="matmul")

    def backward(o):
        g = o.grad
        if a.requires_grad:
            ga = np.matmul(g, np.swapaxes(b.value, -1, -2))
            a.accumulate(_unbroadcast(ga, a.shape))
        if b.requires_grad:
            gb = np.matmul(np.swapaxes(a.value, -1, -2), g)
            b.accumulate(_unbroadcast(gb, b.shape))

    out._backward = backward
    return out


def transpose_last2(x: Tensor) -> Tensor:
    x = _as_tensor(x)
    out = Tensor(np.swapaxes(x.value, -1, -2), (x,), op="transpose")

    def backward(o):
        if x.requires_grad:
            x.accumulate(np.swapaxes(o.grad, -1, -2))

    out._backward = backward
    return out


def reshape(x: Tensor, shape) -> Tensor:
    x = _as_tensor(x)
    out = Tensor(x.value.reshape(shape), (x,), op="reshape")

    def backward(o):
        if x.requires_grad:
            x.accumulate(o.grad.reshape(x.shape))

    out._backward = backward
    return out


def slice_rows(x: Tensor, start: int, stop: int) -> Tensor:
    """Contiguous row slice along axis 0."""
    x = _as_tensor(x)
    out = Tensor(x.value[start:stop], (x,), op="slice")

    def backward(o):
        if x.requires_grad:
            g = np.zeros_like(x.value)
            g[start:stop] = o.grad
            x.accumulate(g)

    out._backward = backward
    return out


def conv1d(x: Tensor, weight: Tensor, bias: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    """1-D convolution over (B, C_in, T) with weight (C_out, C_in, K)."""
    x, weight, bias = _as_tensor(x), _as_tensor(weight), _as_tensor(bias)
    b, c_in, t = x.value.shape
    c_out, c_w, k = weight.value.shape
    if c_w != c_in:
        raise ShapeError(f"conv1d channels differ: input {x.value.shape} vs weight {weight.value.shape}")
    cols = kernels.im2col_1d(x.value, k, stride, padding)
    w2 = weight.value.reshape(c_out, c_in * k)
    y = np.matmul(cols, w2.T) + bias.value  # (B, T_out, C_out)
    out = Tensor(np.ascontiguousarray(np.swapaxes(y, 1, 2)), (x, weight, bias), op="conv1d")

    def backward(o):
        g = np.swapaxes(o.grad, 1, 2)  # (B, T_out, C_out)
        if bias.requires_grad:
            bias.accumulate(g.sum(axis=(0, 1), dtype=np.float64).astype(bias.value.dtype))
        if weight.requires_grad:
            gw = np.matmul(
                g.reshape(-1, c_out).T, cols.reshape(-1, c_in * k)
            )
            weight.accumulate(gw.reshape(c_out, c_in, k).astype(weight.value.dtype))
        if x.requires_grad:
            gcols = np.matmul(g, w2)  # (B, T_out, C_in*K)
            x.accumulate(kernels.col2im_1d(gcols, c_in, t, k, stride, padding))

    out._backward = backward
    return out


# ---------------------------------------------------------------------------
# normalization / reductions


def sum_axis(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    x = _as_tensor(x)
    val = x.value.sum(axis=axis, keepdims=keepdims, dtype=np.float64).astype(x.value.dtype)
    out = Tensor(val, (x,), op="sum")

    def backward(o):
        if not x.requires_grad:
            return
        g = o.grad
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        x.accumulate(np.broadcast_to(g, x.shape).astype(x.value.dtype))

    out._backward = backward
    return out


def mean_all(x: Tensor) -> Tensor:
    x = _as_tensor(x)
    n = x.value.size
    val = np.asarray(x.value.mean(dtype=np.float64), dtype=x.value.dtype)
    out = Tensor(val, (x,), op="mean")

    def backward(o):
        if x.requires_grad:
            x.accumulate(np.full(x.shape, o.grad / n, dtype=x.value.dtype))

    out._backward = backward
    return out


def mean_pool_time(x: Tensor, mask: np.ndarray | None = None) -> Tensor:
    """Average (B, T, D) over time. Optional (B, T) mask restricts the pool."""
    x = _as_tensor(x)
    b, t, d = x.value.shape
    if mask is None:
        val = x.value.mean(axis=1, dtype=np.float64).astype(x.value.dtype)
    else:
        counts = mask.sum(axis=1, keepdims=True)
        if np.any(counts == 0):
            raise ShapeError("mean_pool_time mask excludes every frame for some row")
        val = (
            (x.value * mask[:, :, None]).sum(axis=1, dtype=np.float64) / counts
        ).astype(x.value.dtype)
    out = Tensor(val, (x,), op="mean_pool_time")

    def backward(o):
        if not x.requires_grad:
            return
        if mask is None:
            x.accumulate(np.broadcast_to(o.grad[:, None, :] / t, x.shape).astype(x.value.dtype))
        else:
            counts = mask.sum(axis=1)[:, None, None]
            x.accumulate((o.grad[:, None, :] * mask[:, :, None] / counts).astype(x.value.dtype))

    out._backward = backward
    return out


def softmax(x: Tensor) -> Tensor:
    x = _as_tensor(x)
    shifted = x.value - x.value.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=-1, keepdims=True, dtype=np.float64).astype(x.value.dtype)
    out = Tensor(y.astype(x.value.dtype), (x,), op="softmax")

    def backward(o):
        if x.requires_grad:
            dot = (o.grad * o.value).sum(axis=-1, keepdims=True)
            x.accumulate(o.value * (o.grad - dot))

    out._backward = backward
    return out


def log_softmax(x: Tensor) -> Tensor:
    x = _as_tensor(x)
    shifted = x.value - x.value.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=-1, keepdims=True, dtype=np.float64)).astype(x.value.dtype)
    out = Tensor(shifted - lse, (x,), op="log_softmax")

    def backward(o):
        if x.requires_grad:
            p = np.exp(o.value)
            x.accumulate(o.grad - p * o.grad.sum(axis=-1, keepdims=True))

    out._backward = backward
    return out


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis, then scale/shift by (gamma, beta)."""
    x, gamma, beta = _as_tensor(x), _as_tensor(gamma), _as_tensor(beta)
    mu = x.value.mean(axis=-1, keepdims=True, dtype=np.float64)
    var = np.square(x.value.astype(np.float64) - mu).mean(axis=-1, keepdims=True)
    inv = (1.0 / np.sqrt(var + eps)).astype(x.value.dtype)
    xhat = ((x.value - mu) * inv).astype(x.value.dtype)
    out = Tensor(xhat * gamma.value + beta.value, (x, gamma, beta), op="layer_norm")

    def backward(o):
        lead = tuple(range(o.grad.ndim - 1))
        if beta.requires_grad:
            beta.accumulate(o.grad.sum(axis=lead, dtype=np.float64).astype(beta.value.dtype))
        if gamma.requires_grad:
            gamma.accumulate((o.grad * xhat).sum(axis=lead, dtype=np.float64).astype(gamma.value.dtype))
        if x.requires_grad:
            dxhat = o.grad * gamma.value
            m1 = dxhat.mean(axis=-1, keepdims=True, dtype=np.float64).astype(x.value.dtype)
            m2 = (dxhat * xhat).mean(axis=-1, keepdims=True, dtype=np.float64).astype(x.value.dtype)
            x.accumulate((dxhat - m1 - xhat * m2) * inv)

    out._backward = backward
    return out


def batch_standardize(x: Tensor, eps: float = 1e-5) -> Tensor:
    """Standardize each feature column by the batch mean/variance (no affine)."""
    x = _as_tensor(x)
    if x.value.ndim != 2:
        raise ShapeError(f"batch_standardize expects (B, D), got {x.value.shape}")
    mu = x.value.mean(axis=0, keepdims=True, dtype=np.float64)
    var = np.square(x.value.astype(np.float64) - mu).mean(axis=0, keepdims=True)
    inv = (1.0 / np.sqrt(var + eps)).astype(x.value.dtype)
    xhat = ((x.value - mu) * inv).astype(x.value.dtype)
    out = Tensor(xhat, (x,), op="batch_standardize")

    def backward(o):
        if x.requires_grad:
            m1 = o.grad.mean(axis=0, keepdims=True, dtype=np.float64).astype(x.value.dtype)
            m2 = (o.grad * xhat).mean(axis=0, keepdims=True, dtype=np.float64).astype(x.value.dtype)
            x.accumulate((o.grad - m1 - xhat * m2) * inv)

    out._backward = backward
    return out


def dropout(x: Tensor, rate: float, train_mode: bool, rng: np.random.Generator | None = None) -> Tensor:
    """Inverted dropout; identity when rate == 0 or in eval mode."""
    x = _as_tensor(x)
    if not train_mode or rate == 0.0:
        out = Tensor(x.value, (x,), op="dropout_eval")

        def backward_eval(o):
            if x.requires_grad:
                x.accumulate(o.grad)

        out._backward = backward_eval
        return out
    if rng is None:
        raise ValueError("dropout in train mode needs an rng")
    mask = (rng.random(x.value.shape) >= rate).astype(x.value.dtype) / (1.0 - rate)
    out = Tensor(x.value * mask, (x,), op="dropout")

    def backward(o):
        if x.requires_grad:
            x.accumulate(o.grad * mask)

    out._backward = backward
    return out


def l2_normalize(x: Tensor, eps: float = 1e-12) -> Tensor:
    """Scale each row (last axis) to unit L2 norm."""
    x = _as_tensor(x)
    norm = np.sqrt(np.square(x.value.astype(np.float64)).sum(axis=-1, keepdims=True))
    norm = np.maximum(norm, eps).astype(x.value.dtype)
    y = x.value / norm
    out = Tensor(y, (x,), op="l2_normalize")

    def backward(o):
        if x.requires_grad:
            dot = (o.grad * y).sum(axis=-1, keepdims=True)
            x.accumulate((o.grad - y * dot) / norm)

    out._backward = backward
    return out


# ---------------------------------------------------------------------------
# graph traversal


def backward(loss: Tensor) -> None:
    """Reverse-accumulate gradients from a scalar loss node."""
    if loss.value.ndim != 0 and loss.value.size != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.value.shape}")
    topo: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            topo.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if id(p) not in seen and p.requires_grad:
                stack.append((p, False))
    loss._grad = np.ones_like(loss.value)
    for node in reversed(topo):
        if node._backward is not None and node.requires_grad:
            node._backward(node)


def grad_map(params: dict[str, Tensor]) -> dict[str, np.ndarray]:
    """Gradients of bound parameter tensors, keyed by name."""
    return {name: t.grad for name, t in params.items() if t.requires_grad}


# ---------------------------------------------------------------------------
# parameters and optimizers


@dataclass
class ParameterStore:
    """Named float arrays with frozen flags and per-entry AdamW state."""

    entries: dict[str, np.ndarray] = field(default_factory=dict)
    frozen: dict[str, bool] = field(default_factory=dict)
    adam_m: dict[str, np.ndarray] = field(default_factory=dict)
    adam_v: dict[str, np.ndarray] = field(default_factory=dict)
    adam_t: dict[str, int] = field(default_factory=dict)

    def add(self, name: str, value: np.ndarray, frozen: bool = False) -> None:
        if name in self.entries:
            raise ValueError(f"duplicate parameter name: {name}")
        self.entries[name] = np.asarray(value)
        self.frozen[name] = frozen

    def bind(self) -> dict[str, Tensor]:
        """Wrap entries as graph leaves; frozen entries do not require grad."""
        return {
            name: Tensor(v, requires_grad=not self.frozen[name], op="param")
            for name, v in self.entries.items()
        }

    def bind_readonly(self) -> dict[str, Tensor]:
        """Wrap every entry as a constant: no gradients flow into this store."""
        return {name: Tensor(v, op="param") for name, v in self.entries.items()}

    def copy(self) -> "ParameterStore":
        return ParameterStore(
            entries={k: v.copy() for k, v in self.entries.items()},
            frozen=dict(self.frozen),
            adam_m={k: v.copy() for k, v in self.adam_m.items()},
            adam_v={k: v.copy() for k, v in self.adam_v.items()},
            adam_t=dict(self.adam_t),
        )

    def names(self) -> list[str]:
        return list(self.entries)


@dataclass
class OnlineTargetPair:
    """Linked online/target stores for momentum-target training."""

    online: ParameterStore
    target: ParameterStore
    momentum: float

    def __post_init__(self):
        if not 0.0 <= self.momentum <= 1.0:
            raise ValueError(f"momentum must lie in [0, 1], got {self.momentum}")
        if self.online.names() != self.target.names():
            raise ValueError("online/target parameter names differ")


def adamw_step(
    store: ParameterStore,
    grads: dict[str, np.ndarray],
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
    weight_decay: float = 0.01,
) -> None:
    """Decoupled-weight-decay Adam with bias correction; frozen entries unchanged."""
    for name, p in store.entries.items():
        if store.frozen[name]:
            continue
        if name not in grads:
            raise KeyError(f"missing gradient for unfrozen parameter '{name}'")
        g = grads[name].astype(p.dtype, copy=False)
        m = store.adam_m.get(name)
        if m is None:
            m = np.zeros_like(p)
            v = np.zeros_like(p)
        else:
            v = store.adam_v[name]
        t = store.adam_t.get(name, 0) + 1
        m = beta1 * m + (1.0 - beta1) * g
        v = beta2 * v + (1.0 - beta2) * np.square(g)
        m_hat = m / (1.0 - beta1**t)
        v_hat = v / (1.0 - beta2**t)
        if weight_decay:
            p -= lr * weight_decay * p
        p -= lr * m_hat / (np.sqrt(v_hat) + eps)
        store.adam_m[name] = m
        store.adam_v[name] = v
        store.adam_t[name] = t


def ema_update(pair: OnlineTargetPair) -> None:
    """Target <- m * target + (1 - m) * online, entrywise over all entries."""
    m = pair.momentum
    for name, theta in pair.online.entries.items():
        xi = pair.target.entries[name]
        if xi.shape != theta.shape:
            raise ShapeError(f"shape mismatch for '{name}': {xi.shape} vs {theta.shape}")
        xi *= m
        xi += (1.0 - m) * theta
