"""Minimal reverse-mode autodiff over numpy arrays.

Every kernel used by the model lives here, each with a hand-written
backward rule. The tape is implicit: each Tensor remembers its parents
and a closure that maps the incoming gradient to parent gradients.
Gradients of leaf tensors (``requires_grad=True``) accumulate across
backward() calls; intermediate gradients are per-call scratch.
"""

from __future__ import annotations

import struct
from typing import Callable, Iterable, Sequence

import numpy as np
import scipy.sparse as sp


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad=False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable | None = None

    @property
    def shape(self):
        return self.data.shape

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    def zero_grad(self):
        self.grad = None


def _node(data, parents, backward_fn) -> Tensor:
    out = Tensor(data)
    out._parents = tuple(parents)
    out._backward = backward_fn
    return out


def _check_finite(arr, op):
    if not np.all(np.isfinite(arr)):
        raise FloatingPointError(f"non-finite values produced by {op}")


def _unbroadcast(grad, shape):
    """Sum a gradient down to the shape it was broadcast from."""
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


# ---------------------------------------------------------------------------
# kernels


def add(a: Tensor, b: Tensor) -> Tensor:
    out_data = a.data + b.data

    def backward(g, push):
        push(a, _unbroadcast(g, a.data.shape))
        push(b, _unbroadcast(g, b.data.shape))

    return _node(out_data, (a, b), backward)


def add_const(a: Tensor, const) -> Tensor:
    """Add a fixed array (no gradient flows into ``const``)."""
    const = np.asarray(const, dtype=np.float64)
    out_data = a.data + const

    def backward(g, push):
        push(a, _unbroadcast(g, a.data.shape))

    return _node(out_data, (a,), backward)


def mul(a: Tensor, b: Tensor) -> Tensor:
    out_data = a.data * b.data

    def backward(g, push):
        push(a, _unbroadcast(g * b.data, a.data.shape))
        push(b, _unbroadcast(g * a.data, b.data.shape))

    return _node(out_data, (a, b), backward)


def mul_const(a: Tensor, const) -> Tensor:
    const = np.asarray(const, dtype=np.float64)
    out_data = a.data * const

    def backward(g, push):
        push(a, _unbroadcast(g * const, a.data.shape))

    return _node(out_data, (a,), backward)


def scale(a: Tensor, s: float) -> Tensor:
    s = float(s)

    def backward(g, push):
        push(a, g * s)

    return _node(a.data * s, (a,), backward)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    out_data = np.matmul(a.data, b.data)
    _check_finite(out_data, "matmul")

    def backward(g, push):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        push(a, _unbroadcast(ga, a.data.shape))
        push(b, _unbroadcast(gb, b.data.shape))

    return _node(out_data, (a, b), backward)


def sparse_matmul(s_matrix: sp.spmatrix, x: Tensor) -> Tensor:
    """Constant sparse matrix times dense tensor; gradient is S^T @ g."""
    s_csr = s_matrix.tocsr()
    out_data = s_csr @ x.data

    def backward(g, push):
        push(x, s_csr.T @ g)

    return _node(out_data, (x,), backward)


def transpose_last2(a: Tensor) -> Tensor:
    def backward(g, push):
        push(a, np.swapaxes(g, -1, -2))

    return _node(np.swapaxes(a.data, -1, -2), (a,), backward)


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    tensors = list(tensors)
    out_data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def backward(g, push):
        pieces = np.split(g, splits, axis=axis)
        for t, piece in zip(tensors, pieces):
            push(t, piece)

    return _node(out_data, tensors, backward)


def slice_axis(a: Tensor, axis: int, start: int, stop: int) -> Tensor:
    index = [slice(None)] * a.data.ndim
    index[axis] = slice(start, stop)
    index = tuple(index)

    def backward(g, push):
        full = np.zeros_like(a.data)
        full[index] = g
        push(a, full)

    return _node(a.data[index], (a,), backward)


def sum_all(a: Tensor) -> Tensor:
    def backward(g, push):
        push(a, np.full_like(a.data, float(g)))

    return _node(a.data.sum(), (a,), backward)


def softmax(a: Tensor) -> Tensor:
    """Row-wise softmax over the last axis."""
    shifted = a.data - a.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    out_data = e / e.sum(axis=-1, keepdims=True)

    def backward(g, push):
        dot = (g * out_data).sum(axis=-1, keepdims=True)
        push(a, out_data * (g - dot))

    return _node(out_data, (a,), backward)


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0

    def backward(g, push):
        push(a, g * mask)

    return _node(a.data * mask, (a,), backward)


def sigmoid(a: Tensor) -> Tensor:
    out_data = 1.0 / (1.0 + np.exp(-a.data))

    def backward(g, push):
        push(a, g * out_data * (1.0 - out_data))

    return _node(out_data, (a,), backward)


_GELU_C = np.sqrt(2.0 / np.pi)
_GELU_A = 0.044715


def gelu(a: Tensor) -> Tensor:
    """GELU, tanh approximation."""
    x = a.data
    u = _GELU_C * (x + _GELU_A * x**3)
    t = np.tanh(u)
    out_data = 0.5 * x * (1.0 + t)

    def backward(g, push):
        du = _GELU_C * (1.0 + 3.0 * _GELU_A * x**2)
        push(a, g * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t**2) * du))

    return _node(out_data, (a,), backward)


def layer_norm(a: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-8) -> Tensor:
    """Normalize the last axis to mean 0 / variance 1, then affine."""
    x = a.data
    mu = x.mean(axis=-1, keepdims=True)
    var = x.var(axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x - mu) * inv_std
    out_data = xhat * gamma.data + beta.data

    def backward(g, push):
        gxhat = g * gamma.data
        n = x.shape[-1]
        dx = inv_std * (
            gxhat
            - gxhat.mean(axis=-1, keepdims=True)
            - xhat * (gxhat * xhat).mean(axis=-1, keepdims=True)
        )
        push(a, dx)
        batch_axes = tuple(range(g.ndim - 1))
        push(gamma, (g * xhat).sum(axis=batch_axes))
        push(beta, g.sum(axis=batch_axes))

    return _node(out_data, (a, gamma, beta), backward)


def dropout(a: Tensor, rate: float, train: bool, rng: np.random.Generator | None) -> Tensor:
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    if not train or rate == 0.0:
        return a
    if rng is None:
        raise ValueError("dropout in training mode needs an explicit rng")
    mask = (rng.random(a.data.shape) >= rate) / (1.0 - rate)
    return mul_const(a, mask)


def embedding_lookup(table: Tensor, indices) -> Tensor:
    indices = np.asarray(indices, dtype=np.int64)
    if indices.size and (indices.min() < 0 or indices.max() >= table.data.shape[0]):
        raise IndexError("embedding index out of range")
    out_data = table.data[indices]

    def backward(g, push):
        gt = np.zeros_like(table.data)
        np.add.at(gt, indices, g)
        push(table, gt)

    return _node(out_data, (table,), backward)


def cross_entropy_with_logits(logits: Tensor, targets) -> Tensor:
    """Mean softmax cross-entropy; ``targets`` are 0-based class indices."""
    targets = np.asarray(targets, dtype=np.int64)
    x = logits.data
    if x.ndim != 2:
        raise ValueError("logits must be 2-D (batch, classes)")
    n, n_classes = x.shape
    if targets.shape != (n,):
        raise ValueError("targets must be 1-D matching the batch size")
    if targets.size and (targets.min() < 0 or targets.max() >= n_classes):
        raise IndexError("target class out of range")
    m = x.max(axis=-1, keepdims=True)
    lse = m[:, 0] + np.log(np.exp(x - m).sum(axis=-1))
    losses = lse - x[np.arange(n), targets]
    out_data = losses.mean()

    def backward(g, push):
        p = np.exp(x - m)
        p /= p.sum(axis=-1, keepdims=True)
        p[np.arange(n), targets] -= 1.0
        push(logits, (float(g) / n) * p)

    return _node(out_data, (logits,), backward)


# ---------------------------------------------------------------------------
# backward pass


def backward(loss: Tensor) -> None:
    """Populate .grad of every reachable requires_grad leaf.

    Repeated calls accumulate; intermediate gradients are per-call.
    """
    if loss.data.shape != ():
        raise ValueError(f"backward() needs a scalar loss, got shape {loss.data.shape}")

    topo: list[Tensor] = []
    visited: set[int] = set()
    stack = [(loss, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
            topo.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in visited:
                stack.append((p, False))

    grads: dict[int, np.ndarray] = {id(loss): np.ones((), dtype=np.float64)}

    def push(t: Tensor, g: np.ndarray):
        key = id(t)
        if key in grads:
            grads[key] = grads[key] + g
        else:
            grads[key] = g

    for node in reversed(topo):
        g = grads.get(id(node))
        if g is None:
            continue
        if node.requires_grad:
            node.grad = g.copy() if node.grad is None else node.grad + g
        if node._backward is not None:
            node._backward(g, push)


# ---------------------------------------------------------------------------
# parameter container


class ParamSet:
    """Named collection of trainable tensors."""

    def __init__(self):
        self._params: dict[str, Tensor] = {}

    def add(self, name: str, data) -> Tensor:
        if name in self._params:
            raise KeyError(f"duplicate parameter {name!r}")
        t = Tensor(np.asarray(data, dtype=np.float64), requires_grad=True)
        self._params[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def names(self) -> list[str]:
        return list(self._params)

    def items(self):
        return self._params.items()

    def zero_grad(self):
        for t in self._params.values():
            t.grad = None

    def total_count(self) -> int:
        return sum(t.data.size for t in self._params.values())

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: t.data.copy() for k, t in self._params.items()}

    def load_state_dict(self, state: dict[str, np.ndarray]):
        for k, t in self._params.items():
            arr = np.asarray(state[k], dtype=np.float64)
            if arr.shape != t.data.shape:
                raise ValueError(f"shape mismatch for {k}: {arr.shape} vs {t.data.shape}")
            t.data = arr.copy()

    # checkpoint container: magic, version byte, tensor count, then per
    # tensor: name, shape header, raw little-endian float64 values.
    _MAGIC = b"MBRC"
    _VERSION = 1

    def save(self, path):
        with open(path, "wb") as f:
            f.write(self._MAGIC)
            f.write(struct.pack("<B", self._VERSION))
            f.write(struct.pack("<I", len(self._params)))
            for name, t in self._params.items():
                encoded = name.encode("utf-8")
                f.write(struct.pack("<H", len(encoded)))
                f.write(encoded)
                f.write(struct.pack("<B", t.data.ndim))
                for dim in t.data.shape:
                    f.write(struct.pack("<I", dim))
                f.write(np.ascontiguousarray(t.data, dtype="<f8").tobytes())

    @classmethod
    def read_state(cls, path) -> dict[str, np.ndarray]:
        with open(path, "rb") as f:
            magic = f.read(4)
            if magic != cls._MAGIC:
                raise ValueError(f"not a checkpoint file: bad magic {magic!r}")
            (version,) = struct.unpack("<B", f.read(1))
            if version != cls._VERSION:
                raise ValueError(f"unsupported checkpoint version {version}")
            (count,) = struct.unpack("<I", f.read(4))
            state = {}
            for _ in range(count):
                (name_len,) = struct.unpack("<H", f.read(2))
                name = f.read(name_len).decode("utf-8")
                (ndim,) = struct.unpack("<B", f.read(1))
                shape = tuple(struct.unpack("<I", f.read(4))[0] for _ in range(ndim))
                n_vals = int(np.prod(shape)) if shape else 1
                arr = np.frombuffer(f.read(8 * n_vals), dtype="<f8").reshape(shape)
                state[name] = arr.astype(np.float64)
        return state

    def load(self, path):
        self.load_state_dict(self.read_state(path))


# ---------------------------------------------------------------------------
# finite differences


def finite_diff_check(
    forward: Callable[[], Tensor],
    params: ParamSet,
    eps: float = 1e-5,
    max_coords: int = 20,
    rng: np.random.Generator | None = None,
) -> dict[str, float]:
    """Compare analytic gradients of ``forward()`` against central differences.

    ``forward`` must rebuild the graph on each call and be deterministic
    (dropout off). Returns the max relative error per parameter tensor.
    """
    if rng is None:
        rng = np.random.default_rng(0)

    base = float(forward().data)
    again = float(forward().data)
    if base != again:
        raise RuntimeError(
            "forward closure is not deterministic (two evaluations differ); "
            "disable dropout and fix all seeds before gradient checking"
        )

    params.zero_grad()
    backward(forward())

    report: dict[str, float] = {}
    for name, t in params.items():
        analytic = t.grad if t.grad is not None else np.zeros_like(t.data)
        flat = t.data.reshape(-1)
        n = flat.size
        coords = np.arange(n) if n <= max_coords else rng.choice(n, size=max_coords, replace=False)
        worst = 0.0
        for c in coords:
            orig = flat[c]
            flat[c] = orig + eps
            f_plus = float(forward().data)
            flat[c] = orig - eps
            f_minus = float(forward().data)
            flat[c] = orig
            numeric = (f_plus - f_minus) / (2.0 * eps)
            a = float(analytic.reshape(-1)[c])
            err = abs(a - numeric) / max(abs(a), abs(numeric), 1e-6)
            worst = max(worst, err)
        report[name] = worst
    return report
