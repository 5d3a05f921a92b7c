"""Minimal reverse-mode differentiation over dense numpy arrays.

A :class:`Tensor` wraps an ``ndarray`` and remembers how it was produced.
Calling :meth:`Tensor.backward` on a scalar walks the recorded graph in reverse
topological order and accumulates ``.grad`` on every tensor that requires it.
Broadcasting follows numpy; gradients are summed back to the operand shape.

Only the operations the model needs are provided. Everything is float64.
"""

import hashlib
import json
import os
import struct
from collections import OrderedDict

import numpy as np
import scipy.sparse as sp


class GradientError(FloatingPointError):
    """Raised when a forward value or gradient stops being finite."""


def _unbroadcast(grad, shape):
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for i, n in enumerate(shape):
        if n == 1 and grad.shape[i] != 1:
            grad = grad.sum(axis=i, keepdims=True)
    return grad


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")
    # make numpy defer to the reflected operators
    __array_ufunc__ = None

    def __init__(self, data, requires_grad=False, name=None, _parents=(), _backward=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad or any(p.requires_grad for p in _parents)
        self._parents = _parents if self.requires_grad else ()
        self._backward = _backward if self.requires_grad else None
        self.name = name

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def T(self):
        return transpose(self)

    def item(self):
        return float(self.data)

    def numpy(self):
        return self.data

    def backward(self):
        if self.data.size != 1:
            raise ValueError("backward() needs a scalar output")
        order = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))
        grads = {id(self): np.ones_like(self.data)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node.grad = g if node.grad is None else node.grad + g
                continue
            for p, pg in zip(node._parents, node._backward(g)):
                if pg is None or not p.requires_grad:
                    continue
                pg = _unbroadcast(pg, p.shape)
                key = id(p)
                grads[key] = pg if key not in grads else grads[key] + pg

    # arithmetic -----------------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, neg(_lift(other)))

    def __rsub__(self, other):
        return add(_lift(other), neg(self))

    def __neg__(self):
        return neg(self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(_lift(other), self)

    def __pow__(self, p):
        return power(self, p)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        n = self.data.size if axis is None else self.data.shape[axis]
        return tsum(self, axis=axis, keepdims=keepdims) * (1.0 / n)


def _lift(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def add(a, b):
    a, b = _lift(a), _lift(b)
    return Tensor(a.data + b.data, _parents=(a, b), _backward=lambda g: (g, g))


def neg(a):
    return Tensor(-a.data, _parents=(a,), _backward=lambda g: (-g,))


def mul(a, b):
    a, b = _lift(a), _lift(b)
    return Tensor(a.data * b.data, _parents=(a, b), _backward=lambda g: (g * b.data, g * a.data))


def div(a, b):
    a, b = _lift(a), _lift(b)
    out = a.data / b.data
    return Tensor(out, _parents=(a, b), _backward=lambda g: (g / b.data, -g * out / b.data))


def power(a, p):
    out = a.data**p
    return Tensor(out, _parents=(a,), _backward=lambda g: (g * p * a.data ** (p - 1),))


def matmul(a, b):
    a, b = _lift(a), _lift(b)

    A, B = a.data, b.data

    def backward(g):
        if A.ndim == 1 and B.ndim == 1:
            return g * B, g * A
        if A.ndim == 1:
            return B @ g, np.outer(A, g)
        if B.ndim == 1:
            return np.outer(g, B), A.T @ g
        return g @ B.T, A.T @ g

    return Tensor(A @ B, _parents=(a, b), _backward=backward)


def spmm(A, x):
    """Constant sparse (or dense) matrix times a tensor."""
    A = sp.csr_matrix(A) if not sp.issparse(A) else A.tocsr()
    At = A.T.tocsr()
    return Tensor(A @ x.data, _parents=(x,), _backward=lambda g: (At @ g,))


def transpose(a):
    return Tensor(a.data.T, _parents=(a,), _backward=lambda g: (g.T,))


def reshape(a, shape):
    old = a.shape
    return Tensor(a.data.reshape(shape), _parents=(a,), _backward=lambda g: (g.reshape(old),))


def tsum(a, axis=None, keepdims=False):
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return Tensor(out, _parents=(a,), _backward=backward)


def getitem(a, idx):
    def backward(g):
        full = np.zeros_like(a.data)
        np.add.at(full, idx, g)
        return (full,)

    return Tensor(a.data[idx], _parents=(a,), _backward=backward)


def concat(tensors, axis=-1):
    tensors = [_lift(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.split(g, splits, axis=axis))

    return Tensor(np.concatenate([t.data for t in tensors], axis=axis), _parents=tuple(tensors), _backward=backward)


def where(mask, a, b):
    """Select ``a`` where ``mask`` else ``b``; ``mask`` is a constant boolean array."""
    a, b = _lift(a), _lift(b)
    mask = np.asarray(mask, dtype=bool)
    return Tensor(
        np.where(mask, a.data, b.data),
        _parents=(a, b),
        _backward=lambda g: (np.where(mask, g, 0.0), np.where(mask, 0.0, g)),
    )


# elementwise ----------------------------------------------------------------
def relu(x):
    """max(0, x); the subgradient at 0 is 0."""
    if not isinstance(x, Tensor):
        return np.maximum(np.asarray(x, dtype=float), 0.0)
    mask = x.data > 0
    return Tensor(np.where(mask, x.data, 0.0), _parents=(x,), _backward=lambda g: (g * mask,))


def _sigmoid_np(x):
    x = np.asarray(x, dtype=float)
    # split by sign so exp never overflows
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def sigmoid(x):
    if not isinstance(x, Tensor):
        out = _sigmoid_np(x)
        return float(out) if out.ndim == 0 else out
    s = _sigmoid_np(x.data)
    return Tensor(s, _parents=(x,), _backward=lambda g: (g * s * (1 - s),))


def tanh(x):
    t = np.tanh(x.data)
    return Tensor(t, _parents=(x,), _backward=lambda g: (g * (1 - t * t),))


def artanh(x):
    d = x.data
    return Tensor(np.arctanh(d), _parents=(x,), _backward=lambda g: (g / (1 - d * d),))


def sqrt(x):
    s = np.sqrt(x.data)
    return Tensor(s, _parents=(x,), _backward=lambda g: (g * 0.5 / s,))


def log(x):
    d = x.data
    return Tensor(np.log(d), _parents=(x,), _backward=lambda g: (g / d,))


def clip(x, lo=None, hi=None):
    """Clamp values; gradient passes only where the input was not clamped."""
    d = x.data
    out = np.clip(d, lo, hi)
    mask = np.ones_like(d, dtype=bool)
    if lo is not None:
        mask &= d >= lo
    if hi is not None:
        mask &= d <= hi
    return Tensor(out, _parents=(x,), _backward=lambda g: (g * mask,))


def affine(W, x, b):
    """``W x + b`` for a single vector, or row-wise ``x W^T + b`` for a batch."""
    if isinstance(W, Tensor) or isinstance(x, Tensor) or isinstance(b, Tensor):
        W, x, b = _lift(W), _lift(x), _lift(b)
        if x.ndim == 1:
            return W @ x + b
        return x @ W.T + b
    W = np.asarray(W, dtype=float)
    x = np.asarray(x, dtype=float)
    b = np.asarray(b, dtype=float)
    if W.shape[-1] != x.shape[-1] or W.shape[0] != b.shape[-1]:
        raise ValueError(f"shape mismatch: W{W.shape}, x{x.shape}, b{b.shape}")
    return x @ W.T + b


# parameters -------------------------------------------------------------------
class ParamStore:
    """Named parameters in stable insertion order, each with a gradient buffer."""

    def __init__(self):
        self._params = OrderedDict()

    def add(self, name, value):
        if name in self._params:
            raise KeyError(f"duplicate parameter {name!r}")
        t = Tensor(np.array(value, dtype=np.float64), requires_grad=True, name=name)
        t.grad = np.zeros_like(t.data)
        self._params[name] = t
        return t

    def __getitem__(self, name):
        return self._params[name]

    def __contains__(self, name):
        return name in self._params

    def __iter__(self):
        return iter(self._params)

    def __len__(self):
        return len(self._params)

    def items(self):
        return self._params.items()

    def names(self):
        return list(self._params)

    def zero_grad(self):
        for t in self._params.values():
            t.grad = np.zeros_like(t.data)

    def sqnorm(self):
        total = None
        for t in self._params.values():
            term = (t * t).sum()
            total = term if total is None else total + term
        return total if total is not None else Tensor(0.0)

    def state(self):
        return OrderedDict((k, v.data.copy()) for k, v in self._params.items())

    def load_state(self, state):
        for k, v in state.items():
            if k not in self._params:
                raise KeyError(f"unknown parameter {k!r}")
            if self._params[k].shape != np.shape(v):
                raise ValueError(f"shape mismatch for {k!r}: {self._params[k].shape} vs {np.shape(v)}")
            self._params[k].data = np.array(v, dtype=np.float64)

    def copy(self):
        other = ParamStore()
        for k, v in self._params.items():
            other.add(k, v.data.copy())
        return other

    def check_finite(self):
        for k, v in self._params.items():
            if v.grad is not None and not np.all(np.isfinite(v.grad)):
                raise GradientError(f"non-finite gradient in parameter {k!r}")


def init_params(shapes, seed):
    """Build a :class:`ParamStore` from ``{name: shape}``.

    Matrices of shape ``(out, in)`` are drawn uniformly from
    ``[-1/sqrt(in), 1/sqrt(in)]``; 1-d or scalar entries are biases and start
    at zero. One generator is consumed in the order of ``shapes``.
    """
    rng = np.random.default_rng(seed)
    store = ParamStore()
    for name, shape in shapes.items():
        shape = tuple(shape)
        if len(shape) >= 2:
            bound = 1.0 / np.sqrt(shape[-1])
            store.add(name, rng.uniform(-bound, bound, size=shape))
        else:
            store.add(name, np.zeros(shape))
    return store


class Adam:
    """Adaptive-moment updates with bias correction on a :class:`ParamStore`."""

    def __init__(self, params, lr=1e-2, betas=(0.9, 0.999), eps=1e-8):
        self.params = params
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.t = 0
        self.m = {k: np.zeros_like(v.data) for k, v in params.items()}
        self.v = {k: np.zeros_like(v.data) for k, v in params.items()}

    def step(self):
        self.params.check_finite()
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1 - b1**self.t
        c2 = 1 - b2**self.t
        for k, p in self.params.items():
            g = p.grad
            self.m[k] = b1 * self.m[k] + (1 - b1) * g
            self.v[k] = b2 * self.v[k] + (1 - b2) * g * g
            mhat = self.m[k] / c1
            vhat = self.v[k] / c2
            p.data = p.data - self.lr * mhat / (np.sqrt(vhat) + self.eps)


# checkpoint archive -------------------------------------------------------------
MAGIC = b"HYPITE01"


def save_checkpoint(path, state, meta=None):
    """Write ``state`` (name -> float array) and a JSON ``meta`` dict.

    Layout: 8-byte magic ``HYPITE01``; little-endian uint64 header length;
    UTF-8 JSON header ``{"meta": ..., "sha256": ..., "tensors": [{"name", "shape"}, ...]}``;
    then each tensor's entries as little-endian float64, row-major, in header
    order. ``sha256`` is the hex digest of that payload. Written to a temporary
    file and renamed into place.
    """
    entries = [{"name": k, "shape": list(np.shape(v))} for k, v in state.items()]
    payload = b"".join(np.ascontiguousarray(v, dtype="<f8").tobytes() for v in state.values())
    doc = {"meta": meta or {}, "sha256": hashlib.sha256(payload).hexdigest(), "tensors": entries}
    header = json.dumps(doc, sort_keys=True).encode("utf-8")
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(header)))
        fh.write(header)
        fh.write(payload)
    os.replace(tmp, path)


def load_checkpoint(path):
    """Return ``(state, meta)`` from an archive written by :func:`save_checkpoint`."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:8] != MAGIC:
        raise ValueError(f"{path}: not a checkpoint archive (bad magic)")
    (hlen,) = struct.unpack("<Q", blob[8:16])
    header = json.loads(blob[16 : 16 + hlen].decode("utf-8"))
    offset = 16 + hlen
    state = OrderedDict()
    for entry in header["tensors"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        nbytes = 8 * count
        if offset + nbytes > len(blob):
            raise ValueError(f"{path}: truncated data for tensor {entry['name']!r}")
        arr = np.frombuffer(blob, dtype="<f8", count=count, offset=offset).astype(np.float64)
        state[entry["name"]] = arr.reshape(shape)
        offset += nbytes
    if offset != len(blob):
        raise ValueError(f"{path}: {len(blob) - offset} trailing bytes")
    if hashlib.sha256(blob[16 + hlen :]).hexdigest() != header.get("sha256"):
        raise ValueError(f"{path}: checksum mismatch, tensor data is corrupted")
    return state, header["meta"]
