"""Dense numpy tensors with reverse-mode automatic differentiation.

Each op computes its value eagerly and, when any input requires a gradient,
records a closure mapping the upstream gradient to input gradients.
Elementwise ops broadcast only over leading dimensions: two shapes are
compatible when they are equal or one is a suffix of the other. Anything
else goes through :func:`expand`.
"""
from __future__ import annotations

import contextlib
import math

import numpy as np
from scipy.special import erf

from ..errors import DimensionError, ParameterError, UsageError

_GRAD_ENABLED = True


@contextlib.contextmanager
def no_grad():
    global _GRAD_ENABLED
    prev, _GRAD_ENABLED = _GRAD_ENABLED, False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name", "__weakref__")

    def __init__(self, data, requires_grad=False, dtype=np.float64, name=None,
                 _parents=(), _backward=None):
        if isinstance(data, Tensor):
            data = data.data
        self.data = np.asarray(data, dtype=dtype) if dtype is not None else np.asarray(data)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = _parents
        self._backward = _backward
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data)

    def zero_grad(self):
        self.grad = None

    def detach(self):
        return Tensor(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def backward(self):
        backward(self)

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise UsageError("division by a tensor is not supported")
        return mul(self, 1.0 / other)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return index(self, key)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        return transpose(self, axes if axes else None)

    def sum(self, axis=None, keepdims=False):
        return sum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)


class Parameter(Tensor):
    """A leaf tensor that an optimizer updates."""

    __slots__ = ()

    def __init__(self, data, name=None):
        super().__init__(np.array(data, dtype=np.float64), requires_grad=True, name=name)


def tensor(data, requires_grad=False) -> Tensor:
    return Tensor(data, requires_grad=requires_grad)


def _t(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _result(data, parents, backward_fn) -> Tensor:
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        return Tensor(data, requires_grad=True, dtype=None, _parents=parents, _backward=backward_fn)
    return Tensor(data, dtype=None)


def _topo(root: Tensor) -> list[Tensor]:
    order, seen = [], set()
    stack = [(root, False)]
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
    return order


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every reachable leaf."""
    if loss.data.size != 1:
        raise UsageError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        raise UsageError("loss does not depend on any tensor requiring a gradient")
    order = _topo(loss)
    grads = {id(loss): np.ones_like(loss.data)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        for p, gp in zip(node._parents, node._backward(g)):
            if gp is None or not p.requires_grad:
                continue
            key = id(p)
            grads[key] = gp if key not in grads else grads[key] + gp


# -- broadcasting helpers ----------------------------------------------------

def _check_pair(op, a: Tensor, b: Tensor):
    sa, sb = a.shape, b.shape
    if sa == sb:
        return
    if len(sa) >= len(sb) and sa[len(sa) - len(sb):] == sb:
        return
    if len(sb) > len(sa) and sb[len(sb) - len(sa):] == sa:
        return
    raise DimensionError(f"{op}: incompatible shapes {sa} and {sb}")


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    if g.shape == shape:
        return g
    lead = g.ndim - len(shape)
    return g.sum(axis=tuple(range(lead))) if lead else g


# -- elementwise ---------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = _t(a), _t(b)
    _check_pair("add", a, b)
    return _result(a.data + b.data, (a, b),
                   lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b) -> Tensor:
    a, b = _t(a), _t(b)
    _check_pair("sub", a, b)
    return _result(a.data - b.data, (a, b),
                   lambda g: (_unbroadcast(g, a.shape), -_unbroadcast(g, b.shape)))


def mul(a, b) -> Tensor:
    a, b = _t(a), _t(b)
    _check_pair("mul", a, b)

    def bw(g):
        ga = _unbroadcast(g * b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(g * a.data, b.shape) if b.requires_grad else None
        return ga, gb

    return _result(a.data * b.data, (a, b), bw)


def relu(x) -> Tensor:
    x = _t(x)
    pos = x.data > 0
    return _result(np.where(pos, x.data, 0.0), (x,), lambda g: (g * pos,))


_SQRT1_2 = 1.0 / math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


def gelu(x) -> Tensor:
    """Exact GELU, ``x * Phi(x)``."""
    x = _t(x)
    cdf = 0.5 * (1.0 + erf(x.data * _SQRT1_2))

    def bw(g):
        pdf = _INV_SQRT_2PI * np.exp(-0.5 * x.data * x.data)
        return (g * (cdf + x.data * pdf),)

    return _result(x.data * cdf, (x,), bw)


def sigmoid(x) -> Tensor:
    x = _t(x)
    s = _sigmoid(x.data)
    return _result(s, (x,), lambda g: (g * s * (1.0 - s),))


def tanh(x) -> Tensor:
    x = _t(x)
    t = np.tanh(x.data)
    return _result(t, (x,), lambda g: (g * (1.0 - t * t),))


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def dropout(x, p: float, train: bool, rng=None) -> Tensor:
    """Inverted dropout; ``rng`` is a numpy Generator or an integer seed."""
    if not 0.0 <= p < 1.0:
        raise ParameterError(f"dropout probability {p} not in [0, 1)")
    x = _t(x)
    if not train or p == 0.0:
        return x
    if rng is None or isinstance(rng, (int, np.integer)):
        rng = np.random.default_rng(rng)
    keep = (rng.random(x.shape) >= p) / (1.0 - p)
    return _result(x.data * keep, (x,), lambda g: (g * keep,))


def masked_fill(x, mask, value: float) -> Tensor:
    """Replace entries where ``mask`` (numpy-broadcastable to x) is true."""
    x = _t(x)
    mask = np.asarray(mask, dtype=bool)
    try:
        full = np.broadcast_to(mask, x.shape)
    except ValueError:
        raise DimensionError(f"masked_fill: mask shape {mask.shape} does not fit {x.shape}") from None
    return _result(np.where(full, value, x.data), (x,), lambda g: (np.where(full, 0.0, g),))


# -- shape ops -----------------------------------------------------------------

def reshape(x, shape) -> Tensor:
    x = _t(x)
    try:
        out = x.data.reshape(shape)
    except ValueError:
        raise DimensionError(f"reshape: cannot reshape {x.shape} to {tuple(shape)}") from None
    return _result(out, (x,), lambda g: (g.reshape(x.shape),))


def transpose(x, axes=None) -> Tensor:
    x = _t(x)
    if axes is None:
        axes = tuple(reversed(range(x.ndim)))
    axes = tuple(axes)
    if sorted(axes) != list(range(x.ndim)):
        raise DimensionError(f"transpose: bad axes {axes} for shape {x.shape}")
    inv = tuple(np.argsort(axes))
    return _result(x.data.transpose(axes), (x,), lambda g: (g.transpose(inv),))


def swapaxes(x, a: int, b: int) -> Tensor:
    axes = list(range(_t(x).ndim))
    axes[a], axes[b] = axes[b], axes[a]
    return transpose(x, axes)


def expand(x, shape) -> Tensor:
    """Explicit numpy-style broadcast of ``x`` to ``shape``."""
    x = _t(x)
    shape = tuple(shape)
    try:
        out = np.broadcast_to(x.data, shape)
    except ValueError:
        raise DimensionError(f"expand: cannot expand {x.shape} to {shape}") from None

    def bw(g):
        lead = g.ndim - x.ndim
        g = g.sum(axis=tuple(range(lead))) if lead else g
        axes = tuple(i for i, n in enumerate(x.shape) if n == 1 and g.shape[i] != 1)
        return (g.sum(axis=axes, keepdims=True) if axes else g,)

    return _result(out, (x,), bw)


def concat(tensors, axis: int = 0) -> Tensor:
    tensors = [_t(t) for t in tensors]
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError:
        raise DimensionError(f"concat: incompatible shapes {[t.shape for t in tensors]}") from None
    splits = np.cumsum([t.shape[axis] for t in tensors])[:-1]
    return _result(out, tuple(tensors), lambda g: tuple(np.split(g, splits, axis=axis)))


def _is_basic(key) -> bool:
    key = key if isinstance(key, tuple) else (key,)
    return all(isinstance(k, (slice, int, np.integer)) or k is None or k is Ellipsis for k in key)


def index(x, key) -> Tensor:
    """Slicing and integer-array indexing."""
    x = _t(x)
    try:
        out = x.data[key]
    except IndexError as exc:
        raise DimensionError(f"index: {exc} for shape {x.shape}") from None
    basic = _is_basic(key)

    def bw(g):
        z = np.zeros_like(x.data)
        if basic:
            z[key] = g
        else:
            np.add.at(z, key, g)
        return (z,)

    return _result(np.array(out, copy=True) if basic else out, (x,), bw)


def gather_time(x, idx: np.ndarray) -> Tensor:
    """``out[b, t] = x[b, idx[b, t]]`` for ``x`` of shape ``(B, T, ...)``."""
    x = _t(x)
    idx = np.asarray(idx)
    if idx.shape != x.shape[:2]:
        raise DimensionError(f"gather_time: index shape {idx.shape} vs {x.shape}")
    rows = np.arange(idx.shape[0])[:, None]

    def bw(g):
        z = np.zeros_like(x.data)
        np.add.at(z, (rows, idx), g)
        return (z,)

    return _result(x.data[rows, idx], (x,), bw)


def embedding_lookup(weight, ids) -> Tensor:
    weight = _t(weight)
    ids = np.asarray(ids, dtype=np.int64)
    if weight.ndim != 2:
        raise DimensionError(f"embedding_lookup: weight must be 2-D, got {weight.shape}")
    if ids.size and (ids.min() < 0 or ids.max() >= weight.shape[0]):
        raise DimensionError(f"embedding_lookup: id out of range for table {weight.shape}")

    def bw(g):
        z = np.zeros_like(weight.data)
        np.add.at(z, ids, g)
        return (z,)

    return _result(weight.data[ids], (weight,), bw)


# -- reductions ----------------------------------------------------------------

def _norm_axes(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(a % ndim for a in axis)


def sum(x, axis=None, keepdims=False) -> Tensor:  # noqa: A001 - mirrors numpy
    x = _t(x)
    axes = _norm_axes(axis, x.ndim)

    def bw(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, x.shape),)

    return _result(x.data.sum(axis=axes, keepdims=keepdims), (x,), bw)


def mean(x, axis=None, keepdims=False) -> Tensor:
    x = _t(x)
    axes = _norm_axes(axis, x.ndim)
    n = int(np.prod([x.shape[a] for a in axes])) if axes else 1
    return mul(sum(x, axis, keepdims), 1.0 / n)


# -- linear algebra ------------------------------------------------------------

def matmul(a, b) -> Tensor:
    """``(..., n, k) @ (k, m)`` or batched ``(..., n, k) @ (..., k, m)``."""
    a, b = _t(a), _t(b)
    ok = a.ndim >= 2 and b.ndim >= 2 and a.shape[-1] == b.shape[-2]
    if ok and b.ndim > 2:
        ok = a.shape[:-2] == b.shape[:-2]
    if not ok:
        raise DimensionError(f"matmul: incompatible shapes {a.shape} and {b.shape}")

    def bw(g):
        ga = g @ np.swapaxes(b.data, -1, -2) if a.requires_grad else None
        gb = None
        if b.requires_grad:
            if b.ndim == 2:
                gb = a.data.reshape(-1, a.shape[-1]).T @ g.reshape(-1, g.shape[-1])
            else:
                gb = np.swapaxes(a.data, -1, -2) @ g
        return ga, gb

    return _result(a.data @ b.data, (a, b), bw)


# -- normalizations ------------------------------------------------------------

def _check_axis(op, x, axis):
    if not -x.ndim <= axis < x.ndim:
        raise DimensionError(f"{op}: axis {axis} out of range for shape {x.shape}")


def softmax(x, axis: int = -1) -> Tensor:
    x = _t(x)
    _check_axis("softmax", x, axis)
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=axis, keepdims=True)
    return _result(s, (x,), lambda g: (s * (g - (g * s).sum(axis=axis, keepdims=True)),))


def log_softmax(x, axis: int = -1) -> Tensor:
    x = _t(x)
    _check_axis("log_softmax", x, axis)
    z = x.data - x.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=axis, keepdims=True))
    out = z - lse

    def bw(g):
        return (g - np.exp(out) * g.sum(axis=axis, keepdims=True),)

    return _result(out, (x,), bw)


def layer_norm(x, gamma=None, beta=None, axis: int = -1, eps: float = 1e-5) -> Tensor:
    """Normalize over ``axis``; the optional affine part requires ``axis=-1``."""
    x = _t(x)
    _check_axis("layer_norm", x, axis)
    parents = [x]
    if gamma is not None or beta is not None:
        if axis not in (-1, x.ndim - 1):
            raise DimensionError("layer_norm: affine parameters need axis=-1")
        for p in (gamma, beta):
            if p is not None and p.shape != (x.shape[-1],):
                raise DimensionError(f"layer_norm: parameter shape {p.shape} vs {x.shape}")
        parents += [gamma if gamma is not None else Tensor(np.ones(x.shape[-1])),
                    beta if beta is not None else Tensor(np.zeros(x.shape[-1]))]
    mu = x.data.mean(axis=axis, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=axis, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = xhat if len(parents) == 1 else xhat * parents[1].data + parents[2].data

    def bw(g):
        if len(parents) == 1:
            dxhat = g
        else:
            dxhat = g * parents[1].data
        dx = inv * (dxhat - dxhat.mean(axis=axis, keepdims=True)
                    - xhat * (dxhat * xhat).mean(axis=axis, keepdims=True))
        if len(parents) == 1:
            return (dx,)
        lead = tuple(range(g.ndim - 1))
        return dx, (g * xhat).sum(axis=lead), g.sum(axis=lead)

    return _result(out, tuple(parents), bw)


# -- recurrence ----------------------------------------------------------------

def lstm_scan(xw, u) -> Tensor:
    """Run an LSTM over time given precomputed input projections.

    ``xw`` has shape ``(B, T, 4H)`` and already includes the bias; ``u`` is the
    ``(H, 4H)`` recurrent weight. Gate order is input, forget, cell, output.
    Returns the hidden states ``(B, T, H)`` starting from zero state.
    """
    xw, u = _t(xw), _t(u)
    if xw.ndim != 3 or u.ndim != 2 or u.shape[1] != 4 * u.shape[0] or xw.shape[2] != u.shape[1]:
        raise DimensionError(f"lstm_scan: incompatible shapes {xw.shape} and {u.shape}")
    B, T, _ = xw.shape
    H = u.shape[0]
    U = u.data
    hs = np.zeros((B, T + 1, H))
    cs = np.zeros((B, T + 1, H))
    gates = np.empty((B, T, 4 * H))
    tcs = np.empty((B, T, H))
    for t in range(T):
        z = xw.data[:, t] + hs[:, t] @ U
        gt = gates[:, t]
        gt[:, :H] = _sigmoid(z[:, :H])
        gt[:, H:2 * H] = _sigmoid(z[:, H:2 * H])
        gt[:, 2 * H:3 * H] = np.tanh(z[:, 2 * H:3 * H])
        gt[:, 3 * H:] = _sigmoid(z[:, 3 * H:])
        cs[:, t + 1] = gt[:, H:2 * H] * cs[:, t] + gt[:, :H] * gt[:, 2 * H:3 * H]
        tcs[:, t] = np.tanh(cs[:, t + 1])
        hs[:, t + 1] = gt[:, 3 * H:] * tcs[:, t]

    def bw(g):
        dxw = np.empty_like(xw.data)
        dU = np.zeros_like(U)
        dh_next = np.zeros((B, H))
        dc_next = np.zeros((B, H))
        for t in range(T - 1, -1, -1):
            gt = gates[:, t]
            i, f, gg, o = gt[:, :H], gt[:, H:2 * H], gt[:, 2 * H:3 * H], gt[:, 3 * H:]
            dh = g[:, t] + dh_next
            tc = tcs[:, t]
            dc = dh * o * (1.0 - tc * tc) + dc_next
            dz = dxw[:, t]
            dz[:, :H] = dc * gg * i * (1.0 - i)
            dz[:, H:2 * H] = dc * cs[:, t] * f * (1.0 - f)
            dz[:, 2 * H:3 * H] = dc * i * (1.0 - gg * gg)
            dz[:, 3 * H:] = dh * tc * o * (1.0 - o)
            dU += hs[:, t].T @ dz
            dh_next = dz @ U.T
            dc_next = dc * f
        return dxw, dU

    return _result(hs[:, 1:].copy(), (xw, u), bw)
