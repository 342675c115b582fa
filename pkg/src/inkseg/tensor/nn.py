"""Layers built on the autodiff tensor."""
from __future__ import annotations

import math

import numpy as np

from ..errors import DimensionError, ParameterError
from . import autograd as ag
from .autograd import Parameter, Tensor

NEG_INF = -1e9


class Module:
    training = False
    rng = None

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def named_parameters(self, prefix=""):
        for name, value in self.__dict__.items():
            yield from _named(value, prefix + name)

    def parameters(self) -> list[Parameter]:
        return [p for _, p in self.named_parameters()]

    def modules(self):
        yield self
        for value in self.__dict__.values():
            for m in _modules(value):
                yield from m.modules()

    def train(self, mode: bool = True, rng=None):
        for m in self.modules():
            m.training = mode
            m.rng = rng
        return self

    def eval(self):
        return self.train(False)

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray]):
        own = dict(self.named_parameters())
        missing = set(own) - set(state)
        extra = set(state) - set(own)
        if missing or extra:
            raise DimensionError(f"state mismatch: missing {sorted(missing)}, unexpected {sorted(extra)}")
        for name, p in own.items():
            value = np.asarray(state[name], dtype=np.float64)
            if value.shape != p.shape:
                raise DimensionError(f"parameter {name}: shape {value.shape} != {p.shape}")
            p.data = value.copy()


def _named(value, name):
    if isinstance(value, Parameter):
        yield name, value
    elif isinstance(value, Module):
        yield from value.named_parameters(name + ".")
    elif isinstance(value, (list, tuple)):
        for i, v in enumerate(value):
            yield from _named(v, f"{name}.{i}")


def _modules(value):
    if isinstance(value, Module):
        yield value
    elif isinstance(value, (list, tuple)):
        for v in value:
            yield from _modules(v)


class Linear(Module):
    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator, bias: bool = True):
        bound = 1.0 / math.sqrt(n_in)
        self.weight = Parameter(rng.uniform(-bound, bound, (n_in, n_out)))
        self.bias = Parameter(rng.uniform(-bound, bound, n_out)) if bias else None

    def forward(self, x):
        y = ag.matmul(x, self.weight)
        return y + self.bias if self.bias is not None else y


class Embedding(Module):
    def __init__(self, n: int, dim: int, rng: np.random.Generator, std: float = 1.0):
        self.weight = Parameter(rng.normal(0.0, std, (n, dim)))

    def forward(self, ids):
        return ag.embedding_lookup(self.weight, ids)


class LayerNorm(Module):
    def __init__(self, dim: int):
        self.gamma = Parameter(np.ones(dim))
        self.beta = Parameter(np.zeros(dim))

    def forward(self, x):
        return ag.layer_norm(x, self.gamma, self.beta)


class Dropout(Module):
    def __init__(self, p: float):
        if not 0.0 <= p < 1.0:
            raise ParameterError(f"dropout probability {p} not in [0, 1)")
        self.p = p

    def forward(self, x):
        return ag.dropout(x, self.p, self.training, self.rng)


class MultiheadAttention(Module):
    def __init__(self, dim: int, heads: int, dropout: float, rng: np.random.Generator):
        if dim % heads:
            raise ParameterError(f"hidden dim {dim} not divisible by {heads} heads")
        self.heads = heads
        self.q_proj = Linear(dim, dim, rng)
        self.kv_proj = Linear(dim, 2 * dim, rng)
        self.out_proj = Linear(dim, dim, rng)
        self.drop = Dropout(dropout)

    def _split(self, x, B, n):
        h = self.heads
        return ag.transpose(ag.reshape(x, (B, n, h, -1)), (0, 2, 1, 3))

    def forward(self, query, memory, key_mask=None):
        """``key_mask`` is a ``(B, m)`` boolean array, true for valid keys."""
        B, n, d = query.shape
        m = memory.shape[1]
        q = self._split(self.q_proj(query), B, n)
        kv = self.kv_proj(memory)
        k = self._split(kv[..., :d], B, m)
        v = self._split(kv[..., d:], B, m)
        scores = ag.matmul(q, ag.swapaxes(k, -1, -2)) * (1.0 / math.sqrt(d // self.heads))
        if key_mask is not None:
            scores = ag.masked_fill(scores, ~np.asarray(key_mask)[:, None, None, :], NEG_INF)
        attn = self.drop(ag.softmax(scores, axis=-1))
        out = ag.reshape(ag.transpose(ag.matmul(attn, v), (0, 2, 1, 3)), (B, n, d))
        return self.out_proj(out)


class FeedForward(Module):
    def __init__(self, dim: int, hidden: int, dropout: float, rng: np.random.Generator):
        self.fc1 = Linear(dim, hidden, rng)
        self.fc2 = Linear(hidden, dim, rng)
        self.drop = Dropout(dropout)

    def forward(self, x):
        return self.fc2(self.drop(ag.gelu(self.fc1(x))))


class EncoderLayer(Module):
    """Pre-norm self-attention block."""

    def __init__(self, dim, heads, ff_dim, dropout, rng):
        self.norm1 = LayerNorm(dim)
        self.attn = MultiheadAttention(dim, heads, dropout, rng)
        self.norm2 = LayerNorm(dim)
        self.ff = FeedForward(dim, ff_dim, dropout, rng)
        self.drop = Dropout(dropout)

    def forward(self, x, mask=None):
        h = self.norm1(x)
        x = x + self.drop(self.attn(h, h, mask))
        return x + self.drop(self.ff(self.norm2(x)))


class DecoderLayer(Module):
    """Pre-norm decoder block: query self-attention, cross-attention, feed-forward."""

    def __init__(self, dim, heads, ff_dim, dropout, rng):
        self.norm1 = LayerNorm(dim)
        self.self_attn = MultiheadAttention(dim, heads, dropout, rng)
        self.norm2 = LayerNorm(dim)
        self.cross_attn = MultiheadAttention(dim, heads, dropout, rng)
        self.norm3 = LayerNorm(dim)
        self.ff = FeedForward(dim, ff_dim, dropout, rng)
        self.drop = Dropout(dropout)

    def forward(self, x, memory, query_mask=None, memory_mask=None):
        h = self.norm1(x)
        x = x + self.drop(self.self_attn(h, h, query_mask))
        x = x + self.drop(self.cross_attn(self.norm2(x), memory, memory_mask))
        return x + self.drop(self.ff(self.norm3(x)))


def reverse_index(lengths, T: int) -> np.ndarray:
    """Per-row time reversal of the valid prefix; padding stays in place."""
    lengths = np.asarray(lengths)
    t = np.arange(T)[None, :]
    L = lengths[:, None]
    return np.where(t < L, L - 1 - t, t)


class BiLSTMLayer(Module):
    def __init__(self, n_in: int, hidden: int, rng: np.random.Generator):
        bound = 1.0 / math.sqrt(hidden)
        self.fwd_in = Linear(n_in, 4 * hidden, rng)
        self.fwd_rec = Parameter(rng.uniform(-bound, bound, (hidden, 4 * hidden)))
        self.bwd_in = Linear(n_in, 4 * hidden, rng)
        self.bwd_rec = Parameter(rng.uniform(-bound, bound, (hidden, 4 * hidden)))

    def forward(self, x, lengths):
        B, T, _ = x.shape
        rev = reverse_index(lengths, T)
        hf = ag.lstm_scan(self.fwd_in(x), self.fwd_rec)
        hb = ag.gather_time(ag.lstm_scan(self.bwd_in(ag.gather_time(x, rev)), self.bwd_rec), rev)
        return ag.concat([hf, hb], axis=-1)


def sinusoidal_table(length: int, dim: int) -> np.ndarray:
    """``PE[pos, 2i] = sin(pos / 10000^(2i/dim))``, ``PE[pos, 2i+1] = cos(...)``."""
    if dim % 2:
        raise ParameterError(f"sinusoidal encoding needs an even dimension, got {dim}")
    pos = np.arange(length, dtype=np.float64)[:, None]
    freq = np.power(10000.0, -np.arange(0, dim, 2, dtype=np.float64) / dim)
    pe = np.empty((length, dim))
    pe[:, 0::2] = np.sin(pos * freq)
    pe[:, 1::2] = np.cos(pos * freq)
    return pe
