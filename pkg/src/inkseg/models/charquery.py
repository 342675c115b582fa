"""Encoder-decoder Transformer whose decoder queries are the transcription's characters.

The encoder turns points into ``E`` (p x d_h), the decoder turns character
queries into ``D`` (c x d_h), and the point-to-character scores are
``(E W_E)(D W_D)^T``.
"""
from __future__ import annotations

import csv
import io
from dataclasses import asdict, dataclass

import numpy as np

from ..errors import CapacityError, InputError, ParameterError, UsageError
from ..features import ABSOLUTE, Features, Vocabulary, num_input_channels
from ..ink import LabeledSample
from ..tensor import autograd as ag
from ..tensor import nn
from .common import Batch, PointEmbedding, collate

LEARNED, SINUSOIDAL = "learned", "sinusoidal"


@dataclass
class CharQueryConfig:
    hidden_dim: int = 256
    final_dim: int = 256
    encoder_layers: int = 3
    decoder_layers: int = 3
    heads: int = 8
    dropout: float = 0.2
    vocab_size: int = 2
    max_chars: int = 64
    max_points: int = 2048
    query_pos_encoding: str = LEARNED
    use_spikes: bool = True
    ff_dim: int | None = None

    def __post_init__(self):
        if self.hidden_dim % self.heads:
            raise ParameterError("hidden_dim must be divisible by heads")
        if self.query_pos_encoding not in (LEARNED, SINUSOIDAL):
            raise ParameterError(f"unknown query encoding {self.query_pos_encoding!r}")

    feature_mode = ABSOLUTE

    def to_dict(self):
        return asdict(self)


class CharQueryModel(nn.Module):
    kind = "charquery"

    def __init__(self, cfg: CharQueryConfig, seed: int = 0):
        self.cfg = cfg
        rng = np.random.default_rng(seed)
        d, ff = cfg.hidden_dim, cfg.ff_dim or cfg.hidden_dim
        self.embed = PointEmbedding(num_input_channels(ABSOLUTE), d, cfg.vocab_size, rng, positional=True)
        self.drop = nn.Dropout(cfg.dropout)
        self.encoder = [nn.EncoderLayer(d, cfg.heads, ff, cfg.dropout, rng) for _ in range(cfg.encoder_layers)]
        self.encoder_norm = nn.LayerNorm(d)
        self.char_embed = nn.Embedding(cfg.vocab_size, d, rng)
        if cfg.query_pos_encoding == LEARNED:
            self.query_pos = nn.Parameter(rng.normal(0.0, 0.02, (cfg.max_chars, d)))
        else:
            self.query_pos = None
        self.decoder = [nn.DecoderLayer(d, cfg.heads, ff, cfg.dropout, rng) for _ in range(cfg.decoder_layers)]
        self.decoder_norm = nn.LayerNorm(d)
        self.point_out = nn.Linear(d, cfg.final_dim, rng)
        self.char_out = nn.Linear(d, cfg.final_dim, rng)

    def query_table(self, length: int | None = None) -> np.ndarray:
        length = self.cfg.max_chars if length is None else length
        if self.query_pos is not None:
            return self.query_pos.data[:length]
        return nn.sinusoidal_table(length, self.cfg.hidden_dim)

    def queries(self, char_ids: np.ndarray):
        C = char_ids.shape[1]
        if C > self.cfg.max_chars:
            raise CapacityError(f"{C} characters exceed max_chars={self.cfg.max_chars}")
        pos = self.query_pos[:C] if self.query_pos is not None else nn.sinusoidal_table(C, self.cfg.hidden_dim)
        return self.char_embed(char_ids) + pos

    def encode(self, batch: Batch):
        x = self.drop(self.embed(batch))
        for layer in self.encoder:
            x = layer(x, batch.point_mask)
        return self.encoder_norm(x)

    def forward(self, batch: Batch):
        """Point-to-character logits of shape ``(B, P, C)``."""
        if batch.inputs.shape[1] > self.cfg.max_points:
            raise CapacityError(f"{batch.inputs.shape[1]} points exceed max_points={self.cfg.max_points}")
        if batch.char_ids.shape[1] == 0:
            raise InputError("empty transcription")
        enc = self.encode(batch)
        q = self.drop(self.queries(batch.char_ids))
        for layer in self.decoder:
            q = layer(q, enc, batch.char_mask, batch.point_mask)
        dec = self.decoder_norm(q)
        return ag.matmul(self.point_out(enc), ag.swapaxes(self.char_out(dec), -1, -2))


def charquery_forward(features: Features, sample: LabeledSample, model: CharQueryModel,
                      vocab: Vocabulary, train: bool = False, rng=None) -> np.ndarray:
    """Logits ``(p, c)`` for one sample."""
    if features.mode != ABSOLUTE:
        raise UsageError("the character query model needs absolute features")
    model.train(train, rng)
    with ag.no_grad():
        return model(collate([sample], [features], vocab)).data[0]


def charquery_segment(logits) -> np.ndarray:
    """Assign each point to its highest-scoring character (ties: lower slot)."""
    return np.argmax(np.asarray(logits), axis=-1).astype(np.int64)


def pe_diagnostic(model: CharQueryModel | None, max_pos: int, dim: int | None = None) -> list[tuple[int, float, float]]:
    """Per-position mean of the query positional vectors, min-max normalized
    over positions, for the sinusoidal table and the model's learned table.

    Returns ``(pos, sinusoidal, learned)`` rows; ``learned`` is NaN when the
    model has no learned table.
    """
    if model is not None:
        dim = model.cfg.hidden_dim
        if max_pos > model.cfg.max_chars:
            raise CapacityError(f"max_pos {max_pos} exceeds table size {model.cfg.max_chars}")
    elif dim is None:
        raise UsageError("need a model or a dimension")
    sin = _minmax(nn.sinusoidal_table(max_pos, dim).mean(axis=1))
    if model is not None and model.query_pos is not None:
        learned = _minmax(model.query_pos.data[:max_pos].mean(axis=1))
    else:
        learned = np.full(max_pos, np.nan)
    return [(i, float(sin[i]), float(learned[i])) for i in range(max_pos)]


def _minmax(v: np.ndarray) -> np.ndarray:
    span = v.max() - v.min()
    return (v - v.min()) / span if span > 0 else np.zeros_like(v)


def pe_diagnostic_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["pos", "sinusoidal", "learned"])
    for pos, s, l in rows:
        w.writerow([pos, repr(s), "" if np.isnan(l) else repr(l)])
    return buf.getvalue()


def mean_successive_difference(values) -> float:
    v = np.asarray(values, dtype=np.float64)
    return float(np.mean(np.abs(np.diff(v))))
