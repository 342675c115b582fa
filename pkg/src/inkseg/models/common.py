"""Batching and the shared point-embedding front end."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..features import Features, Vocabulary, extract_features
from ..ink import LabeledSample, normalize_sample
from ..tensor import autograd as ag
from ..tensor import nn


@dataclass
class Batch:
    inputs: np.ndarray        # (B, P, F)
    spike_ids: np.ndarray     # (B, P)
    point_mask: np.ndarray    # (B, P), true for real points
    lengths: np.ndarray       # (B,)
    char_ids: np.ndarray      # (B, C)
    char_mask: np.ndarray     # (B, C), true for real characters
    targets: np.ndarray | None = None  # (B, P); -1 where ignored

    @property
    def size(self) -> int:
        return self.inputs.shape[0]


def featurize(samples, mode: str, vocab: Vocabulary, use_spikes: bool) -> list[Features]:
    return [extract_features(normalize_sample(s), mode, vocab, use_spikes) for s in samples]


def collate(samples: list[LabeledSample], feats: list[Features], vocab: Vocabulary,
            targets: list[np.ndarray] | None = None) -> Batch:
    B = len(samples)
    P = max(len(f) for f in feats)
    C = max(s.num_chars for s in samples)
    F = feats[0].matrix().shape[1]
    inputs = np.zeros((B, P, F))
    spike_ids = np.zeros((B, P), dtype=np.int64)
    point_mask = np.zeros((B, P), dtype=bool)
    char_ids = np.zeros((B, C), dtype=np.int64)
    char_mask = np.zeros((B, C), dtype=bool)
    tgt = np.full((B, P), -1, dtype=np.int64) if targets is not None else None
    for b, (s, f) in enumerate(zip(samples, feats)):
        n = len(f)
        inputs[b, :n] = f.matrix()
        spike_ids[b, :n] = f.spike_ids
        point_mask[b, :n] = True
        char_ids[b, :s.num_chars] = vocab.encode(s.chars)
        char_mask[b, :s.num_chars] = True
        if targets is not None:
            tgt[b, :n] = targets[b]
    return Batch(inputs, spike_ids, point_mask, point_mask.sum(1), char_ids, char_mask, tgt)


class PointEmbedding(nn.Module):
    """Linear projection of feature rows plus a character embedding at spike rows."""

    def __init__(self, n_in: int, dim: int, vocab_size: int, rng, positional: bool):
        self.proj = nn.Linear(n_in, dim, rng)
        self.spike = nn.Embedding(vocab_size, dim, rng)
        self.positional = positional
        self.dim = dim

    def forward(self, batch: Batch):
        x = self.proj(batch.inputs)
        has = batch.spike_ids != Vocabulary.PAD
        if has.any():
            emb = self.spike(batch.spike_ids)
            x = x + ag.mul(emb, np.broadcast_to(has[..., None], emb.shape).astype(np.float64))
        if self.positional:
            x = x + nn.sinusoidal_table(x.shape[1], self.dim)
        return x
