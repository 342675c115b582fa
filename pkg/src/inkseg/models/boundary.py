"""Character-boundary token prediction with a BiLSTM or Transformer-encoder backbone."""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from ..errors import CapacityError, ParameterError, UsageError
from ..features import ABSOLUTE, RECURRENT, Features, Vocabulary, num_input_channels
from ..ink import NONE, LabeledSample
from ..tensor import autograd as ag
from ..tensor import nn
from .common import Batch, PointEmbedding, collate

START, CHAR, NONE_TOKEN = 0, 1, 2
TOKEN_NAMES = ("<start>", "<char>", "<none>")
BILSTM, TRANSFORMER = "bilstm", "transformer"


@dataclass
class BoundaryModelConfig:
    backbone: str = BILSTM
    hidden_dim: int = 256
    layers: int = 3
    heads: int = 8
    dropout: float = 0.2
    vocab_size: int = 2
    max_points: int = 2048
    use_spikes: bool = True
    ff_dim: int | None = None  # defaults to hidden_dim

    def __post_init__(self):
        if self.backbone not in (BILSTM, TRANSFORMER):
            raise ParameterError(f"unknown backbone {self.backbone!r}")
        if self.backbone == TRANSFORMER and self.hidden_dim % self.heads:
            raise ParameterError("hidden_dim must be divisible by heads")

    @property
    def feature_mode(self) -> str:
        return RECURRENT if self.backbone == BILSTM else ABSOLUTE

    def to_dict(self):
        return asdict(self)


class BoundaryModel(nn.Module):
    kind = "boundary"

    def __init__(self, cfg: BoundaryModelConfig, seed: int = 0):
        self.cfg = cfg
        rng = np.random.default_rng(seed)
        d = cfg.hidden_dim
        transformer = cfg.backbone == TRANSFORMER
        self.embed = PointEmbedding(num_input_channels(cfg.feature_mode), d, cfg.vocab_size, rng,
                                    positional=transformer)
        self.drop = nn.Dropout(cfg.dropout)
        if transformer:
            self.layers = [nn.EncoderLayer(d, cfg.heads, cfg.ff_dim or d, cfg.dropout, rng)
                           for _ in range(cfg.layers)]
            self.final_norm = nn.LayerNorm(d)
            self.classifier = nn.Linear(d, 3, rng)
        else:
            self.layers = [nn.BiLSTMLayer(d if i == 0 else 2 * d, d, rng) for i in range(cfg.layers)]
            self.classifier = nn.Linear(2 * d, 3, rng)

    def forward(self, batch: Batch):
        """Per-point token logits of shape ``(B, P, 3)``."""
        if batch.inputs.shape[1] > self.cfg.max_points:
            raise CapacityError(f"{batch.inputs.shape[1]} points exceed max_points={self.cfg.max_points}")
        x = self.drop(self.embed(batch))
        if self.cfg.backbone == TRANSFORMER:
            for layer in self.layers:
                x = layer(x, batch.point_mask)
            x = self.final_norm(x)
        else:
            for i, layer in enumerate(self.layers):
                x = layer(x, batch.lengths)
                if i < len(self.layers) - 1:
                    x = self.drop(ag.relu(x))
        return self.classifier(x)


def boundary_forward(features: Features, model: BoundaryModel, sample: LabeledSample,
                     vocab: Vocabulary, train: bool = False, rng=None) -> np.ndarray:
    """Logits ``(p, 3)`` for a single sample's feature rows."""
    if features.mode != model.cfg.feature_mode:
        raise UsageError(f"{model.cfg.backbone} backbone needs {model.cfg.feature_mode} features, "
                         f"got {features.mode}")
    model.train(train, rng)
    with ag.no_grad():
        return model(collate([sample], [features], vocab)).data[0]


def decode_boundaries(logits, c: int) -> np.ndarray:
    """Turn per-point token scores into a segmentation with at most ``c`` slots.

    Extra segments are removed smallest first (ties: rightmost first) and their
    points become NONE; missing segments leave trailing slots empty.
    """
    tokens = np.argmax(np.asarray(logits), axis=-1)
    return decode_tokens(tokens, c)


def decode_tokens(tokens, c: int) -> np.ndarray:
    if c < 1:
        raise ValueError("c must be >= 1")
    seg_of = np.full(len(tokens), NONE, dtype=np.int64)
    sizes: list[int] = []
    for j, t in enumerate(tokens):
        if t == START:
            sizes.append(1)
            seg_of[j] = len(sizes) - 1
        elif t == CHAR and sizes:
            sizes[-1] += 1
            seg_of[j] = len(sizes) - 1
    alive = list(range(len(sizes)))
    while len(alive) > c:
        smallest = min(sizes[s] for s in alive)
        victim = max(s for s in alive if sizes[s] == smallest)
        alive.remove(victim)
    slot = np.full(len(sizes) + 1, NONE, dtype=np.int64)
    for k, s in enumerate(alive):
        slot[s] = k
    out = np.full(len(tokens), NONE, dtype=np.int64)
    has = seg_of != NONE
    out[has] = slot[seg_of[has]]
    return out


def boundary_targets(truth) -> np.ndarray:
    """Token targets: START opens a slot, CHAR continues the open slot, and
    points of any other already-started slot (delayed strokes) are NONE."""
    truth = np.asarray(truth)
    out = np.empty(len(truth), dtype=np.int64)
    started: set[int] = set()
    open_slot = None
    for j, s in enumerate(truth):
        s = int(s)
        if s == NONE:
            out[j] = NONE_TOKEN
        elif s == open_slot:
            out[j] = CHAR
        elif s not in started:
            out[j] = START
            started.add(s)
            open_slot = s
        else:
            out[j] = NONE_TOKEN
    return out
