"""Neural segmenters, checkpoint loading and batched inference."""
from __future__ import annotations

import numpy as np

from ..errors import UsageError
from ..features import Vocabulary
from ..ink import LabeledSample
from ..tensor import load_checkpoint, no_grad, save_checkpoint
from .boundary import (BILSTM, TRANSFORMER, BoundaryModel, BoundaryModelConfig, boundary_targets,
                       decode_boundaries)
from .charquery import CharQueryConfig, CharQueryModel, charquery_segment
from .common import collate, featurize

KINDS = ("lstm", "transformer", "charquery")


def build_model(kind: str, vocab_size: int, seed: int = 0, **overrides):
    if kind == "lstm":
        return BoundaryModel(BoundaryModelConfig(backbone=BILSTM, vocab_size=vocab_size, **overrides), seed)
    if kind == "transformer":
        return BoundaryModel(BoundaryModelConfig(backbone=TRANSFORMER, vocab_size=vocab_size, **overrides), seed)
    if kind == "charquery":
        return CharQueryModel(CharQueryConfig(vocab_size=vocab_size, **overrides), seed)
    raise UsageError(f"unknown model kind {kind!r}; expected one of {KINDS}")


def model_kind(model) -> str:
    if isinstance(model, CharQueryModel):
        return "charquery"
    return "lstm" if model.cfg.backbone == BILSTM else "transformer"


def save_model(directory, model, vocab: Vocabulary, extra: dict | None = None):
    meta = {"kind": model_kind(model), "config": model.cfg.to_dict(), "vocab": vocab.to_dict()}
    if extra:
        meta.update(extra)
    return save_checkpoint(directory, model.state_dict(), meta)


def load_model(directory):
    """Return ``(model, vocab, meta)`` from a checkpoint directory."""
    params, meta = load_checkpoint(directory)
    cfg = dict(meta["config"])
    kind = meta["kind"]
    if kind in ("lstm", "transformer"):
        cfg.pop("backbone", None)
    vocab_size = cfg.pop("vocab_size")
    model = build_model(kind, vocab_size, **cfg)
    model.load_state_dict(params)
    return model, Vocabulary.from_pairs(meta["vocab"]), meta


def predict_logits(model, vocab: Vocabulary, samples: list[LabeledSample], batch_size: int = 32):
    """Per-sample logits (numpy, unpadded) with dropout off."""
    mode = model.cfg.feature_mode
    model.eval()
    out = []
    # group similar lengths so padding stays small; results go back in input order
    order = sorted(range(len(samples)), key=lambda i: samples[i].num_points)
    results = [None] * len(samples)
    with no_grad():
        for start in range(0, len(order), batch_size):
            idx = order[start:start + batch_size]
            batch_samples = [samples[i] for i in idx]
            feats = featurize(batch_samples, mode, vocab, model.cfg.use_spikes)
            logits = model(collate(batch_samples, feats, vocab)).data
            for b, i in enumerate(idx):
                s = samples[i]
                if isinstance(model, CharQueryModel):
                    results[i] = logits[b, :s.num_points, :s.num_chars]
                else:
                    results[i] = logits[b, :s.num_points]
    out.extend(results)
    return out


def segment_with_model(model, vocab: Vocabulary, samples: list[LabeledSample], batch_size: int = 32):
    segs = []
    for s, lg in zip(samples, predict_logits(model, vocab, samples, batch_size)):
        if isinstance(model, CharQueryModel):
            segs.append(charquery_segment(lg))
        else:
            segs.append(decode_boundaries(lg, s.num_chars))
    return segs


__all__ = [
    "KINDS", "BoundaryModel", "BoundaryModelConfig", "CharQueryConfig", "CharQueryModel",
    "boundary_targets", "build_model", "decode_boundaries", "charquery_segment", "load_model",
    "model_kind", "predict_logits", "save_model", "segment_with_model",
]
