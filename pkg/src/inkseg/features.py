"""Per-point feature rows, vocabulary and simulated CTC spikes."""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from typing import Iterable, NamedTuple

import numpy as np

from .errors import InputError, UsageError
from .ink import NONE, CtcSpikes, LabeledSample

log = logging.getLogger(__name__)

RECURRENT = "recurrent"
ABSOLUTE = "absolute"
INDEX_SCALE = 0.01


class Vocabulary:
    PAD = 0
    UNK = 1
    RESERVED = ("<pad>", "<unk>")

    def __init__(self, chars: Iterable[str] = ()):
        self.char_to_id: dict[str, int] = {}
        self.id_to_char: list[str] = list(self.RESERVED)
        for ch in sorted(set(chars)):
            self.add(ch)

    def add(self, ch: str) -> int:
        if ch not in self.char_to_id:
            self.char_to_id[ch] = len(self.id_to_char)
            self.id_to_char.append(ch)
        return self.char_to_id[ch]

    def __len__(self):
        return len(self.id_to_char)

    def __contains__(self, ch):
        return ch in self.char_to_id

    def __eq__(self, other):
        return isinstance(other, Vocabulary) and self.id_to_char == other.id_to_char

    def id(self, ch: str) -> int:
        return self.char_to_id.get(ch, self.UNK)

    def encode(self, chars) -> np.ndarray:
        return np.array([self.id(c) for c in chars], dtype=np.int64)

    @classmethod
    def from_corpus(cls, samples: Iterable[LabeledSample]) -> "Vocabulary":
        chars = set()
        for s in samples:
            chars.update(s.chars)
            if s.spikes is not None:
                chars.update(c for _, c in s.spikes)
        return cls(chars)

    def to_json(self) -> str:
        return json.dumps(sorted(self.char_to_id.items(), key=lambda kv: kv[1]), ensure_ascii=False)

    def to_dict(self) -> list:
        return sorted(self.char_to_id.items(), key=lambda kv: kv[1])

    @classmethod
    def from_pairs(cls, pairs) -> "Vocabulary":
        vocab = cls()
        for ch, i in sorted(pairs, key=lambda kv: kv[1]):
            if vocab.add(ch) != i:
                raise InputError(f"vocabulary ids are not dense at {ch!r} -> {i}")
        return vocab

    @classmethod
    def from_json(cls, text: str) -> "Vocabulary":
        return cls.from_pairs(json.loads(text))


class FeatureRow(NamedTuple):
    coord_a: float
    coord_b: float
    index_point: int
    index_stroke: int
    index_global: int | None
    spike_char: int | None


@dataclass
class Features:
    """Column-wise feature rows for one sample."""

    mode: str
    coords: np.ndarray
    index_point: np.ndarray
    index_stroke: np.ndarray
    index_global: np.ndarray | None
    spike_ids: np.ndarray  # Vocabulary.PAD where no spike
    unk_spikes: int = 0

    def __len__(self):
        return self.coords.shape[0]

    @property
    def rows(self) -> list[FeatureRow]:
        out = []
        for j in range(len(self)):
            sid = int(self.spike_ids[j])
            out.append(FeatureRow(
                float(self.coords[j, 0]), float(self.coords[j, 1]),
                int(self.index_point[j]), int(self.index_stroke[j]),
                None if self.index_global is None else int(self.index_global[j]),
                None if sid == Vocabulary.PAD else sid))
        return out

    @property
    def has_spike(self) -> np.ndarray:
        return self.spike_ids != Vocabulary.PAD

    def matrix(self) -> np.ndarray:
        """Dense model input: coordinates, then index channels scaled by 1/100."""
        cols = [self.coords, self.index_point[:, None] * INDEX_SCALE,
                self.index_stroke[:, None] * INDEX_SCALE]
        if self.index_global is not None:
            cols.append(self.index_global[:, None] * INDEX_SCALE)
        return np.concatenate(cols, axis=1)


def num_input_channels(mode: str) -> int:
    return 5 if mode == RECURRENT else 4


def extract_features(sample: LabeledSample, mode: str, vocab: Vocabulary,
                     use_spikes: bool = True) -> Features:
    """Build feature rows from the sample's coordinates as given.

    Recurrent mode uses deltas to the previous global point and carries the
    global index; absolute mode uses the coordinates directly.
    """
    if mode not in (RECURRENT, ABSOLUTE):
        raise UsageError(f"unknown feature mode {mode!r}")
    ink = sample.ink
    pts = ink.points()
    p = pts.shape[0]
    if mode == RECURRENT:
        coords = np.zeros_like(pts)
        coords[1:] = pts[1:] - pts[:-1]
        index_global = np.arange(p)
    else:
        coords = pts.copy()
        index_global = None
    spike_ids = np.full(p, Vocabulary.PAD, dtype=np.int64)
    unk = 0
    if use_spikes and sample.spikes is not None:
        for idx, ch in sample.spikes:
            sid = vocab.id(ch)
            if sid == Vocabulary.UNK:
                unk += 1
            spike_ids[idx] = sid
    if unk:
        log.warning("%d spike characters not in vocabulary, mapped to UNK", unk)
    return Features(mode, coords, ink.point_index(), ink.stroke_index(), index_global,
                    spike_ids, unk)


def simulate_ctc_spikes(truth, chars, jitter: int = 0, drop_rate: float = 0.0,
                        rng_seed: int = 0) -> CtcSpikes:
    """One spike per character at its last ground-truth point.

    The index is drawn uniformly from ``[last - jitter, last + jitter]``
    intersected with the slot's point range, then dropped with probability
    ``drop_rate``.
    """
    truth = np.asarray(truth)
    if jitter < 0 or not 0.0 <= drop_rate <= 1.0:
        raise InputError("jitter must be >= 0 and drop_rate in [0, 1]")
    rng = np.random.default_rng(rng_seed)
    placed: dict[int, str] = {}
    for k, ch in enumerate(chars):
        idx = np.flatnonzero(truth == k)
        if idx.size == 0:
            raise InputError(f"slot {k} ({ch!r}) has no points")
        lo, hi = int(idx[0]), int(idx[-1])
        a, b = max(lo, hi - jitter), min(hi, hi + jitter)
        pos = int(rng.integers(a, b + 1))
        if rng.random() < drop_rate:
            continue
        placed[pos] = ch  # later character wins ties
    return CtcSpikes(tuple(sorted(placed.items())))


def is_monotone(seg) -> bool:
    seg = np.asarray(seg)
    seg = seg[seg != NONE]
    return bool(np.all(np.diff(seg) >= 0))
