"""Approximate point-level labels by repeatedly cutting the first character off the ink.

The search needs a likelihood for "this fragment shows this text". A real
system would ask a handwriting recognizer; here the scorer is an interface,
and :class:`SyntheticScorer` answers from generator labels.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Protocol, Sequence

import numpy as np

from .errors import InputError, ScorerError
from .ink import Ink, InkFragment, LabeledSample

STROKE_BOUNDARY, TEMPORAL_GAP, SPATIAL_GAP = "stroke_boundary", "temporal_gap", "spatial_gap"


@dataclass(frozen=True, order=True)
class CutCandidate:
    global_index: int
    kind: str


def _outliers(steps: np.ndarray, n_sigma: float) -> np.ndarray:
    """Positions of steps above mean + n_sigma * std (never for constant steps)."""
    if steps.size < 2:
        return np.empty(0, dtype=np.int64)
    mu, sd = steps.mean(), steps.std()
    if sd <= 1e-12 * max(abs(mu), 1.0):
        return np.empty(0, dtype=np.int64)
    return np.flatnonzero(steps > mu + n_sigma * sd)


def enumerate_cuts(ink: Ink, n_sigma: float = 2.0, use_time: bool = True) -> list[CutCandidate]:
    """Cut positions ``i`` (split before point ``i``), ascending and one per index.

    When several kinds hit the same index the first of stroke boundary,
    temporal gap, spatial gap wins.
    """
    if ink.num_points < 2:
        raise InputError("need at least two points to cut")
    found: dict[int, str] = {}
    offset = 0
    for s, stroke in enumerate(ink.strokes):
        if s > 0:
            found[offset] = STROKE_BOUNDARY
        hits = []
        if use_time and ink.times is not None:
            hits.append((TEMPORAL_GAP, _outliers(np.diff(ink.times[s]), n_sigma)))
        hits.append((SPATIAL_GAP, _outliers(np.linalg.norm(np.diff(stroke, axis=0), axis=1), n_sigma)))
        for kind, pos in hits:
            for j in pos:
                found.setdefault(offset + int(j) + 1, kind)
        offset += stroke.shape[0]
    return [CutCandidate(i, found[i]) for i in sorted(found)]


class LikelihoodScorer(Protocol):
    def score(self, fragment: InkFragment, text: Sequence[str]) -> float:
        """Log-likelihood of ``text`` for ``fragment``; higher is better."""


class SyntheticScorer:
    """Scores a fragment by how many of its points carry the wrong label.

    The text is aligned to the transcription at every position where it
    occurs; the best alignment counts. ``noise`` adds Gaussian jitter that is a
    pure function of ``(seed, fragment range, text)``, so repeated queries agree.
    """

    def __init__(self, truth, chars: Sequence[str], noise: float = 0.0, seed: int = 0):
        self.truth = np.asarray(truth, dtype=np.int64)
        self.chars = tuple(chars)
        self.noise = float(noise)
        self.seed = int(seed)

    @classmethod
    def for_sample(cls, sample: LabeledSample, noise: float = 0.0, seed: int = 0) -> "SyntheticScorer":
        if sample.truth is None:
            raise InputError("the synthetic scorer needs generator truth")
        return cls(sample.truth, sample.chars, noise, seed)

    def score(self, fragment: InkFragment, text: Sequence[str]) -> float:
        text = tuple(text)
        m = len(text)
        lo = getattr(fragment, "start", 0)
        labels = self.truth[lo:lo + fragment.num_points]
        best = -math.inf
        for k0 in range(len(self.chars) - m + 1):
            if self.chars[k0:k0 + m] != text:
                continue
            inside = (labels >= k0) & (labels < k0 + m)
            # one unit per foreign point, and one per character with no points
            missing = sum(1 for k in range(k0, k0 + m) if not np.any(labels == k))
            best = max(best, -float(np.count_nonzero(~inside)) - missing)
        if best == -math.inf:
            best = -float(labels.size)
        if self.noise > 0:
            key = [self.seed, lo, fragment.num_points] + [ord(ch) for t in text for ch in t]
            best += self.noise * float(np.random.default_rng(np.random.SeedSequence(key)).normal())
        return best


def approximate_truth(sample: LabeledSample, scorer: LikelihoodScorer, n_sigma: float = 2.0,
                      use_time: bool = True) -> np.ndarray:
    """Monotone segmentation found by exhaustive first-character splitting.

    At each step the cut maximizing ``score(head, first char) + score(tail, rest)``
    is taken among the candidate cuts that leave at least one point per
    remaining character; when no candidate fits, every index is tried. Ties go
    to the earliest cut.
    """
    ink, chars = sample.ink, sample.chars
    p, c = ink.num_points, len(chars)
    if c > p:
        raise InputError(f"{c} characters but only {p} points")
    seg = np.zeros(p, dtype=np.int64)
    if c == 1:
        return seg
    cuts = np.array([cc.global_index for cc in enumerate_cuts(ink, n_sigma, use_time)], dtype=np.int64)
    start = 0
    for k in range(c - 1):
        rest = chars[k + 1:]
        lo, hi = start + 1, p - len(rest)  # cut lies in [lo, hi]
        window = cuts[(cuts >= lo) & (cuts <= hi)]
        if window.size == 0:
            window = np.arange(lo, hi + 1)
        best_cut, best = None, -math.inf
        for cut in window:
            cut = int(cut)
            total = (scorer.score(ink.slice_points(start, cut), chars[k:k + 1])
                     + scorer.score(ink.slice_points(cut, p), rest))
            if math.isnan(total):
                raise ScorerError(f"scorer returned NaN for cut {cut} of character {k}")
            if total > best:
                best_cut, best = cut, total
        if best_cut is None:  # every score was -inf
            best_cut = int(window[0])
        seg[start:best_cut] = k
        start = best_cut
    seg[start:] = c - 1
    return seg
