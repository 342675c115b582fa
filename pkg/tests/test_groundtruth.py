import math

import numpy as np
import pytest

from inkseg.errors import ScorerError
from inkseg.evaluation import sample_miou
from inkseg.features import is_monotone
from inkseg.groundtruth import (SPATIAL_GAP, STROKE_BOUNDARY, TEMPORAL_GAP, SyntheticScorer,
                                approximate_truth, enumerate_cuts)
from inkseg.ink import Ink, LabeledSample
from inkseg.synth import generate, preset


def test_stroke_boundary_cut():
    ink = Ink.from_points([[[0, 0], [1, 0], [2, 0]], [[5, 0], [6, 0]]])
    cuts = enumerate_cuts(ink)
    assert (3, STROKE_BOUNDARY) in [(c.global_index, c.kind) for c in cuts]


def test_even_stroke_has_no_spatial_gap():
    ink = Ink.from_points([np.column_stack([np.arange(20.0), np.zeros(20)])])
    assert enumerate_cuts(ink) == []


def test_planted_jump():
    x = np.arange(30.0)
    x[17:] += 9.0  # step 16 -> 17 is ten times the others
    ink = Ink.from_points([np.column_stack([x, np.zeros(30)])])
    cuts = enumerate_cuts(ink)
    assert [(c.global_index, c.kind) for c in cuts] == [(17, SPATIAL_GAP)]


def test_temporal_gaps_need_times():
    pts = np.column_stack([np.arange(10.0), np.zeros(10)])
    t = np.arange(10.0)
    t[6:] += 20
    with_t = Ink((pts,), (t,))
    assert [(c.global_index, c.kind) for c in enumerate_cuts(with_t)] == [(6, TEMPORAL_GAP)]
    assert enumerate_cuts(Ink((pts,))) == []


def test_cuts_sorted_and_in_range():
    for s in generate(preset("default", seed=1), 30):
        idx = [c.global_index for c in enumerate_cuts(s.ink)]
        assert idx == sorted(set(idx))
        assert all(0 < i < s.num_points for i in idx)


def test_single_char():
    s = generate(preset("default", seed=2, chars_per_sample=(1, 1)), 1)[0]
    seg = approximate_truth(s, SyntheticScorer.for_sample(s))
    assert np.all(seg == 0)


def test_exact_on_monotone_samples():
    samples = [s for s in generate(preset("default", seed=3), 150) if is_monotone(s.truth)]
    assert len(samples) > 50
    for s in samples:
        np.testing.assert_array_equal(approximate_truth(s, SyntheticScorer.for_sample(s)), s.truth)


def test_output_monotone_and_total():
    for s in generate(preset("delayed", seed=4), 40):
        seg = approximate_truth(s, SyntheticScorer.for_sample(s, noise=0.5, seed=1))
        assert is_monotone(seg)
        assert set(seg) == set(range(s.num_chars))


def test_noise_is_repeatable():
    s = generate(preset("default", seed=5), 1)[0]
    sc = SyntheticScorer.for_sample(s, noise=1.0, seed=3)
    frag = s.ink.slice_points(0, 5)
    assert sc.score(frag, s.chars[:1]) == sc.score(frag, s.chars[:1])


class NanScorer:
    def score(self, fragment, text):
        return math.nan


def test_nan_scorer():
    s = generate(preset("default", seed=6, chars_per_sample=(3, 3)), 1)[0]
    with pytest.raises(ScorerError):
        approximate_truth(s, NanScorer())


def test_fallback_without_candidates():
    # one evenly sampled stroke: no candidates, so every index is tried
    n = 12
    ink = Ink.from_points([np.column_stack([np.arange(n, dtype=float), np.zeros(n)])])
    truth = np.array([0] * 5 + [1] * 7)
    s = LabeledSample(ink, ("a", "b"), truth=truth)
    np.testing.assert_array_equal(approximate_truth(s, SyntheticScorer.for_sample(s)), truth)


def test_default_corpus_quality():
    samples = generate(preset("default", seed=8), 100)
    m = np.mean([sample_miou(approximate_truth(s, SyntheticScorer.for_sample(s)), s.truth, s.num_chars)
                 for s in samples])
    assert m >= 0.95
