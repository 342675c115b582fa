import numpy as np
import pytest

from inkseg.errors import InputError
from inkseg.features import (ABSOLUTE, RECURRENT, Vocabulary, extract_features, is_monotone,
                             num_input_channels, simulate_ctc_spikes)
from inkseg.ink import CtcSpikes, Ink, LabeledSample
from inkseg.synth import generate, preset


def two_points(spikes=None):
    return LabeledSample(Ink.from_points([[[0, 0], [3, 4]]]), ("a",), spikes=spikes)


def test_recurrent_rows():
    f = extract_features(two_points(), RECURRENT, Vocabulary("a"))
    rows = f.rows
    assert [(r.coord_a, r.coord_b) for r in rows] == [(0, 0), (3, 4)]
    assert [r.index_point for r in rows] == [0, 1]
    assert [r.index_stroke for r in rows] == [0, 0]
    assert [r.index_global for r in rows] == [0, 1]
    assert f.matrix().shape == (2, num_input_channels(RECURRENT))


def test_absolute_rows():
    f = extract_features(two_points(), ABSOLUTE, Vocabulary("a"))
    assert [(r.coord_a, r.coord_b) for r in f.rows] == [(0, 0), (3, 4)]
    assert all(r.index_global is None for r in f.rows)
    assert f.matrix().shape == (2, num_input_channels(ABSOLUTE))


def test_spike_placement_and_unk():
    v = Vocabulary("a")
    f = extract_features(two_points(CtcSpikes(((1, "a"),))), ABSOLUTE, v)
    assert [r.spike_char for r in f.rows] == [None, v.id("a")]
    f = extract_features(two_points(CtcSpikes(((0, "q"),))), ABSOLUTE, v)
    assert f.rows[0].spike_char == Vocabulary.UNK and f.unk_spikes == 1
    f = extract_features(two_points(CtcSpikes(((1, "a"),))), ABSOLUTE, v, use_spikes=False)
    assert not f.has_spike.any()


def test_index_scaling():
    ink = Ink.from_points([[[0, 0]] * 3, [[1, 1]] * 2])
    m = extract_features(LabeledSample(ink, ("a",)), RECURRENT, Vocabulary("a")).matrix()
    np.testing.assert_allclose(m[:, 2], [0, 0.01, 0.02, 0, 0.01])
    np.testing.assert_allclose(m[:, 3], [0, 0, 0, 0.01, 0.01])
    np.testing.assert_allclose(m[:, 4], np.arange(5) * 0.01)


def test_deltas_accumulate_to_coordinates():
    for s in generate(preset("default", seed=1), 20):
        f = extract_features(s, RECURRENT, Vocabulary.from_corpus([s]))
        pts = s.ink.points()
        np.testing.assert_allclose(np.cumsum(f.coords, axis=0), pts - pts[0], atol=1e-9)
        assert len(f) == s.num_points


def test_vocabulary_round_trip():
    v = Vocabulary(["b", "a", "ê"])
    assert v.id("a") == 2 and v.id("zz") == Vocabulary.UNK
    assert Vocabulary.from_json(v.to_json()) == v
    assert list(v.encode("ab")) == [2, 3]


def test_spike_examples():
    s = simulate_ctc_spikes([0, 0, 1, 1], ("a", "b"))
    assert s.entries == ((1, "a"), (3, "b"))
    assert len(simulate_ctc_spikes([0, 0, 1, 1], ("a", "b"), drop_rate=1.0)) == 0
    with pytest.raises(InputError):
        simulate_ctc_spikes([0, 0, 2], ("a", "b", "c"))


def test_spike_jitter_distribution():
    counts = np.zeros(2)
    for seed in range(10000):
        idx = simulate_ctc_spikes([0, 0, 1, 1], ("a", "b"), jitter=1, rng_seed=seed).indices[0]
        assert idx in (0, 1)
        counts[idx] += 1
    # binomial(10000, 0.5): 5 sigma is 250
    assert abs(counts[0] - counts[1]) < 500


def test_spikes_deterministic_and_sorted():
    truth = np.repeat(np.arange(6), 3)
    a = simulate_ctc_spikes(truth, tuple("abcdef"), jitter=2, drop_rate=0.3, rng_seed=5)
    b = simulate_ctc_spikes(truth, tuple("abcdef"), jitter=2, drop_rate=0.3, rng_seed=5)
    assert a == b
    assert a.indices == sorted(set(a.indices))


def test_is_monotone():
    assert is_monotone([0, 0, 1, -1, 2])
    assert not is_monotone([0, 1, 0])
