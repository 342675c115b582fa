import numpy as np
import pytest

from inkseg.errors import ConfigError, InputError
from inkseg.evaluation import sample_miou
from inkseg.ink import CtcSpikes, Ink, LabeledSample
from inkseg.kmeans import (KMeansConfig, init_centroids, kmeans_cluster, kmeans_segment, lloyd,
                           weighted_features)
from inkseg.synth import generate, preset


def line_sample(xs, chars, strokes=None, spikes=None, ys=None):
    xs = np.asarray(xs, dtype=float)
    ys = np.zeros_like(xs) if ys is None else np.asarray(ys, dtype=float)
    pts = np.column_stack([xs, ys])
    if strokes is None:
        strokes = [len(xs)]
    parts = np.split(pts, np.cumsum(strokes)[:-1])
    return LabeledSample(Ink.from_points(parts), tuple(chars), spikes=spikes)


def test_separated_clusters():
    s = line_sample([0, 1, 10, 11], "ab")
    for seed in range(10):
        assert list(kmeans_segment(s, KMeansConfig(seed=seed))) == [0, 0, 1, 1]


def test_single_cluster_is_weighted_mean():
    s = line_sample([0, 1, 5], "a", ys=[0, 2, 1])
    cfg = KMeansConfig()
    st = kmeans_cluster(s, cfg)
    X, _ = weighted_features(s, cfg)
    assert np.all(kmeans_segment(s, cfg) == 0)
    np.testing.assert_allclose(st.centroids[0], X.mean(axis=0))


def test_too_many_chars():
    with pytest.raises(InputError):
        kmeans_segment(line_sample([0, 1], "abc"))


def test_spike_init_needs_spikes():
    with pytest.raises(InputError):
        kmeans_segment(line_sample([0, 1, 2], "ab"), KMeansConfig(init="ctc_spikes"))


def test_config_validation():
    with pytest.raises(ConfigError):
        KMeansConfig(weight_x=-1)
    with pytest.raises(ConfigError):
        KMeansConfig(max_iters=0)
    with pytest.raises(ConfigError):
        KMeansConfig(init="nope")


def test_spike_centroids():
    s = line_sample(np.arange(6), "ab", spikes=CtcSpikes(((1, "a"), (3, "b"))))
    cfg = KMeansConfig(init="ctc_spikes")
    X, _ = weighted_features(s, cfg)
    C = init_centroids(X, 2, cfg, s.spikes)
    np.testing.assert_array_equal(C, X[[1, 3]])


def test_spike_shortfall_filled():
    s = line_sample(np.arange(8), "abc", spikes=CtcSpikes(((0, "a"),)))
    cfg = KMeansConfig(init="ctc_spikes", seed=3)
    X, _ = weighted_features(s, cfg)
    C = init_centroids(X, 3, cfg, s.spikes)
    assert C.shape == (3, 3)
    np.testing.assert_array_equal(C[0], X[0])
    # fill-ins come from non-spike rows
    for row in C[1:]:
        assert any(np.array_equal(row, X[i]) for i in range(1, 8))
    # surplus spikes: only the first c are used
    s2 = line_sample(np.arange(8), "ab", spikes=CtcSpikes(((0, "a"), (2, "b"), (5, "c"))))
    np.testing.assert_array_equal(init_centroids(X, 2, cfg, s2.spikes), X[[0, 2]])


def test_random_init_deterministic():
    s = generate(preset("default", seed=4), 1)[0]
    a = kmeans_segment(s, KMeansConfig(seed=9))
    b = kmeans_segment(s, KMeansConfig(seed=9))
    np.testing.assert_array_equal(a, b)


def test_inertia_non_increasing():
    rng = np.random.default_rng(0)
    for _ in range(200):
        n = int(rng.integers(2, 30))
        k = int(rng.integers(1, n + 1))
        X = rng.normal(size=(n, 3)) * rng.uniform(0.1, 10, 3)
        C0 = X[rng.choice(n, k, replace=False)] + rng.normal(size=(k, 3))
        h = lloyd(X, C0, 50).history
        assert all(b <= a * (1 + 1e-12) + 1e-12 for a, b in zip(h, h[1:]))


def test_all_slots_present():
    rng = np.random.default_rng(5)
    for _ in range(50):
        n = int(rng.integers(3, 25))
        c = int(rng.integers(1, n + 1))
        s = line_sample(rng.permutation(n) * 1.0, "abcdefghijklmnopqrstuvwxyz"[:c],
                        ys=rng.normal(size=n))
        seg = kmeans_segment(s, KMeansConfig(seed=int(rng.integers(100))))
        assert set(seg) == set(range(c))


def test_weight_scaling_invariance():
    for s in generate(preset("default", seed=6), 20):
        base = KMeansConfig(seed=2)
        big = KMeansConfig(seed=2, weight_x=8.0, weight_y=0.32, weight_stroke=1792.0)
        a, b = kmeans_cluster(s, base), kmeans_cluster(s, big)
        np.testing.assert_array_equal(a.assignment, b.assignment)
        assert a.iterations == b.iterations


def test_block_corpus_exact_with_spikes():
    samples = generate(preset("block", seed=7), 40)
    cfg = KMeansConfig(init="ctc_spikes")
    for s in samples:
        assert sample_miou(kmeans_segment(s, cfg), s.truth, s.num_chars) == 1.0
