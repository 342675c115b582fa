import numpy as np
import pytest

from inkseg.errors import CapacityError, InputError, ParameterError, UsageError
from inkseg.features import ABSOLUTE, RECURRENT, Vocabulary, extract_features
from inkseg.ink import NONE, CtcSpikes, Ink, LabeledSample, normalize_sample
from inkseg.models import build_model, load_model, predict_logits, save_model, segment_with_model
from inkseg.models.boundary import (CHAR, NONE_TOKEN, START, boundary_forward, boundary_targets,
                                    decode_boundaries, decode_tokens)
from inkseg.models.charquery import (charquery_forward, charquery_segment, mean_successive_difference,
                                     pe_diagnostic, pe_diagnostic_csv)
from inkseg.models.common import featurize
from inkseg.synth import generate, preset
from inkseg.tensor import autograd as ag
from inkseg.tensor.nn import sinusoidal_table
from inkseg.training import batch_loss, training_targets

from gradcheck import TOL, numeric_grad, rel_error

VOCAB = Vocabulary("abc")


def toy_sample(p, chars, seed=0):
    rng = np.random.default_rng(seed)
    pts = np.cumsum(rng.normal(size=(p, 2)), axis=0)
    cut = p // 2
    ink = Ink.from_points([pts[:cut], pts[cut:]])
    c = len(chars)
    truth = np.minimum(np.arange(p) * c // p, c - 1)
    spikes = CtcSpikes(tuple((int(np.flatnonzero(truth == k)[-1]), ch) for k, ch in enumerate(chars)))
    return LabeledSample(ink, tuple(chars), spikes=spikes, truth=truth)


def model_gradcheck(kind, samples, **dims):
    model = build_model(kind, len(VOCAB), 3, dropout=0.0, **dims)
    model.eval()
    feats = featurize(samples, model.cfg.feature_mode, VOCAB, True)
    targets = [training_targets(model, s) for s in samples]
    named = list(model.named_parameters())

    def loss_value():
        with ag.no_grad():
            return float(batch_loss(model, samples, feats, targets, VOCAB, 0.1).data)

    model.zero_grad()
    ag.backward(batch_loss(model, samples, feats, targets, VOCAB, 0.1))
    numeric = numeric_grad(loss_value, [p.data for _, p in named])
    for (name, p), num in zip(named, numeric):
        got = p.grad if p.grad is not None else np.zeros_like(p.data)
        assert rel_error(got, num) < TOL, name


def test_bilstm_gradients():
    model_gradcheck("lstm", [toy_sample(6, "ab")], hidden_dim=3, layers=2)


def test_boundary_transformer_gradients():
    model_gradcheck("transformer", [toy_sample(8, "abc")], hidden_dim=4, heads=2, layers=2, ff_dim=6)


def test_charquery_gradients():
    model_gradcheck("charquery", [toy_sample(8, "abc")], hidden_dim=4, final_dim=3, heads=2,
                    encoder_layers=1, decoder_layers=1, ff_dim=5, max_chars=4)


def test_charquery_gradients_with_padding():
    model_gradcheck("charquery", [toy_sample(8, "abc"), toy_sample(5, "ba", seed=1)], hidden_dim=4,
                    final_dim=3, heads=2, encoder_layers=1, decoder_layers=1, ff_dim=5, max_chars=4)


# -- boundary tokens -------------------------------------------------------------

def test_decode_examples():
    assert list(decode_tokens([START, CHAR, START, CHAR], 2)) == [0, 0, 1, 1]
    assert list(decode_tokens([START, START, CHAR, START], 2)) == [0, 1, 1, NONE]
    assert list(decode_tokens([NONE_TOKEN, START, CHAR], 1)) == [NONE, 0, 0]
    # undersegmentation leaves trailing slots empty
    assert list(decode_tokens([START, CHAR, CHAR], 3)) == [0, 0, 0]
    # a NONE point does not close the open segment
    assert list(decode_tokens([START, NONE_TOKEN, CHAR], 1)) == [0, NONE, 0]


def test_targets_examples():
    assert list(boundary_targets([0, 0, 1, 1])) == [START, CHAR, START, CHAR]
    assert list(boundary_targets([0, 1, 1, 0])) == [START, START, CHAR, NONE_TOKEN]


def test_round_trip_on_monotone_segmentations():
    rng = np.random.default_rng(0)
    for _ in range(300):
        c = int(rng.integers(1, 10))
        sizes = rng.integers(1, 6, c)
        truth = np.repeat(np.arange(c), sizes)
        logits = np.eye(3)[boundary_targets(truth)] * 5.0
        np.testing.assert_array_equal(decode_boundaries(logits, c), truth)


def test_decode_never_exceeds_c():
    rng = np.random.default_rng(1)
    for _ in range(200):
        c = int(rng.integers(1, 6))
        seg = decode_boundaries(rng.normal(size=(int(rng.integers(1, 30)), 3)), c)
        assert seg.max() < c
        assert len(set(seg[seg != NONE])) <= c


@pytest.fixture(scope="module")
def corpus():
    return generate(preset("default", seed=9), 4)


def test_boundary_forward_shape_and_determinism(corpus):
    vocab = Vocabulary.from_corpus(corpus)
    s = corpus[0]
    for kind, mode in [("lstm", RECURRENT), ("transformer", ABSOLUTE)]:
        model = build_model(kind, len(vocab), 0, hidden_dim=8, heads=2, layers=1)
        f = extract_features(normalize_sample(s), mode, vocab)
        a = boundary_forward(f, model, s, vocab)
        b = boundary_forward(f, model, s, vocab)
        assert a.shape == (s.num_points, 3)
        np.testing.assert_array_equal(a, b)
        wrong = extract_features(normalize_sample(s), ABSOLUTE if mode == RECURRENT else RECURRENT, vocab)
        with pytest.raises(UsageError):
            boundary_forward(wrong, model, s, vocab)


def test_capacity_errors(corpus):
    vocab = Vocabulary.from_corpus(corpus)
    s = corpus[0]
    model = build_model("transformer", len(vocab), 0, hidden_dim=8, heads=2, layers=1, max_points=5)
    with pytest.raises(CapacityError):
        boundary_forward(extract_features(normalize_sample(s), ABSOLUTE, vocab), model, s, vocab)
    cq = build_model("charquery", len(vocab), 0, hidden_dim=8, heads=2, final_dim=8, encoder_layers=1,
                     decoder_layers=1, max_chars=2)
    with pytest.raises(CapacityError):
        charquery_forward(extract_features(normalize_sample(s), ABSOLUTE, vocab), s, cq, vocab)
    with pytest.raises(ParameterError):
        build_model("transformer", 4, 0, hidden_dim=10, heads=4)


def test_charquery_forward_shape(corpus):
    vocab = Vocabulary.from_corpus(corpus)
    s = corpus[1]
    model = build_model("charquery", len(vocab), 0, hidden_dim=8, heads=2, final_dim=6, encoder_layers=1,
                        decoder_layers=1)
    lg = charquery_forward(extract_features(normalize_sample(s), ABSOLUTE, vocab), s, model, vocab)
    assert lg.shape == (s.num_points, s.num_chars)
    probs = np.exp(lg - lg.max(1, keepdims=True))
    probs /= probs.sum(1, keepdims=True)
    np.testing.assert_allclose(probs.sum(1), 1.0, atol=1e-12)
    with pytest.raises(UsageError):
        charquery_forward(extract_features(normalize_sample(s), RECURRENT, vocab), s, model, vocab)


def test_query_rows():
    model = build_model("charquery", 5, 0, hidden_dim=8, heads=2, final_dim=8, encoder_layers=1,
                        decoder_layers=1)
    q = model.queries(np.array([[2, 2, 3]])).data[0]
    assert not np.allclose(q[0], q[1])  # same character, different position
    swapped = model.queries(np.array([[3, 2, 2]])).data[0]
    np.testing.assert_array_equal(swapped[1], q[1])
    assert not np.array_equal(swapped[0], q[0])
    with pytest.raises(InputError):
        model(featurize_batch(model, []))


def featurize_batch(model, chars):
    from inkseg.models.common import collate
    s = toy_sample(6, "ab")
    f = featurize([s], model.cfg.feature_mode, Vocabulary("ab"), True)
    b = collate([s], f, Vocabulary("ab"))
    b.char_ids = np.zeros((1, 0), dtype=np.int64)
    b.char_mask = np.zeros((1, 0), dtype=bool)
    return b


def test_charquery_segment():
    lg = np.array([[3.0, 0, 0], [0, 2, 0], [1, 1, 1], [0, 0, 9]])
    assert list(charquery_segment(lg)) == [0, 1, 0, 2]
    rng = np.random.default_rng(2)
    x = rng.normal(size=(10, 4))
    np.testing.assert_array_equal(charquery_segment(x), charquery_segment(x + rng.normal(size=(10, 1))))


def test_sinusoidal_values():
    pe = sinusoidal_table(50, 16)
    np.testing.assert_array_equal(pe[0, 0::2], 0.0)
    np.testing.assert_array_equal(pe[0, 1::2], 1.0)
    np.testing.assert_allclose(pe[:, 0], np.sin(np.arange(50)), atol=1e-12, rtol=0)
    big = sinusoidal_table(512, 256)
    assert np.all(np.abs(big) <= 1.0)
    i = 3
    np.testing.assert_allclose(pe[7, 2 * i + 1], np.cos(7 / 10000 ** (2 * i / 16)), atol=1e-12)
    with pytest.raises(ParameterError):
        sinusoidal_table(4, 7)


def test_pe_diagnostic():
    model = build_model("charquery", 5, 0, hidden_dim=8, heads=2, final_dim=8, encoder_layers=1,
                        decoder_layers=1, max_chars=20)
    rows = pe_diagnostic(model, 20)
    assert len(rows) == 20
    sin_means = sinusoidal_table(20, 8).mean(1)
    expected0 = (0.5 - sin_means.min()) / (sin_means.max() - sin_means.min())
    assert rows[0][1] == pytest.approx(expected0, abs=1e-12)
    csv = pe_diagnostic_csv(rows).splitlines()
    assert csv[0] == "pos,sinusoidal,learned" and len(csv) == 21
    assert mean_successive_difference([0, 1, 0]) == 1.0
    with pytest.raises(CapacityError):
        pe_diagnostic(model, 21)


def test_checkpoint_round_trip_and_batched_inference(tmp_path, corpus):
    vocab = Vocabulary.from_corpus(corpus)
    for kind in ("lstm", "transformer", "charquery"):
        model = build_model(kind, len(vocab), 1, hidden_dim=8, heads=2, layers=1, dropout=0.1) if kind != "charquery" \
            else build_model(kind, len(vocab), 1, hidden_dim=8, heads=2, final_dim=8, encoder_layers=1,
                             decoder_layers=1)
        save_model(tmp_path / kind, model, vocab)
        loaded, v2, meta = load_model(tmp_path / kind)
        assert v2 == vocab and meta["kind"] == kind
        a = predict_logits(model, vocab, corpus, batch_size=3)
        b = predict_logits(loaded, v2, corpus, batch_size=1)
        for x, y, s in zip(a, b, corpus):
            np.testing.assert_allclose(x, y, atol=1e-10)
            assert x.shape[0] == s.num_points
        segs = segment_with_model(loaded, v2, corpus)
        assert all(seg.shape == (s.num_points,) for seg, s in zip(segs, corpus))
