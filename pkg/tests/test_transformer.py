"""Tokenizer, encoder blocks, stage fusion and the classification head."""

import numpy as np
import pytest

from hsinet import tensor as T
from hsinet.errors import ConfigError, ShapeError
from hsinet.gradcheck import grad_check
from hsinet.tensor import Tensor
from hsinet.transformer import ClassHead, Encoder, StageFusion, Tokenizer


def rng_of(seed):
    return np.random.default_rng(seed)


def tf32(arr):
    return Tensor(np.asarray(arr, dtype=np.float32))


# -- tokenizer -------------------------------------------------------------------


def test_token_count_and_width():
    tok = Tokenizer(4, 3, rng_of(0))
    out = tok.forward(tf32(rng_of(1).standard_normal((2, 4, 3, 3))))
    assert out.shape == (2, 10, 4)  # 9 spatial tokens + 1 class token
    big = Tokenizer(64, 19, rng_of(2))
    assert big.forward(tf32(np.zeros((1, 64, 19, 19)))).shape == (1, 362, 64)


def test_zero_input_yields_positions():
    tok = Tokenizer(4, 3, rng_of(3))
    tok.cls.data = np.zeros_like(tok.cls.data)
    out = tok.forward(tf32(np.zeros((1, 4, 3, 3))))
    np.testing.assert_allclose(out.data[0], tok.pos.data, atol=1e-7)


def test_row_major_token_order():
    tok = Tokenizer(2, 3, rng_of(4))
    tok.cls.data = np.zeros_like(tok.cls.data)
    tok.pos.data = np.zeros_like(tok.pos.data)
    feats = np.zeros((1, 2, 3, 3), dtype=np.float32)
    feats[0, :, 1, 2] = [5.0, 7.0]  # row 1, col 2
    out = tok.forward(tf32(feats)).data[0]
    k = 1 + 1 * 3 + 2  # cls offset + row*P + col
    np.testing.assert_array_equal(out[k], [5.0, 7.0])
    mask = np.ones(10, dtype=bool)
    mask[k] = False
    np.testing.assert_array_equal(out[mask], 0)


def test_tokenizer_shape_errors():
    tok = Tokenizer(4, 3, rng_of(5))
    with pytest.raises(ShapeError):
        tok.forward(tf32(np.zeros((1, 4, 5, 5))))
    with pytest.raises(ShapeError):
        tok.forward(tf32(np.zeros((1, 8, 3, 3))))


# -- encoder ------------------------------------------------------------------------


def test_encoder_preserves_shape():
    enc = Encoder(8, 2, 16, rng_of(6))
    x = tf32(rng_of(7).standard_normal((2, 5, 8)))
    assert enc.forward(x).shape == (2, 5, 8)


def test_head_count_must_divide_width():
    with pytest.raises(ConfigError):
        Encoder(8, 3, 16, rng_of(8))


def test_zeroed_projections_make_identity():
    enc = Encoder(8, 2, 16, rng_of(9))
    for lin in (enc.wo, enc.fc2):
        lin.weight.data = np.zeros_like(lin.weight.data)
        lin.bias.data = np.zeros_like(lin.bias.data)
    x = tf32(rng_of(10).standard_normal((2, 5, 8)))
    np.testing.assert_allclose(enc.forward(x).data, x.data, atol=1e-6)


def test_permutation_equivariance_of_tokens():
    enc = Encoder(8, 2, 16, rng_of(11)).eval()  # no dropout
    x = rng_of(12).standard_normal((1, 6, 8)).astype(np.float32)
    base = enc.forward(tf32(x)).data
    perm = np.concatenate([[0], 1 + rng_of(13).permutation(5)])  # cls stays put
    permuted = enc.forward(tf32(x[:, perm])).data
    np.testing.assert_allclose(permuted, base[:, perm], atol=1e-5)


def test_dropout_only_in_training_with_rng():
    enc = Encoder(8, 2, 16, rng_of(14), drop=0.5)
    x = tf32(rng_of(15).standard_normal((1, 4, 8)))
    enc.eval()
    np.testing.assert_array_equal(enc.forward(x, rng_of(0)).data, enc.forward(x, rng_of(99)).data)
    enc.train()
    a = enc.forward(x, np.random.default_rng(0)).data
    b = enc.forward(x, np.random.default_rng(0)).data
    c = enc.forward(x, np.random.default_rng(5)).data
    np.testing.assert_array_equal(a, b)  # same stream, same mask
    assert np.abs(a - c).max() > 0
    np.testing.assert_array_equal(enc.forward(x).data, enc.forward(x).data)  # no rng: disabled


def test_encoder_gradients():
    enc = Encoder(4, 2, 8, rng_of(16)).to_dtype(np.float64)
    x = Tensor(np.random.default_rng(17).standard_normal((2, 4, 4)), requires_grad=True)
    params = [("x", x)] + list(enc.named_parameters())
    worst = grad_check(lambda: enc.forward(x), params, threshold=1e-4)
    assert worst < 1e-4


# -- stage fusion --------------------------------------------------------------------


def test_uniform_logits_average_two_sources():
    fusion = StageFusion(2)
    a = tf32(np.full((1, 3, 2), 2.0))
    b = tf32(np.full((1, 3, 2), 4.0))
    out = fusion.fuse([a, b])
    np.testing.assert_allclose(out.data, 3.0, atol=1e-6)


def test_dominant_logit_selects_its_source():
    fusion = StageFusion(2)
    fusion.logits.data = np.array([50.0, 0.0], dtype=np.float32)
    a = tf32(rng_of(18).standard_normal((1, 3, 2)))
    b = tf32(rng_of(19).standard_normal((1, 3, 2)))
    np.testing.assert_allclose(fusion.fuse([a, b]).data, a.data, atol=1e-6)


def test_three_source_fusion_matches_direct_sum():
    fusion = StageFusion(3)
    fusion.logits.data = np.array([0.3, -1.2, 0.8], dtype=np.float32)
    sources = [rng_of(20 + i).standard_normal((2, 4, 3)) for i in range(3)]
    e = np.exp(fusion.logits.data.astype(np.float64))
    alphas = e / e.sum()
    want = sum(al * s for al, s in zip(alphas, sources))
    got = fusion.fuse([tf32(s) for s in sources])
    np.testing.assert_allclose(got.data, want, atol=1e-6)


def test_fusion_stays_in_convex_hull():
    for seed in range(10):
        fusion = StageFusion(3)
        fusion.logits.data = rng_of(seed).standard_normal(3).astype(np.float32) * 3
        sources = [rng_of(100 + seed * 3 + i).standard_normal((2, 3, 4)) for i in range(3)]
        fused = fusion.fuse([tf32(s) for s in sources]).data
        lo = np.minimum.reduce(sources)
        hi = np.maximum.reduce(sources)
        assert np.all(fused >= lo - 1e-6) and np.all(fused <= hi + 1e-6)


def test_fusion_weights_normalized():
    fusion = StageFusion(4)
    fusion.logits.data = np.array([3.0, -2.0, 0.5, 1.0], dtype=np.float32)
    w = fusion.fusion_weights().data
    assert np.all(w >= 0)
    assert w.sum() == pytest.approx(1.0, abs=1e-6)


def test_fusion_source_count_enforced():
    fusion = StageFusion(2)
    with pytest.raises(ConfigError):
        fusion.fuse([tf32(np.zeros((1, 2, 2)))])
    with pytest.raises(ConfigError):
        StageFusion(0)


def test_fusion_gradients():
    fusion = StageFusion(3)
    fusion.to_dtype(np.float64)
    fusion.logits.data = np.array([0.2, -0.4, 0.9])
    sources = [
        Tensor(np.random.default_rng(30 + i).standard_normal((2, 3, 2)), requires_grad=True)
        for i in range(3)
    ]
    params = [("logits", fusion.logits)] + [(f"s{i}", s) for i, s in enumerate(sources)]
    worst = grad_check(lambda: fusion.fuse(sources), params, threshold=1e-4)
    assert worst < 1e-4


# -- classification head ------------------------------------------------------------------


def test_zero_head_emits_bias():
    head = ClassHead(4, 3, rng_of(21))
    head.fc.weight.data = np.zeros_like(head.fc.weight.data)
    head.fc.bias.data = np.array([0.1, 0.5, -0.2], dtype=np.float32)
    out = head.forward(tf32(rng_of(22).standard_normal((2, 6, 4))))
    np.testing.assert_allclose(out.data, np.tile([0.1, 0.5, -0.2], (2, 1)), atol=1e-7)
    assert np.argmax(out.data, axis=1).tolist() == [1, 1]


def test_head_reads_only_class_token():
    head = ClassHead(4, 3, rng_of(23))
    seq = rng_of(24).standard_normal((2, 6, 4)).astype(np.float32)
    base = head.forward(tf32(seq)).data
    seq[:, 5] += 10.0  # spatial token, invisible to the head
    np.testing.assert_array_equal(head.forward(tf32(seq)).data, base)
    seq[:, 0, 2] += 1.0  # single feature: survives the layer-norm centering
    assert np.abs(head.forward(tf32(seq)).data - base).max() > 0


def test_head_needs_two_classes():
    with pytest.raises(ConfigError):
        ClassHead(4, 1, rng_of(25))


def test_head_gradients():
    head = ClassHead(4, 3, rng_of(26)).to_dtype(np.float64)
    x = Tensor(np.random.default_rng(27).standard_normal((2, 5, 4)), requires_grad=True)
    params = [("x", x)] + list(head.named_parameters())
    worst = grad_check(lambda: head.forward(x), params, threshold=1e-4)
    assert worst < 1e-4
