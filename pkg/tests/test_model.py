"""Forward-pass math against closed-form and brute-force oracles."""

import math

import numpy as np
import pytest

from ctikg.errors import ContextOverflowError, EmptySequenceError, ShapeError, VocabError
from ctikg.lm import LmConfig, init_params, gelu, layer_norm, multi_head_attention, \
    scaled_dot_attention, forward
from ctikg.lm.model import forward_cached, gelu_grad


def test_gelu_closed_form():
    # Direct evaluation of 0.5*x*(1 + tanh(sqrt(2/pi)*(x + 0.044715*x^3))).
    for x in (-3.0, -1.0, -0.5, 0.0, 0.5, 1.0, 3.0):
        inner = math.sqrt(2.0 / math.pi) * (x + 0.044715 * x**3)
        expected = 0.5 * x * (1.0 + math.tanh(inner))
        assert gelu(x) == pytest.approx(expected, abs=1e-12)


def test_gelu_fixed_points_and_asymptotes():
    assert gelu(0.0) == 0.0
    assert gelu(10.0) == pytest.approx(10.0, abs=1e-6)
    assert gelu(-10.0) == pytest.approx(0.0, abs=1e-6)


def test_gelu_grad_matches_finite_difference(rng):
    x = rng.normal(size=50)
    eps = 1e-6
    numeric = (gelu(x + eps) - gelu(x - eps)) / (2 * eps)
    assert np.allclose(gelu_grad(x), numeric, atol=1e-8)


def test_layer_norm_oracle(rng):
    x = rng.normal(size=(4, 7, 16), scale=3.0)
    gain = rng.normal(size=16)
    bias = rng.normal(size=16)
    out = layer_norm(x, gain, bias)
    mean = x.mean(axis=-1, keepdims=True)
    std = np.sqrt(x.var(axis=-1, keepdims=True) + 1e-5)
    assert np.allclose(out, gain * (x - mean) / std + bias)
    # normalized part has ~zero mean / unit variance per row
    normed = layer_norm(x, np.ones(16), np.zeros(16))
    assert np.allclose(normed.mean(axis=-1), 0.0, atol=1e-10)
    assert np.allclose(normed.var(axis=-1), 1.0, atol=1e-3)


def test_layer_norm_shape_mismatch():
    with pytest.raises(ShapeError):
        layer_norm(np.zeros((2, 4)), np.ones(5), np.zeros(5))


def test_attention_softmax_oracle(rng):
    Q = rng.normal(size=(5, 8))
    K = rng.normal(size=(5, 8))
    V = rng.normal(size=(5, 8))
    scores = Q @ K.T / math.sqrt(8)
    e = np.exp(scores - scores.max(axis=-1, keepdims=True))
    weights = e / e.sum(axis=-1, keepdims=True)
    assert np.allclose(scaled_dot_attention(Q, K, V), weights @ V)
    assert np.allclose(weights.sum(axis=-1), 1.0, atol=1e-6)


def test_attention_single_key_returns_v(rng):
    Q = rng.normal(size=(1, 8))
    K = rng.normal(size=(1, 8))
    V = rng.normal(size=(1, 8))
    assert np.allclose(scaled_dot_attention(Q, K, V), V)


def test_attention_uniform_when_keys_identical(rng):
    K = np.tile(rng.normal(size=8), (6, 1))
    Q = rng.normal(size=(6, 8))
    V = rng.normal(size=(6, 8))
    assert np.allclose(scaled_dot_attention(Q, K, V), np.tile(V.mean(axis=0), (6, 1)))


def test_attention_rejects_empty_and_mismatched():
    with pytest.raises(EmptySequenceError):
        scaled_dot_attention(np.zeros((0, 4)), np.zeros((0, 4)), np.zeros((0, 4)))
    with pytest.raises(ShapeError):
        scaled_dot_attention(np.zeros((3, 4)), np.zeros((2, 4)), np.zeros((2, 4)))


def test_causal_masking_is_exact_zero(rng):
    # With a causal mask, position t must be bitwise independent of tokens > t.
    cfg = LmConfig(vocab_size=50, context_length=16, n_layers=2, d_model=16,
                   n_heads=2, dropout=0.0, seed=0)
    params = init_params(cfg)
    ids = rng.integers(0, 50, size=10)
    base = forward(params, ids)
    for t in range(1, 10):
        perturbed = ids.copy()
        perturbed[t:] = rng.integers(0, 50, size=10 - t)
        other = forward(params, perturbed)
        assert np.array_equal(base[:t], other[:t])


def test_multi_head_matches_per_head_oracle(rng):
    # Manually split heads, run single-head attention per head, re-project.
    cfg = LmConfig(vocab_size=10, context_length=8, n_layers=1, d_model=16,
                   n_heads=4, dropout=0.0, seed=3)
    layer = init_params(cfg).layers[0]
    x = rng.normal(size=(6, 16)).astype(np.float32)
    out = multi_head_attention(x, layer, cfg.n_heads)

    qkv = x @ layer.w_qkv + layer.b_qkv
    q, k, v = qkv[:, :16], qkv[:, 16:32], qkv[:, 32:]
    d = cfg.d_head
    heads = []
    for h in range(4):
        sl = slice(h * d, (h + 1) * d)
        scores = q[:, sl] @ k[:, sl].T / math.sqrt(d)
        scores = np.where(np.tril(np.ones((6, 6), dtype=bool)), scores, -np.inf)
        e = np.exp(scores - scores.max(axis=-1, keepdims=True))
        w = e / e.sum(axis=-1, keepdims=True)
        heads.append(w @ v[:, sl])
    expected = np.concatenate(heads, axis=-1) @ layer.w_proj + layer.b_proj
    assert np.allclose(out, expected, atol=1e-5)


def test_forward_shapes_and_validation(tiny_params, tiny_config):
    logits = forward(tiny_params, [1, 2, 3])
    assert logits.shape == (3, tiny_config.vocab_size)
    with pytest.raises(EmptySequenceError):
        forward(tiny_params, [])
    with pytest.raises(ContextOverflowError):
        forward(tiny_params, list(range(3)) * 30)
    with pytest.raises(VocabError):
        forward(tiny_params, [tiny_config.vocab_size + 1])


def test_dropout_only_active_in_training(tiny_config):
    cfg = LmConfig(**{**tiny_config.to_dict(), "dropout": 0.5})
    params = init_params(cfg)
    ids = np.array([[1, 2, 3, 4]])
    eval_a, _ = forward_cached(params, ids, train=False)
    eval_b, _ = forward_cached(params, ids, train=False)
    assert np.array_equal(eval_a, eval_b)
    rng = np.random.default_rng(0)
    train_a, _ = forward_cached(params, ids, train=True, rng=rng)
    train_b, _ = forward_cached(params, ids, train=True, rng=rng)
    assert not np.array_equal(train_a, train_b)


def test_config_validation():
    with pytest.raises(ValueError):
        LmConfig(vocab_size=10, d_model=30, n_heads=4)
    with pytest.raises(ValueError):
        LmConfig(vocab_size=1)
    with pytest.raises(ValueError):
        LmConfig(vocab_size=10, dropout=1.0)
    cfg = LmConfig(vocab_size=10, d_model=32, n_heads=4)
    assert cfg.d_ff == 128 and cfg.d_head == 8
