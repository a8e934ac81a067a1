"""Decoder-only transformer: forward pass and reverse-mode gradients.

Everything is plain numpy. The forward pass records the intermediates the
backward pass needs; `loss_and_grads` in train.py drives both. Block order
is pre-norm: x + attn(ln1(x)), then x + ffn(ln2(x)), final layer norm, and
a tied output head (logits = h @ token_embedding.T).
"""

from __future__ import annotations

import math

import numpy as np

from ctikg.errors import ContextOverflowError, EmptySequenceError, ShapeError, VocabError
from ctikg.lm.params import LayerParams, LmParams

LN_EPS = 1e-5
_GELU_C = math.sqrt(2.0 / math.pi)
_GELU_A = 0.044715


def gelu(x):
    """tanh-approximation GELU: 0.5*x*(1 + tanh(c*(x + 0.044715*x^3)))."""
    x = np.asarray(x)
    return 0.5 * x * (1.0 + np.tanh(_GELU_C * (x + _GELU_A * x**3)))


def gelu_grad(x):
    x = np.asarray(x)
    t = np.tanh(_GELU_C * (x + _GELU_A * x**3))
    return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t**2) * _GELU_C * (1.0 + 3.0 * _GELU_A * x**2)


def layer_norm(x, gain, bias, eps: float = LN_EPS):
    """Normalize the last axis to zero mean / unit variance, then affine."""
    x, gain, bias = np.asarray(x), np.asarray(gain), np.asarray(bias)
    if x.shape[-1] != gain.shape[-1] or gain.shape != bias.shape:
        raise ShapeError(
            f"layer_norm dims disagree: x {x.shape}, gain {gain.shape}, bias {bias.shape}"
        )
    mean = x.mean(axis=-1, keepdims=True)
    var = x.var(axis=-1, keepdims=True)
    xhat = (x - mean) / np.sqrt(var + eps)
    return gain * xhat + bias


def _layer_norm_fwd(x, gain, bias, eps: float = LN_EPS):
    mean = x.mean(axis=-1, keepdims=True)
    var = x.var(axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x - mean) * inv_std
    return gain * xhat + bias, (xhat, inv_std, gain)


def _layer_norm_bwd(dy, cache):
    xhat, inv_std, gain = cache
    axes = tuple(range(dy.ndim - 1))
    dgain = (dy * xhat).sum(axis=axes)
    dbias = dy.sum(axis=axes)
    dxhat = dy * gain
    dx = inv_std * (
        dxhat
        - dxhat.mean(axis=-1, keepdims=True)
        - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)
    )
    return dx, dgain, dbias


def _causal_softmax(scores, causal: bool):
    """Row softmax over the last axis; future positions get exactly zero weight."""
    T = scores.shape[-1]
    if causal:
        mask = np.tril(np.ones((T, T), dtype=bool))
        scores = np.where(mask, scores, -np.inf)
    scores = scores - scores.max(axis=-1, keepdims=True)
    w = np.exp(scores)
    return w / w.sum(axis=-1, keepdims=True)


def scaled_dot_attention(Q, K, V, causal: bool = False):
    """softmax(Q K^T / sqrt(d_k)) V over [T, d] matrices."""
    Q, K, V = np.asarray(Q), np.asarray(K), np.asarray(V)
    if Q.shape[0] == 0:
        raise EmptySequenceError("attention over an empty sequence")
    if Q.shape != K.shape or K.shape[0] != V.shape[0]:
        raise ShapeError(f"attention shapes disagree: Q {Q.shape}, K {K.shape}, V {V.shape}")
    scores = Q @ K.T / math.sqrt(Q.shape[-1])
    return _causal_softmax(scores, causal) @ V


def _attention_fwd(q, k, v, causal: bool = True):
    # q, k, v: [B, H, T, d_head]
    scale = 1.0 / math.sqrt(q.shape[-1])
    att = _causal_softmax(np.einsum("bhtd,bhsd->bhts", q, k) * scale, causal)
    y = np.einsum("bhts,bhsd->bhtd", att, v)
    return y, (q, k, v, att, scale)


def _attention_bwd(dy, cache):
    q, k, v, att, scale = cache
    datt = np.einsum("bhtd,bhsd->bhts", dy, v)
    dv = np.einsum("bhts,bhtd->bhsd", att, dy)
    ds = att * (datt - (datt * att).sum(axis=-1, keepdims=True))
    dq = np.einsum("bhts,bhsd->bhtd", ds, k) * scale
    dk = np.einsum("bhts,bhtd->bhsd", ds, q) * scale
    return dq, dk, dv


def _split_heads(x, n_heads):
    B, T, D = x.shape
    return x.reshape(B, T, n_heads, D // n_heads).transpose(0, 2, 1, 3)


def _merge_heads(x):
    B, H, T, d = x.shape
    return x.transpose(0, 2, 1, 3).reshape(B, T, H * d)


def multi_head_attention(x, layer: LayerParams, n_heads: int, context_length: int | None = None):
    """Causal multi-head attention over a single [T, d_model] input.

    Applies the qkv and output projections of `layer`; no layer norm or
    residual (those live in the block).
    """
    x = np.asarray(x)
    T = x.shape[0]
    if T == 0:
        raise EmptySequenceError("attention over an empty sequence")
    if context_length is not None and T > context_length:
        raise ContextOverflowError(f"sequence length {T} exceeds context {context_length}")
    qkv = x[None] @ layer.w_qkv + layer.b_qkv
    D = x.shape[-1]
    q, k, v = (_split_heads(qkv[..., i * D:(i + 1) * D], n_heads) for i in range(3))
    y, _ = _attention_fwd(q, k, v, causal=True)
    return (_merge_heads(y) @ layer.w_proj + layer.b_proj)[0]


def _dropout_mask(rng, shape, p, dtype):
    # Inverted dropout: scale kept units by 1/(1-p).
    return (rng.random(shape) >= p).astype(dtype) / (1.0 - p)


def forward_cached(params: LmParams, ids: np.ndarray, *, train: bool = False, rng=None):
    """Batched forward over [B, T] token ids; returns (logits, cache)."""
    cfg = params.config
    ids = np.asarray(ids)
    if ids.ndim != 2 or ids.shape[1] == 0:
        raise EmptySequenceError("forward needs a non-empty [B, T] id batch")
    B, T = ids.shape
    if T > cfg.context_length:
        raise ContextOverflowError(f"sequence length {T} exceeds context {cfg.context_length}")
    if ids.min() < 0 or ids.max() >= cfg.vocab_size:
        raise VocabError(f"token id out of range [0, {cfg.vocab_size})")

    use_dropout = train and cfg.dropout > 0.0 and rng is not None
    dtype = params.token_embedding.dtype

    x = params.token_embedding[ids] + params.positional_embedding[:T]
    layer_caches = []
    for layer in params.layers:
        a, ln1_cache = _layer_norm_fwd(x, layer.ln1_gain, layer.ln1_bias)
        qkv = a @ layer.w_qkv + layer.b_qkv
        D = cfg.d_model
        q, k, v = (_split_heads(qkv[..., i * D:(i + 1) * D], cfg.n_heads) for i in range(3))
        heads, att_cache = _attention_fwd(q, k, v, causal=True)
        merged = _merge_heads(heads)
        attn_out = merged @ layer.w_proj + layer.b_proj
        attn_mask = _dropout_mask(rng, attn_out.shape, cfg.dropout, dtype) if use_dropout else None
        if attn_mask is not None:
            attn_out = attn_out * attn_mask
        x1 = x + attn_out

        f, ln2_cache = _layer_norm_fwd(x1, layer.ln2_gain, layer.ln2_bias)
        h_pre = f @ layer.w_ffn_in + layer.b_ffn_in
        h = gelu(h_pre)
        ffn_out = h @ layer.w_ffn_out + layer.b_ffn_out
        ffn_mask = _dropout_mask(rng, ffn_out.shape, cfg.dropout, dtype) if use_dropout else None
        if ffn_mask is not None:
            ffn_out = ffn_out * ffn_mask
        x2 = x1 + ffn_out

        layer_caches.append((a, ln1_cache, att_cache, merged, attn_mask,
                             f, ln2_cache, h_pre, h, ffn_mask))
        x = x2

    h_final, lnf_cache = _layer_norm_fwd(x, params.lnf_gain, params.lnf_bias)
    logits = h_final @ params.token_embedding.T
    cache = (ids, layer_caches, h_final, lnf_cache)
    return logits, cache


def backward(params: LmParams, cache, dlogits: np.ndarray) -> dict[str, np.ndarray]:
    """Reverse-mode pass; returns gradients keyed like named_tensors()."""
    cfg = params.config
    ids, layer_caches, h_final, lnf_cache = cache
    T = ids.shape[1]

    grads = {name: np.zeros_like(t) for name, t in params.named_tensors().items()}

    # Tied head: logits = h_final @ E^T
    grads["token_embedding"] += np.einsum("btv,btd->vd", dlogits, h_final)
    dh_final = dlogits @ params.token_embedding

    dx, dg, db = _layer_norm_bwd(dh_final, lnf_cache)
    grads["lnf_gain"] += dg
    grads["lnf_bias"] += db

    for i in reversed(range(cfg.n_layers)):
        layer = params.layers[i]
        (a, ln1_cache, att_cache, merged, attn_mask,
         f, ln2_cache, h_pre, h, ffn_mask) = layer_caches[i]
        p = f"layers.{i}."

        # x2 = x1 + dropout(ffn_out)
        dffn_out = dx if ffn_mask is None else dx * ffn_mask
        grads[p + "b_ffn_out"] += dffn_out.sum(axis=(0, 1))
        grads[p + "w_ffn_out"] += np.einsum("btf,btd->fd", h, dffn_out)
        dh = dffn_out @ layer.w_ffn_out.T
        dh_pre = dh * gelu_grad(h_pre)
        grads[p + "b_ffn_in"] += dh_pre.sum(axis=(0, 1))
        grads[p + "w_ffn_in"] += np.einsum("btd,btf->df", f, dh_pre)
        df = dh_pre @ layer.w_ffn_in.T
        dx1_from_ln, dg, db = _layer_norm_bwd(df, ln2_cache)
        grads[p + "ln2_gain"] += dg
        grads[p + "ln2_bias"] += db
        dx1 = dx + dx1_from_ln

        # x1 = x + dropout(attn_out)
        dattn_out = dx1 if attn_mask is None else dx1 * attn_mask
        grads[p + "b_proj"] += dattn_out.sum(axis=(0, 1))
        grads[p + "w_proj"] += np.einsum("btd,bte->de", merged, dattn_out)
        dmerged = dattn_out @ layer.w_proj.T
        B = dmerged.shape[0]
        dheads = dmerged.reshape(B, T, cfg.n_heads, cfg.d_head).transpose(0, 2, 1, 3)
        dq, dk, dv = _attention_bwd(dheads, att_cache)
        dqkv = np.concatenate([_merge_heads(g) for g in (dq, dk, dv)], axis=-1)
        grads[p + "b_qkv"] += dqkv.sum(axis=(0, 1))
        grads[p + "w_qkv"] += np.einsum("btd,bte->de", a, dqkv)
        da = dqkv @ layer.w_qkv.T
        dx_from_ln, dg, db = _layer_norm_bwd(da, ln1_cache)
        grads[p + "ln1_gain"] += dg
        grads[p + "ln1_bias"] += db
        dx = dx1 + dx_from_ln

    # x0 = token_embedding[ids] + positional_embedding[:T]
    np.add.at(grads["token_embedding"], ids, dx)
    grads["positional_embedding"][:T] += dx.sum(axis=0)
    return grads


def forward(params: LmParams, token_ids) -> np.ndarray:
    """Inference logits for one sequence: [T] ids -> [T, vocab_size]."""
    ids = np.asarray(token_ids, dtype=np.int64)
    if ids.ndim != 1 or ids.shape[0] == 0:
        raise EmptySequenceError("forward needs a non-empty id sequence")
    logits, _ = forward_cached(params, ids[None, :], train=False)
    return logits[0]
