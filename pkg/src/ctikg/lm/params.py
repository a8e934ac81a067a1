"""Parameter container for the decoder-only transformer.

The output head is tied to the token embedding, so there is no separate
head matrix. All tensors are plain numpy arrays; dtype is float32 for
training and float64 for gradient checking.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ctikg.errors import ShapeError
from ctikg.lm.config import LmConfig


@dataclass
class LayerParams:
    ln1_gain: np.ndarray
    ln1_bias: np.ndarray
    w_qkv: np.ndarray  # [d_model, 3*d_model]
    b_qkv: np.ndarray
    w_proj: np.ndarray  # [d_model, d_model]
    b_proj: np.ndarray
    ln2_gain: np.ndarray
    ln2_bias: np.ndarray
    w_ffn_in: np.ndarray  # [d_model, d_ff]
    b_ffn_in: np.ndarray
    w_ffn_out: np.ndarray  # [d_ff, d_model]
    b_ffn_out: np.ndarray


@dataclass
class LmParams:
    config: LmConfig
    token_embedding: np.ndarray  # [vocab_size, d_model]; also the output head
    positional_embedding: np.ndarray  # [context_length, d_model]
    layers: list[LayerParams] = field(default_factory=list)
    lnf_gain: np.ndarray = None
    lnf_bias: np.ndarray = None

    def named_tensors(self) -> dict[str, np.ndarray]:
        out = {
            "token_embedding": self.token_embedding,
            "positional_embedding": self.positional_embedding,
            "lnf_gain": self.lnf_gain,
            "lnf_bias": self.lnf_bias,
        }
        for i, layer in enumerate(self.layers):
            for name in vars(layer):
                out[f"layers.{i}.{name}"] = getattr(layer, name)
        return out

    def set_tensor(self, name: str, value: np.ndarray) -> None:
        if name.startswith("layers."):
            _, idx, attr = name.split(".", 2)
            setattr(self.layers[int(idx)], attr, value)
        else:
            setattr(self, name, value)

    def copy(self) -> "LmParams":
        c = LmParams(
            config=self.config,
            token_embedding=self.token_embedding.copy(),
            positional_embedding=self.positional_embedding.copy(),
            layers=[],
            lnf_gain=self.lnf_gain.copy(),
            lnf_bias=self.lnf_bias.copy(),
        )
        for layer in self.layers:
            c.layers.append(
                LayerParams(**{k: v.copy() for k, v in vars(layer).items()})
            )
        return c

    def astype(self, dtype) -> "LmParams":
        c = self.copy()
        for name, t in c.named_tensors().items():
            c.set_tensor(name, t.astype(dtype))
        return c

    def check_shapes(self) -> None:
        cfg = self.config
        expect = expected_shapes(cfg)
        for name, t in self.named_tensors().items():
            if tuple(t.shape) != expect[name]:
                raise ShapeError(
                    f"tensor {name!r} has shape {tuple(t.shape)}, "
                    f"expected {expect[name]}"
                )

    def check_finite(self) -> None:
        for name, t in self.named_tensors().items():
            if not np.all(np.isfinite(t)):
                raise ShapeError(f"tensor {name!r} contains NaN/Inf")

    def equals(self, other: "LmParams") -> bool:
        mine, theirs = self.named_tensors(), other.named_tensors()
        if mine.keys() != theirs.keys():
            return False
        return all(np.array_equal(mine[k], theirs[k]) for k in mine)


def expected_shapes(cfg: LmConfig) -> dict[str, tuple[int, ...]]:
    d, f = cfg.d_model, cfg.d_ff
    shapes = {
        "token_embedding": (cfg.vocab_size, d),
        "positional_embedding": (cfg.context_length, d),
        "lnf_gain": (d,),
        "lnf_bias": (d,),
    }
    per_layer = {
        "ln1_gain": (d,),
        "ln1_bias": (d,),
        "w_qkv": (d, 3 * d),
        "b_qkv": (3 * d,),
        "w_proj": (d, d),
        "b_proj": (d,),
        "ln2_gain": (d,),
        "ln2_bias": (d,),
        "w_ffn_in": (d, f),
        "b_ffn_in": (f,),
        "w_ffn_out": (f, d),
        "b_ffn_out": (d,),
    }
    for i in range(cfg.n_layers):
        for k, v in per_layer.items():
            shapes[f"layers.{i}.{k}"] = v
    return shapes


def init_params(cfg: LmConfig, dtype=np.float32) -> LmParams:
    """Seeded Gaussian init: weights N(0, 0.02), gains 1, biases 0."""
    rng = np.random.default_rng(cfg.seed)
    d, f = cfg.d_model, cfg.d_ff

    def w(*shape):
        return (rng.standard_normal(shape) * 0.02).astype(dtype)

    def zeros(*shape):
        return np.zeros(shape, dtype=dtype)

    def ones(*shape):
        return np.ones(shape, dtype=dtype)

    params = LmParams(
        config=cfg,
        token_embedding=w(cfg.vocab_size, d),
        positional_embedding=(rng.standard_normal((cfg.context_length, d)) * 0.01).astype(dtype),
        layers=[],
        lnf_gain=ones(d),
        lnf_bias=zeros(d),
    )
    for _ in range(cfg.n_layers):
        params.layers.append(
            LayerParams(
                ln1_gain=ones(d),
                ln1_bias=zeros(d),
                w_qkv=w(d, 3 * d),
                b_qkv=zeros(3 * d),
                w_proj=w(d, d),
                b_proj=zeros(d),
                ln2_gain=ones(d),
                ln2_bias=zeros(d),
                w_ffn_in=w(d, f),
                b_ffn_in=zeros(f),
                w_ffn_out=w(f, d),
                b_ffn_out=zeros(d),
            )
        )
    return params
