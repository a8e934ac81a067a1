"""Model shape configuration and validation."""

from __future__ import annotations

from dataclasses import dataclass, asdict


@dataclass(frozen=True)
class LmConfig:
    vocab_size: int
    context_length: int = 128
    n_layers: int = 4
    d_model: int = 128
    n_heads: int = 4
    d_ff: int | None = None  # defaults to 4 * d_model
    dropout: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if self.d_ff is None:
            object.__setattr__(self, "d_ff", 4 * self.d_model)
        if self.vocab_size < 2:
            raise ValueError(f"vocab_size must be >= 2, got {self.vocab_size}")
        if self.context_length < 1:
            raise ValueError(f"context_length must be >= 1, got {self.context_length}")
        if self.n_layers < 1:
            raise ValueError(f"n_layers must be >= 1, got {self.n_layers}")
        if self.d_model % self.n_heads != 0:
            raise ValueError(
                f"d_model ({self.d_model}) must be divisible by n_heads "
                f"({self.n_heads}) so the head dimension is integral"
            )
        if self.d_ff != 4 * self.d_model:
            raise ValueError(f"d_ff must equal 4 * d_model, got {self.d_ff}")
        if not (0.0 <= self.dropout < 1.0):
            raise ValueError(f"dropout must be in [0, 1), got {self.dropout}")

    @property
    def d_head(self) -> int:
        return self.d_model // self.n_heads

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "LmConfig":
        return cls(**d)


# Small default that keeps training runs under minutes on a laptop CPU.
def DESK_SCALE(vocab_size: int, *, seed: int = 0, dropout: float = 0.0) -> LmConfig:
    return LmConfig(
        vocab_size=vocab_size,
        context_length=128,
        n_layers=4,
        d_model=128,
        n_heads=4,
        dropout=dropout,
        seed=seed,
    )


# The published 117M-parameter shape. The width is 768: the reported "786"
# with 12 heads would give a fractional head dimension, so we treat it as a
# transposition typo. Representable, not a training default.
def PAPER_117M(vocab_size: int = 50257, *, seed: int = 0) -> LmConfig:
    return LmConfig(
        vocab_size=vocab_size,
        context_length=1024,
        n_layers=12,
        d_model=768,
        n_heads=12,
        dropout=0.1,
        seed=seed,
    )
