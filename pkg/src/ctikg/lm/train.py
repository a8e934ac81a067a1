"""Training state, cross-entropy loss with gradients, and the Adam step."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ctikg.errors import EmptySequenceError, NonFiniteGradientError
from ctikg.lm.model import backward, forward_cached
from ctikg.lm.params import LmParams

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


@dataclass
class TrainState:
    params: LmParams
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0
    rng: np.random.Generator = None

    @classmethod
    def new(cls, params: LmParams, seed: int | None = None) -> "TrainState":
        if seed is None:
            seed = params.config.seed
        tensors = params.named_tensors()
        return cls(
            params=params,
            m={k: np.zeros_like(t) for k, t in tensors.items()},
            v={k: np.zeros_like(t) for k, t in tensors.items()},
            step=0,
            rng=np.random.default_rng(seed),
        )

    def copy(self) -> "TrainState":
        c = TrainState(
            params=self.params.copy(),
            m={k: t.copy() for k, t in self.m.items()},
            v={k: t.copy() for k, t in self.v.items()},
            step=self.step,
            rng=np.random.default_rng(),
        )
        c.rng.bit_generator.state = self.rng.bit_generator.state
        return c


def _group_by_length(batch) -> dict[int, np.ndarray]:
    groups: dict[int, list] = {}
    for seq in batch:
        seq = np.asarray(seq, dtype=np.int64)
        if seq.ndim != 1 or len(seq) < 2:
            raise EmptySequenceError("each batch sequence needs length >= 2 for next-token targets")
        groups.setdefault(len(seq), []).append(seq)
    return {n: np.stack(seqs) for n, seqs in groups.items()}


def loss_and_grads(params: LmParams, batch, *, train: bool = False, rng=None):
    """Mean next-token cross-entropy over the batch, plus per-tensor grads.

    `batch` is an iterable of token-id sequences (each length >= 2); unequal
    lengths are handled by grouping. The mean is over all predicted token
    positions; loss accumulates in float64.
    """
    groups = _group_by_length(batch)
    if not groups:
        raise EmptySequenceError("empty batch")
    total_tokens = sum(arr.shape[0] * (arr.shape[1] - 1) for arr in groups.values())

    grads = None
    loss_sum = 0.0
    for arr in groups.values():
        ids, targets = arr[:, :-1], arr[:, 1:]
        logits, cache = forward_cached(params, ids, train=train, rng=rng)
        # Stable log-softmax; NLL summed in float64.
        shifted = logits - logits.max(axis=-1, keepdims=True)
        logsumexp = np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
        log_probs = shifted - logsumexp
        picked = np.take_along_axis(log_probs, targets[..., None], axis=-1)[..., 0]
        loss_sum += -picked.astype(np.float64).sum()

        probs = np.exp(log_probs)
        dlogits = probs
        np.put_along_axis(
            dlogits, targets[..., None],
            np.take_along_axis(dlogits, targets[..., None], axis=-1) - 1.0, axis=-1,
        )
        dlogits = (dlogits / total_tokens).astype(logits.dtype)
        g = backward(params, cache, dlogits)
        if grads is None:
            grads = g
        else:
            for k in grads:
                grads[k] += g[k]

    return loss_sum / total_tokens, grads


def train_step(state: TrainState, batch, lr: float) -> float:
    """One Adam update in place; returns the pre-update batch loss.

    Raises NonFiniteGradientError (naming the tensor) before touching any
    parameter if a gradient is NaN/Inf.
    """
    if lr < 0:
        raise ValueError(f"learning rate must be >= 0, got {lr}")
    cfg = state.params.config
    rng = state.rng if cfg.dropout > 0 else None
    loss, grads = loss_and_grads(state.params, batch, train=True, rng=rng)

    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NonFiniteGradientError(name)

    state.step += 1
    t = state.step
    bc1 = 1.0 - ADAM_BETA1**t
    bc2 = 1.0 - ADAM_BETA2**t
    for name, tensor in state.params.named_tensors().items():
        g = grads[name]
        m = state.m[name]
        v = state.v[name]
        m *= ADAM_BETA1
        m += (1.0 - ADAM_BETA1) * g
        v *= ADAM_BETA2
        v += (1.0 - ADAM_BETA2) * g * g
        mhat = m / bc1
        vhat = v / bc2
        tensor -= (lr * mhat / (np.sqrt(vhat) + ADAM_EPS)).astype(tensor.dtype)
    return loss
