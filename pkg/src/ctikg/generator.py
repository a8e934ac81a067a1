"""Fine-tuning, text generation, and perplexity over the CTI corpus."""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, asdict

import numpy as np

from ctikg.corpus import Document, first_sentence, truncate_sample
from ctikg.errors import ContextOverflowError, EmptySequenceError
from ctikg.lm.model import forward
from ctikg.lm.train import TrainState, train_step
from ctikg.tokenizer import BpeVocab

_WORD_RE = re.compile(r"\S+")


@dataclass(frozen=True)
class GenSettings:
    strategy: str = "greedy"  # or "top_k"
    k: int = 10
    temperature: float = 1.0
    max_words: int = 500
    seed: int = 0

    def __post_init__(self):
        if self.strategy not in ("greedy", "top_k"):
            raise ValueError(f"unknown strategy {self.strategy!r}")
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if self.temperature <= 0:
            raise ValueError("temperature must be > 0")
        if self.max_words < 1:
            raise ValueError("max_words must be >= 1")


@dataclass
class GeneratedSample:
    prompt: str
    continuation: str
    source_doc: str
    settings: GenSettings
    authenticity: str = "fake_cti"

    @property
    def full_text(self) -> str:
        return self.prompt + self.continuation

    def to_document(self, doc_id: str, source_category: str = "news") -> Document:
        return Document(
            id=doc_id,
            source_category=source_category,
            title=self.prompt,
            body=self.full_text,
            provenance=f"generated:{self.source_doc}",
            authenticity="fake_cti",
        )

    def to_dict(self) -> dict:
        return {
            "prompt": self.prompt,
            "continuation": self.continuation,
            "source_doc": self.source_doc,
            "settings": asdict(self.settings),
            "authenticity": self.authenticity,
            "do_not_publish": True,
        }


def write_samples(samples, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for s in samples:
            fh.write(json.dumps(s.to_dict(), sort_keys=True) + "\n")


def corpus_blocks(docs, vocab: BpeVocab, block_size: int) -> list[np.ndarray]:
    """Tokenize documents into training sequences of block_size + 1 ids.

    Documents are joined by the end-of-text token so blocks never learn to
    bridge unrelated texts silently.
    """
    stream: list[int] = []
    for doc in docs:
        stream.extend(vocab.encode(doc.body))
        stream.append(vocab.end_id)
    blocks = []
    for i in range(0, len(stream) - 1, block_size):
        chunk = stream[i:i + block_size + 1]
        if len(chunk) >= 2:
            blocks.append(np.asarray(chunk, dtype=np.int64))
    return blocks


def perplexity(params, sequences) -> float:
    """exp of the mean per-token negative log-likelihood of next tokens.

    Sequences longer than the model context are scored in non-overlapping
    context-sized windows.
    """
    block = params.config.context_length
    chunked = []
    for seq in sequences:
        seq = np.asarray(seq, dtype=np.int64)
        for i in range(0, max(1, len(seq) - 1), block):
            chunk = seq[i:i + block + 1]
            if len(chunk) >= 2:
                chunked.append(chunk)
    total_nll = 0.0
    total_tokens = 0
    for seq in chunked:
        logits = forward(params, seq[:-1]).astype(np.float64)
        shifted = logits - logits.max(axis=-1, keepdims=True)
        log_probs = shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
        total_nll += -log_probs[np.arange(len(seq) - 1), seq[1:]].sum()
        total_tokens += len(seq) - 1
    if total_tokens == 0:
        raise EmptySequenceError("perplexity needs at least one predicted token")
    return float(np.exp(total_nll / total_tokens))


@dataclass
class EpochRecord:
    epoch: int
    mean_train_loss: float
    heldout_perplexity: float


def fine_tune(
    state: TrainState,
    train_docs,
    heldout_docs,
    vocab: BpeVocab,
    *,
    block_size: int = 128,
    batch_size: int = 64,
    lr: float = 1e-4,
    epochs: int = 1,
) -> tuple[TrainState, list[EpochRecord]]:
    """Train for `epochs` passes; returns the best-by-held-out state.

    epochs == 0 returns the input state untouched. Batch order reshuffles
    each epoch from the state's own rng, so runs are seed-reproducible.
    """
    if epochs == 0:
        return state, []
    train_blocks = corpus_blocks(train_docs, vocab, block_size)
    heldout_blocks = corpus_blocks(heldout_docs, vocab, block_size)
    if not train_blocks:
        raise EmptySequenceError("training corpus shorter than one block")
    if not heldout_blocks:
        raise EmptySequenceError("held-out corpus shorter than one block")

    history: list[EpochRecord] = []
    best_state, best_ppl = None, float("inf")
    for epoch in range(1, epochs + 1):
        order = state.rng.permutation(len(train_blocks))
        losses = []
        for start in range(0, len(order), batch_size):
            batch = [train_blocks[i] for i in order[start:start + batch_size]]
            losses.append(train_step(state, batch, lr))
        ppl = perplexity(state.params, heldout_blocks)
        history.append(EpochRecord(epoch, float(np.mean(losses)), ppl))
        if ppl < best_ppl:
            best_ppl = ppl
            best_state = state.copy()
    return best_state, history


def _sample_next(logits: np.ndarray, settings: GenSettings, rng) -> int:
    if settings.strategy == "greedy":
        return int(np.argmax(logits))
    order = np.argsort(-logits, kind="stable")[: settings.k]
    scaled = logits[order].astype(np.float64) / settings.temperature
    scaled -= scaled.max()
    probs = np.exp(scaled)
    probs /= probs.sum()
    return int(order[rng.choice(len(order), p=probs)])


def generate(params, vocab: BpeVocab, prompt: str, settings: GenSettings) -> GeneratedSample:
    """Continue a prompt until the end token or the word budget.

    Greedy decoding is a pure function of (params, prompt, settings).
    """
    if not prompt:
        raise ValueError("prompt must be non-empty")
    cfg = params.config
    prompt_ids = vocab.encode(prompt)
    if len(prompt_ids) + 1 > cfg.context_length:
        raise ContextOverflowError(
            f"prompt tokenizes to {len(prompt_ids)} ids; context is {cfg.context_length}"
        )
    rng = np.random.default_rng(settings.seed)
    context = [vocab.begin_id] + prompt_ids
    generated: list[int] = []
    max_tokens = settings.max_words * 20 + 50  # hard stop for pathological loops
    while len(generated) < max_tokens:
        window = context[-cfg.context_length:]
        logits = forward(params, np.asarray(window, dtype=np.int64))[-1]
        token = _sample_next(logits, settings, rng)
        if token == vocab.end_id:
            break
        generated.append(token)
        context.append(token)
        text = vocab.decode_text(generated)
        if len(_WORD_RE.findall(text)) > settings.max_words:
            break

    continuation = vocab.decode_text(generated)
    words = list(_WORD_RE.finditer(continuation))
    if len(words) > settings.max_words:
        continuation = continuation[: words[settings.max_words - 1].end()]
    return GeneratedSample(prompt=prompt, continuation=continuation,
                           source_doc="", settings=settings)


def make_fake_counterpart(params, vocab: BpeVocab, true_doc: Document,
                          settings: GenSettings) -> GeneratedSample | None:
    """Fake twin of a true document: first sentence of the truncated body
    as the prompt, continuation capped at the word budget.

    Returns None (with the truncation flag handled upstream) when the
    document has no usable sentence boundary.
    """
    if true_doc.authenticity != "true_cti":
        raise ValueError(f"source document {true_doc.id!r} is not true CTI")
    truncated, flagged = truncate_sample(true_doc)
    if flagged:
        return None
    prompt = first_sentence(Document(**{**true_doc.to_dict(), "body": truncated}))
    sample = generate(params, vocab, prompt, settings)
    sample.source_doc = true_doc.id
    return sample
