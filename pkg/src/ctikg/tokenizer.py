"""Byte-level BPE tokenizer with lossless encode/decode.

Base alphabet is all 256 byte values, so any input round-trips exactly.
Training collapses the corpus into whitespace-delimited chunks (a chunk
keeps its leading whitespace), counts pairs weighted by chunk frequency,
and merges the highest-count pair; ties break on the lexicographically
smallest (left bytes, right bytes) pair so training is deterministic.
"""

from __future__ import annotations

import re
from collections import Counter
from dataclasses import dataclass, field

from ctikg.errors import VocabError

N_SPECIALS = 3  # begin, end, pad
_CHUNK_RE = re.compile(rb"\s*\S+|\s+")


@dataclass
class BpeVocab:
    merges: list[tuple[int, int]]
    token_bytes: list[bytes]
    begin_id: int
    end_id: int
    pad_id: int
    _ranks: dict[tuple[int, int], int] = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if not self._ranks:
            self._ranks = {pair: i for i, pair in enumerate(self.merges)}

    @property
    def size(self) -> int:
        return len(self.token_bytes)

    def encode(self, text: str | bytes) -> list[int]:
        return encode(self, text)

    def decode(self, ids) -> bytes:
        return decode(self, ids)

    def decode_text(self, ids) -> str:
        return decode(self, ids).decode("utf-8", errors="replace")


def _chunks(data: bytes) -> list[bytes]:
    return _CHUNK_RE.findall(data)


def train_bpe(corpus_texts, target_vocab: int) -> BpeVocab:
    """Learn merges until the vocabulary (bytes + merges + specials) reaches
    target_vocab. Corpus items may be str or bytes."""
    if target_vocab <= 256 + N_SPECIALS:
        raise ValueError(f"target_vocab must exceed {256 + N_SPECIALS}, got {target_vocab}")
    data = [t.encode("utf-8") if isinstance(t, str) else bytes(t) for t in corpus_texts]
    if not data or all(len(d) == 0 for d in data):
        raise ValueError("empty corpus")

    chunk_freq = Counter()
    for doc in data:
        chunk_freq.update(_chunks(doc))
    words = [(list(chunk), n) for chunk, n in chunk_freq.items()]

    token_bytes = [bytes([i]) for i in range(256)]
    merges: list[tuple[int, int]] = []
    n_merges = target_vocab - 256 - N_SPECIALS

    pair_counts = Counter()
    for ids, n in words:
        for pair in zip(ids, ids[1:]):
            pair_counts[pair] += n

    for _ in range(n_merges):
        if not pair_counts:
            raise ValueError(
                f"corpus exhausted after {len(merges)} merges; cannot reach vocab {target_vocab}"
            )
        best_count = max(pair_counts.values())
        best = min(
            (p for p, c in pair_counts.items() if c == best_count),
            key=lambda p: (token_bytes[p[0]], token_bytes[p[1]]),
        )
        new_id = len(token_bytes)
        token_bytes.append(token_bytes[best[0]] + token_bytes[best[1]])
        merges.append(best)
        for ids, n in words:
            i = 0
            while i < len(ids) - 1:
                if (ids[i], ids[i + 1]) == best:
                    if i > 0:
                        pair_counts[(ids[i - 1], ids[i])] -= n
                        pair_counts[(ids[i - 1], new_id)] += n
                    if i + 2 < len(ids):
                        pair_counts[(ids[i + 1], ids[i + 2])] -= n
                        pair_counts[(new_id, ids[i + 2])] += n
                    pair_counts[best] -= n
                    ids[i:i + 2] = [new_id]
                else:
                    i += 1
        pair_counts = +pair_counts  # drop zero/negative entries

    begin = len(token_bytes)
    token_bytes += [b"", b"", b""]
    return BpeVocab(merges=merges, token_bytes=token_bytes,
                    begin_id=begin, end_id=begin + 1, pad_id=begin + 2)


def _encode_chunk(vocab: BpeVocab, chunk: bytes) -> list[int]:
    ids = list(chunk)
    while len(ids) > 1:
        ranked = [
            (vocab._ranks[p], i)
            for i, p in enumerate(zip(ids, ids[1:]))
            if p in vocab._ranks
        ]
        if not ranked:
            break
        rank, _ = min(ranked)
        left, right = vocab.merges[rank]
        new_id = 256 + rank
        i = 0
        while i < len(ids) - 1:
            if ids[i] == left and ids[i + 1] == right:
                ids[i:i + 2] = [new_id]
            else:
                i += 1
    return ids


def encode(vocab: BpeVocab, text: str | bytes) -> list[int]:
    """Deterministic merge-rank encoding; never emits special tokens."""
    data = text.encode("utf-8") if isinstance(text, str) else bytes(text)
    out: list[int] = []
    for chunk in _chunks(data):
        out.extend(_encode_chunk(vocab, chunk))
    return out


def decode(vocab: BpeVocab, ids) -> bytes:
    """Inverse of encode; special tokens decode to nothing."""
    out = []
    for i in ids:
        i = int(i)
        if not 0 <= i < vocab.size:
            raise VocabError(f"token id {i} outside vocabulary of size {vocab.size}")
        out.append(vocab.token_bytes[i])
    return b"".join(out)


def save_vocab(vocab: BpeVocab, path) -> None:
    """Line-oriented text format: header, one merge per line, special ids."""
    lines = [f"ctikg-bpe 1 {vocab.size}"]
    lines += [f"{a} {b}" for a, b in vocab.merges]
    lines += [
        f"special begin {vocab.begin_id}",
        f"special end {vocab.end_id}",
        f"special pad {vocab.pad_id}",
    ]
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def load_vocab(path) -> BpeVocab:
    with open(path, encoding="utf-8") as fh:
        lines = [ln.rstrip("\n") for ln in fh if ln.strip()]
    header = lines[0].split()
    if len(header) != 3 or header[0] != "ctikg-bpe" or header[1] != "1":
        raise VocabError(f"bad vocab header: {lines[0]!r}")
    size = int(header[2])
    merges: list[tuple[int, int]] = []
    specials: dict[str, int] = {}
    for ln in lines[1:]:
        parts = ln.split()
        if parts[0] == "special":
            specials[parts[1]] = int(parts[2])
        else:
            merges.append((int(parts[0]), int(parts[1])))
    token_bytes = [bytes([i]) for i in range(256)]
    for a, b in merges:
        if a >= len(token_bytes) or b >= len(token_bytes):
            raise VocabError(f"merge ({a}, {b}) references an unknown token")
        token_bytes.append(token_bytes[a] + token_bytes[b])
    token_bytes += [b"", b"", b""]
    if len(token_bytes) != size or set(specials) != {"begin", "end", "pad"}:
        raise VocabError("vocab file inconsistent with its header")
    return BpeVocab(merges=merges, token_bytes=token_bytes,
                    begin_id=specials["begin"], end_id=specials["end"],
                    pad_id=specials["pad"])
