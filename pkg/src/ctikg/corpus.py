"""CTI documents: JSONL ingestion, preprocessing, and train/test splitting.

A corpus is a JSONL file, one document per line, with fields
{id, source_category, title, body, published?, provenance, authenticity}.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, asdict, field

import numpy as np

from ctikg.errors import IngestError

SOURCE_CATEGORIES = ("news", "cve", "apt_report")
AUTHENTICITY = ("true_cti", "fake_cti", "unknown")

TRUNCATE_WORDS = 500

# A word is a maximal non-whitespace run; a sentence boundary is a word
# ending in terminal punctuation (optionally followed by a closing quote
# or bracket).
_WORD_RE = re.compile(r"\S+")
_BOUNDARY_RE = re.compile(r"[.!?][\"')\]]*$")


@dataclass
class Document:
    id: str
    source_category: str
    title: str
    body: str
    provenance: str
    authenticity: str = "true_cti"
    published: str | None = None

    def __post_init__(self):
        if self.source_category not in SOURCE_CATEGORIES:
            raise ValueError(f"bad source_category {self.source_category!r}")
        if self.authenticity not in AUTHENTICITY:
            raise ValueError(f"bad authenticity {self.authenticity!r}")
        if not self.body:
            raise ValueError("body must be non-empty")

    def to_dict(self) -> dict:
        d = asdict(self)
        if d["published"] is None:
            del d["published"]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "Document":
        known = {"id", "source_category", "title", "body", "provenance",
                 "authenticity", "published"}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown fields {sorted(unknown)}")
        missing = {"id", "source_category", "title", "body", "provenance"} - set(d)
        if missing:
            raise ValueError(f"missing fields {sorted(missing)}")
        return cls(**d)


@dataclass
class CorpusSplit:
    train: list[str]
    test: list[str]
    seed: int
    fraction: float


def ingest(path, source_category: str | None = None):
    """Read a corpus JSONL file.

    Returns (documents, diagnostics); diagnostics is a list of
    "line N: reason" strings for rejected records. Raises IngestError if
    the file is unreadable or yields zero valid documents.
    """
    try:
        with open(path, encoding="utf-8") as fh:
            lines = fh.readlines()
    except OSError as exc:
        raise IngestError(f"cannot read {path}: {exc}") from exc

    docs: list[Document] = []
    diagnostics: list[str] = []
    seen_ids: set[str] = set()
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            record = json.loads(line)
            if source_category is not None:
                record.setdefault("source_category", source_category)
            doc = Document.from_dict(record)
            if doc.id in seen_ids:
                raise ValueError(f"duplicate id {doc.id!r}")
        except (json.JSONDecodeError, ValueError, TypeError) as exc:
            diagnostics.append(f"line {lineno}: {exc}")
            continue
        seen_ids.add(doc.id)
        docs.append(doc)
    if not docs:
        raise IngestError(f"{path}: no valid records ({len(diagnostics)} rejected)")
    return docs, diagnostics


def write_corpus(docs, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for doc in docs:
            fh.write(json.dumps(doc.to_dict(), sort_keys=True) + "\n")


def _words_with_ends(text: str):
    return [(m.group(), m.end()) for m in _WORD_RE.finditer(text)]


def truncate_sample(doc: Document) -> tuple[str, bool]:
    """First <=500 words of the body, cut back to the last sentence boundary.

    Returns (text, flagged). If no boundary exists inside the window the
    text is empty and flagged is True.
    """
    words = _words_with_ends(doc.body)[:TRUNCATE_WORDS]
    boundary_end = None
    for word, end in words:
        if _BOUNDARY_RE.search(word):
            boundary_end = end
    if boundary_end is None:
        return "", True
    return doc.body[:boundary_end], False


def first_sentence(doc: Document) -> str:
    """Prefix of the body through the first sentence terminator; the whole
    body if there is none."""
    if not doc.body:
        raise ValueError("body must be non-empty")
    for word, end in _words_with_ends(doc.body):
        if _BOUNDARY_RE.search(word):
            return doc.body[:end]
    return doc.body


def split(docs, fraction: float, seed: int) -> CorpusSplit:
    """Deterministic shuffle split; `fraction` is the test share."""
    if not 0 < fraction < 1:
        raise ValueError(f"fraction must be in (0, 1), got {fraction}")
    ids = [d.id for d in docs]
    if len(ids) < 2:
        raise ValueError("corpus must hold at least 2 documents")
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(ids))
    n_test = round(len(ids) * fraction)
    test = sorted(ids[i] for i in order[:n_test])
    train = sorted(ids[i] for i in order[n_test:])
    return CorpusSplit(train=train, test=test, seed=seed, fraction=fraction)
