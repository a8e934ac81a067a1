"""Cyber entity and relation extraction.

Concept extraction is a hybrid of a gazetteer (surface -> class, shipped
as a TSV fixture) and pattern rules (CVE ids, "<Name> hack/campaign",
versioned product names). Relation extraction pairs entities within a
sentence, scores them with a trainable logistic model over embedding
features (or a fixed-score rule fallback), and labels the predicate from
the class pair.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from importlib import resources

import numpy as np

ENTITY_CLASSES = (
    "Campaign", "Attack-Pattern", "Tool", "Malware",
    "Vulnerability", "Threat-Actor", "Product", "Indicator",
)
# `a` asserts a class; `attributed_to` carries actor-attribution claims
# (single-valued by default, see the defense module).
PREDICATES = ("a", "uses", "exploits", "targets", "mitigates", "attributed_to")

# (actor-like class, target class) -> predicate for the rule fallback.
_ACTOR_CLASSES = ("Campaign", "Threat-Actor")
_PREDICATE_BY_OBJECT_CLASS = {
    "Attack-Pattern": "uses",
    "Tool": "uses",
    "Malware": "uses",
    "Vulnerability": "exploits",
    "Product": "targets",
}
RULE_FALLBACK_SCORE = 0.9

_PATTERN_RULES = [
    (re.compile(r"\bCVE-\d{4}-\d{4,}\b"), "Vulnerability"),
    (re.compile(r"\b[A-Z][A-Za-z0-9]*(?: [A-Z][A-Za-z0-9]*)* (?:hack|campaign)\b"), "Campaign"),
    (re.compile(r"\b[A-Z][A-Za-z0-9]*(?: [A-Z][A-Za-z0-9]*)* v?\d+(?:\.\d+)+\b"), "Product"),
]

_SENTENCE_END_RE = re.compile(r"[.!?][\"')\]]*(?=\s|$)")
_NON_CANON_RE = re.compile(r"[^a-z0-9]+")


@dataclass(frozen=True)
class Entity:
    surface: str
    start: int
    end: int
    cls: str
    source_doc: str = ""


@dataclass(frozen=True)
class Triple:
    subject: str
    predicate: str
    object: str
    provenance: str
    trust: float = 1.0

    def __post_init__(self):
        if self.predicate not in PREDICATES:
            raise ValueError(f"unknown predicate {self.predicate!r}")


def canonicalize(surface: str) -> str:
    """Stable node id: lowercase, non-alphanumeric runs to underscore."""
    canon = _NON_CANON_RE.sub("_", surface.lower()).strip("_")
    if not canon:
        raise ValueError(f"surface {surface!r} is empty after canonicalization")
    return canon


def load_gazetteer(path=None) -> dict[str, str]:
    """Gazetteer TSV: `surface<TAB>class`, one per line, # comments allowed."""
    if path is None:
        text = resources.files("ctikg.data").joinpath("gazetteer.tsv").read_text("utf-8")
    else:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    gazetteer: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip() or line.startswith("#"):
            continue
        parts = line.split("\t")
        if len(parts) != 2 or parts[1] not in ENTITY_CLASSES:
            raise ValueError(f"gazetteer line {lineno}: bad entry {line!r}")
        gazetteer[parts[0].lower()] = parts[1]
    return gazetteer


def _gazetteer_candidates(text: str, gazetteer: dict[str, str]):
    lowered = text.lower()
    for surface, cls in gazetteer.items():
        start = 0
        while True:
            idx = lowered.find(surface, start)
            if idx < 0:
                break
            yield (idx, idx + len(surface), cls)
            start = idx + 1


def _select_spans(candidates, taken: list[tuple[int, int]]):
    """Leftmost wins, then longest, then class order; skips spans that
    overlap anything already taken."""
    candidates = sorted(candidates,
                        key=lambda c: (c[0], -(c[1] - c[0]), ENTITY_CLASSES.index(c[2])))
    chosen = []
    for start, end, cls in candidates:
        if any(start < te and ts < end for ts, te in taken):
            continue
        chosen.append((start, end, cls))
        taken.append((start, end))
    return chosen


def extract_entities(text: str, gazetteer: dict[str, str], *,
                     use_rules: bool = True, source_doc: str = "") -> list[Entity]:
    """Deterministic non-overlapping entity spans.

    Gazetteer matches are selected first (leftmost-longest); pattern rules
    only fill regions the gazetteer left untouched, so a curated surface is
    never swallowed by a looser pattern around it.
    """
    taken: list[tuple[int, int]] = []
    spans = _select_spans(_gazetteer_candidates(text, gazetteer), taken)
    if use_rules:
        rule_candidates = [
            (m.start(), m.end(), cls)
            for pattern, cls in _PATTERN_RULES
            for m in pattern.finditer(text)
        ]
        spans += _select_spans(rule_candidates, taken)
    return [
        Entity(surface=text[start:end], start=start, end=end, cls=cls,
               source_doc=source_doc)
        for start, end, cls in sorted(spans)
    ]


def _sentence_index(text: str):
    """Map character offset -> sentence ordinal."""
    bounds = [m.end() for m in _SENTENCE_END_RE.finditer(text)]

    def index_of(offset: int) -> int:
        return sum(1 for b in bounds if b <= offset)

    return index_of


def pair_features(e1: Entity, e2: Entity, text: str, token_embedding: np.ndarray,
                  vocab) -> np.ndarray:
    """Mean token embedding of each surface plus a normalized token distance."""
    for e in (e1, e2):
        if text[e.start:e.end] != e.surface:
            raise ValueError(f"entity {e.surface!r} not found at [{e.start}:{e.end}]")

    def mean_embedding(surface: str) -> np.ndarray:
        ids = vocab.encode(surface)
        return token_embedding[ids].mean(axis=0)

    lo, hi = (e1, e2) if e1.start <= e2.start else (e2, e1)
    between = text[lo.end:hi.start]
    distance = len(vocab.encode(between)) / max(1, len(vocab.encode(text)))
    return np.concatenate([
        mean_embedding(e1.surface),
        mean_embedding(e2.surface),
        np.asarray([distance], dtype=token_embedding.dtype),
    ])


class RelationScorer:
    """Logistic probability that a directed entity pair is related.

    Minimal estimator API: fit(X, y), predict_proba(X), get_params().
    """

    def __init__(self, lr: float = 0.1, n_iter: int = 500, seed: int = 0):
        self.lr = lr
        self.n_iter = n_iter
        self.seed = seed
        self.weights_ = None
        self.bias_ = 0.0

    def get_params(self, deep: bool = True) -> dict:
        return {"lr": self.lr, "n_iter": self.n_iter, "seed": self.seed}

    def set_params(self, **params) -> "RelationScorer":
        for k, v in params.items():
            setattr(self, k, v)
        return self

    def fit(self, X, y) -> "RelationScorer":
        X = np.asarray(X, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        self.weights_ = np.zeros(X.shape[1])
        self.bias_ = 0.0
        for _ in range(self.n_iter):
            p = self._sigmoid(X @ self.weights_ + self.bias_)
            err = p - y
            self.weights_ -= self.lr * (X.T @ err) / len(y)
            self.bias_ -= self.lr * err.mean()
        return self

    def predict_proba(self, X) -> np.ndarray:
        if self.weights_ is None:
            raise ValueError("scorer is not fitted")
        X = np.asarray(X, dtype=np.float64)
        return self._sigmoid(X @ self.weights_ + self.bias_)

    @staticmethod
    def _sigmoid(z):
        return 1.0 / (1.0 + np.exp(-z))


def extract_relations(entities: list[Entity], text: str, *, provenance: str,
                      model: RelationScorer | None = None,
                      token_embedding: np.ndarray | None = None, vocab=None,
                      threshold: float = 0.5) -> list[Triple]:
    """Class assertions for every entity plus scored relational triples.

    Subjects are actor-like entities (Campaign, Threat-Actor); the predicate
    comes from the object's class; pairs must share a sentence. Without a
    trained model the rule fallback scores every eligible pair 0.9.
    """
    triples: list[Triple] = []
    seen: set[tuple] = set()
    for e in entities:
        t = Triple(canonicalize(e.surface), "a", e.cls, provenance)
        if (t.subject, t.predicate, t.object) not in seen:
            seen.add((t.subject, t.predicate, t.object))
            triples.append(t)

    sentence_of = _sentence_index(text)
    for subj in entities:
        if subj.cls not in _ACTOR_CLASSES:
            continue
        for obj in entities:
            if obj is subj or sentence_of(subj.start) != sentence_of(obj.start):
                continue
            predicate = _PREDICATE_BY_OBJECT_CLASS.get(obj.cls)
            if predicate is None:
                continue
            if model is not None:
                feats = pair_features(subj, obj, text, token_embedding, vocab)
                score = float(model.predict_proba(feats[None])[0])
            else:
                score = RULE_FALLBACK_SCORE
            if score < threshold:
                continue
            t = Triple(canonicalize(subj.surface), predicate,
                       canonicalize(obj.surface), provenance, trust=score)
            if (t.subject, t.predicate, t.object) not in seen:
                seen.add((t.subject, t.predicate, t.object))
                triples.append(t)
    return triples


def extract_document(doc, gazetteer, **kwargs) -> list[Triple]:
    entities = extract_entities(doc.body, gazetteer, source_doc=doc.id)
    return extract_relations(entities, doc.body, provenance=doc.id, **kwargs)


def load_labeled_relations(path) -> list[dict]:
    """Labeled fixture JSONL: {doc_id, subject: [s,e], object: [s,e], predicate|null}."""
    records = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                records.append(json.loads(line))
    return records


def train_relation_scorer(records, docs_by_id, gazetteer, token_embedding, vocab,
                          **params) -> RelationScorer:
    X, y = [], []
    for rec in records:
        doc = docs_by_id[rec["doc_id"]]
        spans = []
        for key in ("subject", "object"):
            s, e = rec[key]
            spans.append(Entity(surface=doc.body[s:e], start=s, end=e, cls="Indicator",
                                source_doc=doc.id))
        X.append(pair_features(spans[0], spans[1], doc.body, token_embedding, vocab))
        y.append(0.0 if rec.get("predicate") in (None, "none") else 1.0)
    return RelationScorer(**params).fit(np.asarray(X), np.asarray(y))
