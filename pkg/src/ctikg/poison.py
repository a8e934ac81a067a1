"""Data-poisoning attack orchestration: corpus contamination, pipeline
re-runs, query-impact measurement, and targeted entity rewriting."""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field

import numpy as np

from ctikg.ckg import Ckg, GraphDelta, diff, run_query
from ctikg.corpus import Document
from ctikg.errors import PipelineError
from ctikg.extraction import extract_document


@dataclass(frozen=True)
class AttackPlan:
    fake_ratio: float
    substitutions: dict[str, str] = field(default_factory=dict)
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.fake_ratio <= 1.0:
            raise ValueError(f"fake_ratio must be in [0, 1], got {self.fake_ratio}")
        if any(not k for k in self.substitutions):
            raise ValueError("substitution keys must be non-empty")

    @classmethod
    def from_json(cls, path) -> "AttackPlan":
        with open(path, encoding="utf-8") as fh:
            d = json.load(fh)
        return cls(fake_ratio=d["fake_ratio"],
                   substitutions=d.get("substitutions", {}),
                   seed=d.get("seed", 0))


@dataclass
class CorruptedQuery:
    query: str
    clean_answer: list[str]
    poisoned_answer: list[str]


@dataclass
class AttackReport:
    poisoned_triples: GraphDelta
    corrupted_queries: list[CorruptedQuery]
    n_clean_triples: int = 0
    n_poisoned_triples: int = 0

    def to_dict(self) -> dict:
        return {
            "added_triples": sorted(
                [t.subject, t.predicate, t.object, t.provenance, t.trust]
                for t in self.poisoned_triples.added
            ),
            "removed_triples": sorted(
                [t.subject, t.predicate, t.object, t.provenance, t.trust]
                for t in self.poisoned_triples.removed
            ),
            "corrupted_queries": [
                {"query": c.query, "clean": c.clean_answer, "poisoned": c.poisoned_answer}
                for c in self.corrupted_queries
            ],
            "n_clean_triples": self.n_clean_triples,
            "n_poisoned_triples": self.n_poisoned_triples,
        }


def build_poisoned_corpus(true_docs, fake_docs, plan: AttackPlan):
    """Mix fakes into the true corpus so the requested fraction of the
    output is fake; interleave order is a deterministic shuffle by seed."""
    for doc in fake_docs:
        if doc.authenticity != "fake_cti":
            raise ValueError(f"document {doc.id!r} is not labeled fake_cti")
    n_true = len(true_docs)
    if plan.fake_ratio == 1.0:
        n_fake = len(fake_docs)
        if n_true:
            raise ValueError("fake_ratio 1.0 needs an empty true corpus")
    else:
        n_fake = round(plan.fake_ratio / (1.0 - plan.fake_ratio) * n_true)
    if n_fake > len(fake_docs):
        raise ValueError(
            f"fake_ratio {plan.fake_ratio} needs {n_fake} fakes; only {len(fake_docs)} supplied"
        )
    mixed = list(true_docs) + list(fake_docs[:n_fake])
    rng = np.random.default_rng(plan.seed)
    return [mixed[i] for i in rng.permutation(len(mixed))]


def strip_labels(docs) -> list[Document]:
    """Attacker's view: authenticity withheld. Ground truth stays with the
    caller (see sidecar helpers below)."""
    return [Document(**{**d.to_dict(), "authenticity": "unknown"}) for d in docs]


def write_label_sidecar(docs, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump({d.id: d.authenticity for d in docs}, fh, sort_keys=True, indent=2)


def build_graph(docs, gazetteer, *, phase: str, **extract_kwargs) -> Ckg:
    graph = Ckg()
    try:
        for doc in sorted(docs, key=lambda d: d.id):
            graph.assert_triples(extract_document(doc, gazetteer, **extract_kwargs))
    except Exception as exc:
        raise PipelineError(phase, str(exc)) from exc
    return graph


def run_attack(clean_docs, poisoned_docs, queries, gazetteer,
               *, ground_truth: dict[str, str] | None = None,
               **extract_kwargs) -> AttackReport:
    """Build the clean and poisoned CKGs with identical pipeline settings,
    diff them, and evaluate every query on both graphs.

    `ground_truth` (doc id -> authenticity) restricts the reported delta to
    fake-provenance triples; without it the full delta is reported.
    """
    clean_graph = build_graph(clean_docs, gazetteer, phase="clean-extraction", **extract_kwargs)
    poisoned_graph = build_graph(poisoned_docs, gazetteer, phase="poisoned-extraction",
                                 **extract_kwargs)
    delta = diff(clean_graph, poisoned_graph)
    if ground_truth is not None:
        fake_ids = {i for i, a in ground_truth.items() if a == "fake_cti"}
        delta = GraphDelta(
            added={t for t in delta.added if t.provenance in fake_ids},
            removed=delta.removed,
            added_by_provenance={
                p: ts for p, ts in delta.added_by_provenance.items() if p in fake_ids
            },
        )
    corrupted = []
    for q in queries:
        try:
            clean_answer = run_query(clean_graph, q)
            poisoned_answer = run_query(poisoned_graph, q)
        except Exception as exc:
            raise PipelineError("query-evaluation", str(exc)) from exc
        if clean_answer != poisoned_answer:
            corrupted.append(CorruptedQuery(q, clean_answer, poisoned_answer))
    return AttackReport(
        poisoned_triples=delta,
        corrupted_queries=corrupted,
        n_clean_triples=len(clean_graph),
        n_poisoned_triples=len(poisoned_graph),
    )


def targeted_rewrite(text: str, substitutions: dict[str, str]) -> tuple[str, list[str]]:
    """Left-to-right, longest-match surface replacement.

    Returns (rewritten text, applied keys); an empty applied list is a
    warning condition for the caller, not a failure.
    """
    if not substitutions:
        raise ValueError("substitutions must be non-empty")
    keys = sorted(substitutions, key=len, reverse=True)
    pattern = re.compile("|".join(re.escape(k) for k in keys))
    applied: list[str] = []

    def replace(m: re.Match) -> str:
        applied.append(m.group())
        return substitutions[m.group()]

    return pattern.sub(replace, text), applied
