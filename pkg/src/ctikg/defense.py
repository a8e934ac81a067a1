"""Heuristic defenses: machine-generation tells and source-trust scoring.

All weights and coefficients are configurable; the defaults are chosen so
every composite stays in [0, 1] and moves monotonically with its inputs.
"""

from __future__ import annotations

import json
import math
import re
from collections import Counter
from dataclasses import dataclass

from ctikg.ckg import Ckg
from ctikg.extraction import Triple
from ctikg.generator import perplexity

_WORD_RE = re.compile(r"\S+")

# Predicates declared single-valued: a second, different object for the
# same subject is a conflict rather than extra knowledge.
DEFAULT_SINGLE_VALUED = frozenset({"attributed_to"})


@dataclass
class DisfluencyReport:
    repetition_rate: float
    type_token_ratio: float
    reference_perplexity: float
    perplexity_score: float
    composite: float


def _normalized_perplexity_score(ppl: float, ceiling: float) -> float:
    """1 for text a reference LM finds perfectly predictable (the strongest
    machine-generation tell), falling to 0 at `ceiling` and beyond."""
    if ppl <= 1.0:
        return 1.0
    return max(0.0, 1.0 - math.log(ppl) / math.log(ceiling))


def disfluency_score(text: str, reference_params, vocab, *,
                     weights: tuple[float, float, float] = (0.4, 0.3, 0.3),
                     perplexity_ceiling: float | None = None) -> DisfluencyReport:
    """composite = w0 * perplexity_score + w1 * repetition + w2 * (1 - TTR)."""
    words = [w.lower() for w in _WORD_RE.findall(text)]
    if len(words) < 3:
        raise ValueError(f"need at least 3 words, got {len(words)}")
    trigrams = Counter(zip(words, words[1:], words[2:]))
    n_trigrams = len(words) - 2
    repetition = sum(c - 1 for c in trigrams.values()) / n_trigrams
    ttr = len(set(words)) / len(words)

    ids = vocab.encode(text)
    ceiling = perplexity_ceiling or float(reference_params.config.vocab_size)
    ppl = perplexity(reference_params, [ids]) if len(ids) >= 2 else ceiling
    ppl_score = _normalized_perplexity_score(ppl, ceiling)

    w0, w1, w2 = weights
    composite = (w0 * ppl_score + w1 * repetition + w2 * (1.0 - ttr)) / (w0 + w1 + w2)
    return DisfluencyReport(
        repetition_rate=repetition,
        type_token_ratio=ttr,
        reference_perplexity=ppl,
        perplexity_score=ppl_score,
        composite=composite,
    )


def consistency_check(candidate_triples, reference: Ckg, *,
                      single_valued=DEFAULT_SINGLE_VALUED) -> list[tuple[Triple, Triple]]:
    """Candidates whose (subject, single-valued predicate) already holds a
    different object in the reference graph. Returns (candidate, reference
    triple) pairs; deterministic and independent of candidate order."""
    conflicts = []
    reference_triples = sorted(
        reference.triples(), key=lambda t: (t.subject, t.predicate, t.object, t.provenance)
    )
    for cand in sorted(candidate_triples,
                       key=lambda t: (t.subject, t.predicate, t.object, t.provenance)):
        if cand.predicate not in single_valued:
            continue
        for ref in reference_triples:
            if (ref.subject, ref.predicate) == (cand.subject, cand.predicate) \
                    and ref.object != cand.object:
                conflicts.append((cand, ref))
    return conflicts


@dataclass
class TrustAssessment:
    source_score: float
    consistency_conflicts: list
    novelty: float
    composite: float


@dataclass
class SourceRegistry:
    scores: dict[str, float]
    default: float = 0.5

    @classmethod
    def from_json(cls, path) -> "SourceRegistry":
        with open(path, encoding="utf-8") as fh:
            d = json.load(fh)
        return cls(scores=d.get("sources", {}), default=d.get("default", 0.5))

    def score(self, source: str) -> float:
        return self.scores.get(source, self.default)


def trust_score(document, registry: SourceRegistry, reference: Ckg,
                candidate_triples, *, conflict_coeff: float = 0.25,
                novelty_coeff: float = 0.5,
                single_valued=DEFAULT_SINGLE_VALUED) -> TrustAssessment:
    """composite = source * (1 - min(1, conflict_coeff * conflicts))
    * (1 - novelty_coeff * novelty); novelty is the fraction of candidate
    entities unseen in the reference graph."""
    source = registry.score(document.provenance)
    conflicts = consistency_check(candidate_triples, reference, single_valued=single_valued)
    entities = {t.subject for t in candidate_triples}
    entities |= {t.object for t in candidate_triples if t.predicate != "a"}
    known = reference.entity_ids()
    novelty = (
        sum(1 for e in entities if e not in known) / len(entities) if entities else 0.0
    )
    composite = (
        source
        * (1.0 - min(1.0, conflict_coeff * len(conflicts)))
        * (1.0 - novelty_coeff * novelty)
    )
    return TrustAssessment(
        source_score=source,
        consistency_conflicts=conflicts,
        novelty=novelty,
        composite=composite,
    )
