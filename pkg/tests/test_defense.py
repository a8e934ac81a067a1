"""Disfluency and trust heuristics: bounds, monotonicity, examples."""

import pytest

from ctikg.defense import (
    SourceRegistry, consistency_check, disfluency_score, trust_score,
)
from ctikg.extraction import Triple, extract_document
from ctikg.fixtures import clean_reference_graph, solarwinds_fake_doc


def test_disfluency_in_unit_interval(tiny_params, small_vocab, small_docs):
    for doc in small_docs[:3]:
        report = disfluency_score(doc.body, tiny_params, small_vocab)
        assert 0.0 <= report.composite <= 1.0
        assert 0.0 <= report.perplexity_score <= 1.0
        assert 0.0 < report.type_token_ratio <= 1.0


def test_repetition_rate_detects_loops(tiny_params, small_vocab):
    looped = "the attack used the attack used the attack used the attack used"
    varied = "analysts observed lateral movement across segmented networks today"
    rep = disfluency_score(looped, tiny_params, small_vocab)
    var = disfluency_score(varied, tiny_params, small_vocab)
    assert rep.repetition_rate > var.repetition_rate
    assert rep.type_token_ratio < var.type_token_ratio
    assert rep.composite > var.composite


def test_low_reference_perplexity_raises_score(tiny_params, small_vocab):
    text = "one two three four five six seven eight"
    low = disfluency_score(text, tiny_params, small_vocab, perplexity_ceiling=1e9)
    high = disfluency_score(text, tiny_params, small_vocab, perplexity_ceiling=10.0)
    # same text, lower ceiling => model ppl counts as less predictable
    assert low.perplexity_score > high.perplexity_score


def test_disfluency_needs_words(tiny_params, small_vocab):
    with pytest.raises(ValueError):
        disfluency_score("two words", tiny_params, small_vocab)


def test_consistency_check_flags_single_valued_conflicts():
    reference = clean_reference_graph()
    reference.assert_triples([Triple("apt41", "attributed_to", "china", "r1")])
    candidates = [
        Triple("apt41", "attributed_to", "russia", "c1"),
        Triple("apt41", "attributed_to", "china", "c2"),   # agrees: no conflict
        Triple("apt41", "uses", "emotet", "c3"),           # multi-valued: ignored
    ]
    conflicts = consistency_check(candidates, reference)
    assert len(conflicts) == 1
    cand, ref = conflicts[0]
    assert cand.object == "russia" and ref.object == "china"


def test_source_registry(tmp_path):
    reg = SourceRegistry(scores={"feed-a": 0.9}, default=0.4)
    assert reg.score("feed-a") == 0.9
    assert reg.score("unknown-feed") == 0.4
    p = tmp_path / "r.json"
    p.write_text('{"sources": {"x": 0.7}, "default": 0.2}')
    loaded = SourceRegistry.from_json(p)
    assert loaded.score("x") == 0.7 and loaded.default == 0.2


def test_trust_score_formula(gazetteer):
    doc = solarwinds_fake_doc()
    registry = SourceRegistry(scores={doc.provenance: 0.8})
    reference = clean_reference_graph()
    candidates = extract_document(doc, gazetteer)
    out = trust_score(doc, registry, reference, candidates)
    # 2 of 3 candidate entities are new to the reference graph
    assert out.novelty == pytest.approx(2 / 3)
    assert out.consistency_conflicts == []
    assert out.composite == pytest.approx(0.8 * 1.0 * (1 - 0.5 * 2 / 3))


def test_trust_decreases_with_conflicts(gazetteer):
    doc = solarwinds_fake_doc()
    registry = SourceRegistry(scores={}, default=1.0)
    reference = clean_reference_graph()
    reference.assert_triples([Triple("solarwinds_hack", "attributed_to", "apt29", "r")])
    base = trust_score(doc, registry, reference, [])
    conflicted = trust_score(
        doc, registry, reference,
        [Triple("solarwinds_hack", "attributed_to", "apt41", "c")])
    assert conflicted.composite < base.composite
    assert base.composite == 1.0  # no entities, no conflicts, perfect source


def test_trust_in_unit_interval(gazetteer):
    doc = solarwinds_fake_doc()
    registry = SourceRegistry(scores={}, default=0.5)
    reference = clean_reference_graph()
    reference.assert_triples([Triple("x", "attributed_to", "a", "r")])
    many_conflicts = [
        Triple("x", "attributed_to", f"b{i}", "c") for i in range(10)]
    out = trust_score(doc, registry, reference, many_conflicts)
    assert 0.0 <= out.composite <= 1.0
    assert out.composite == 0.0  # conflict term saturates at zero
