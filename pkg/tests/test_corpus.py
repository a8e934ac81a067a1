"""Corpus ingestion, truncation, and splitting."""

import json

import pytest
from hypothesis import given, settings, strategies as st

from ctikg.corpus import (
    Document, first_sentence, ingest, split, truncate_sample, write_corpus,
)
from ctikg.errors import IngestError


def make_doc(body, **over):
    fields = dict(id="d1", source_category="news", title="t", body=body,
                  provenance="p", authenticity="true_cti")
    fields.update(over)
    return Document(**fields)


def test_document_validation():
    with pytest.raises(ValueError):
        make_doc("x", source_category="blog")
    with pytest.raises(ValueError):
        make_doc("x", authenticity="maybe")
    with pytest.raises(ValueError):
        make_doc("")
    with pytest.raises(ValueError):
        Document.from_dict({**make_doc("x").to_dict(), "extra": 1})
    with pytest.raises(ValueError):
        Document.from_dict({"id": "a", "body": "x"})


def test_ingest_collects_line_diagnostics(tmp_path):
    path = tmp_path / "c.jsonl"
    good = make_doc("hello world.").to_dict()
    lines = [
        json.dumps(good),
        "not json",
        json.dumps({**good, "id": "d2", "source_category": "blog"}),
        json.dumps({**good, "id": "d1"}),  # duplicate
        json.dumps({**good, "id": "d3"}),
    ]
    path.write_text("\n".join(lines) + "\n")
    docs, diagnostics = ingest(path)
    assert [d.id for d in docs] == ["d1", "d3"]
    assert len(diagnostics) == 3
    assert diagnostics[0].startswith("line 2:")
    assert diagnostics[1].startswith("line 3:")
    assert "duplicate" in diagnostics[2]


def test_ingest_rejects_empty_and_missing(tmp_path):
    with pytest.raises(IngestError):
        ingest(tmp_path / "missing.jsonl")
    bad = tmp_path / "bad.jsonl"
    bad.write_text("nope\n")
    with pytest.raises(IngestError):
        ingest(bad)


def test_ingest_applies_default_category(tmp_path):
    path = tmp_path / "c.jsonl"
    record = make_doc("x.").to_dict()
    del record["source_category"]
    path.write_text(json.dumps(record) + "\n")
    docs, _ = ingest(path, source_category="cve")
    assert docs[0].source_category == "cve"


def test_write_then_ingest_round_trip(tmp_path, small_docs):
    path = tmp_path / "c.jsonl"
    write_corpus(small_docs, path)
    docs, diagnostics = ingest(path)
    assert diagnostics == []
    assert docs == small_docs


def test_truncate_respects_word_budget_and_boundary():
    body = "One two three. " * 60 + "tail without boundary " * 40
    doc = make_doc(body)
    text, flagged = truncate_sample(doc)
    assert not flagged
    assert text.endswith(".")
    assert len(text.split()) <= 500


def test_truncate_short_doc_keeps_everything():
    doc = make_doc("Just one sentence here.")
    text, flagged = truncate_sample(doc)
    assert (text, flagged) == ("Just one sentence here.", False)


def test_truncate_flags_boundaryless_text():
    doc = make_doc("word " * 600)
    text, flagged = truncate_sample(doc)
    assert flagged and text == ""


def test_truncate_handles_quoted_boundary():
    doc = make_doc('He said "done." Later events followed without end')
    text, _ = truncate_sample(doc)
    assert text == 'He said "done."'


def test_first_sentence():
    assert first_sentence(make_doc("A b c. D e f.")) == "A b c."
    assert first_sentence(make_doc("no terminator here")) == "no terminator here"


def test_split_is_deterministic_partition(small_docs):
    a = split(small_docs, 0.35, seed=9)
    b = split(small_docs, 0.35, seed=9)
    assert (a.train, a.test) == (b.train, b.test)
    assert sorted(a.train + a.test) == sorted(d.id for d in small_docs)
    assert not set(a.train) & set(a.test)
    assert len(a.test) == round(len(small_docs) * 0.35)


def test_split_seed_changes_assignment(small_docs):
    assert split(small_docs, 0.35, 0).test != split(small_docs, 0.35, 1).test


def test_split_validation(small_docs):
    with pytest.raises(ValueError):
        split(small_docs, 0.0, 0)
    with pytest.raises(ValueError):
        split(small_docs[:1], 0.5, 0)


@settings(max_examples=50, deadline=None)
@given(st.integers(min_value=2, max_value=40), st.floats(min_value=0.05, max_value=0.95),
       st.integers(min_value=0, max_value=10))
def test_split_partition_property(n, fraction, seed):
    docs = [make_doc("x.", id=f"d{i}") for i in range(n)]
    s = split(docs, fraction, seed)
    assert sorted(s.train + s.test) == sorted(d.id for d in docs)
    assert len(s.test) == round(n * fraction)
