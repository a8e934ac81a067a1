"""Acceptance gate: one test and one printed pass/fail line per criterion.

Run with `pytest -s tests/test_acceptance.py` to see the lines inline.
"""

import math
import sys
import time
from contextlib import contextmanager

import numpy as np
import pytest

from ctikg import corpus as corpusmod
from ctikg import fixtures, generator, tokenizer
from ctikg.ckg import diff, run_query
from ctikg.cli import dispatch
from ctikg.extraction import extract_entities, extract_document
from ctikg.generator import GenSettings, corpus_blocks, fine_tune, perplexity
from ctikg.lm import (
    LmConfig, TrainState, init_params, loss_and_grads, scaled_dot_attention,
    train_step, forward,
)
from ctikg.poison import build_graph
from ctikg.study import ConfusionMatrix, build_assessment, rates_from_matrix


@contextmanager
def criterion(number: int, title: str):
    try:
        yield
    except BaseException:
        print(f"ACCEPTANCE {number:2d}: FAIL - {title}", file=sys.stderr)
        raise
    print(f"ACCEPTANCE {number:2d}: PASS - {title}", file=sys.stderr)


def test_criterion_01_attention_math(rng):
    with criterion(1, "attention softmax rows, single-key identity, causality"):
        start = time.perf_counter()
        for _ in range(100):
            T, d = int(rng.integers(1, 12)), int(rng.integers(2, 16))
            Q, K, V = (rng.normal(size=(T, d)) for _ in range(3))
            scores = Q @ K.T / math.sqrt(d)
            e = np.exp(scores - scores.max(axis=-1, keepdims=True))
            w = e / e.sum(axis=-1, keepdims=True)
            assert np.abs(w.sum(axis=-1) - 1.0).max() < 1e-6
            assert np.allclose(scaled_dot_attention(Q, K, V), w @ V)

        cfg = LmConfig(vocab_size=30, context_length=16, n_layers=2, d_model=16,
                       n_heads=2, dropout=0.0, seed=0)
        params = init_params(cfg)
        for _ in range(100):
            ids = rng.integers(0, 30, size=10)
            base = forward(params, ids)
            for t in range(1, 10):
                other = ids.copy()
                other[t:] = rng.integers(0, 30, size=10 - t)
                assert np.array_equal(base[:t], forward(params, other)[:t])

        Q1, K1, V1 = (rng.normal(size=(1, 6)) for _ in range(3))
        assert np.allclose(scaled_dot_attention(Q1, K1, V1), V1)
        assert time.perf_counter() - start < 10


def test_criterion_02_gradient_oracle():
    with criterion(2, "analytic gradients vs central finite differences"):
        start = time.perf_counter()
        cfg = LmConfig(vocab_size=40, context_length=16, n_layers=1, d_model=8,
                       n_heads=2, dropout=0.0, seed=3)
        params = init_params(cfg).astype(np.float64)
        batch = [np.array([1, 5, 7, 2, 9]), np.array([3, 4, 8, 6])]
        _, grads = loss_and_grads(params, batch)
        rng = np.random.default_rng(0)
        eps, checked = 1e-5, 0
        for name, tensor in params.named_tensors().items():
            flat = tensor.reshape(-1)
            for idx in rng.choice(flat.size, size=min(4, flat.size), replace=False):
                orig = flat[idx]
                flat[idx] = orig + eps
                lp, _ = loss_and_grads(params, batch)
                flat[idx] = orig - eps
                lm, _ = loss_and_grads(params, batch)
                flat[idx] = orig
                numeric = (lp - lm) / (2 * eps)
                analytic = grads[name].reshape(-1)[idx]
                rel = abs(numeric - analytic) / max(1e-6, abs(numeric) + abs(analytic))
                assert rel < 1e-4, f"{name}: rel err {rel}"
                checked += 1
        assert checked >= 50
        assert time.perf_counter() - start < 60


def test_criterion_03_training_sanity():
    with criterion(3, "fine-tuning reduces held-out perplexity; memorization"):
        start = time.perf_counter()
        docs = fixtures.build_fixture_corpus()  # ~200 documents
        vocab = tokenizer.train_bpe([d.body for d in docs], 512)
        cfg = LmConfig(vocab_size=vocab.size, context_length=128, n_layers=4,
                       d_model=128, n_heads=4, dropout=0.0, seed=0)
        state = TrainState.new(init_params(cfg))
        split = corpusmod.split(docs, 0.35, 0)
        by_id = {d.id: d for d in docs}
        train_docs = [by_id[i] for i in split.train]
        heldout = [by_id[i] for i in split.test]
        heldout_blocks = corpus_blocks(heldout, vocab, cfg.context_length)
        before = perplexity(state.params, heldout_blocks)
        _, history = fine_tune(state, train_docs, heldout, vocab,
                               block_size=cfg.context_length, batch_size=64,
                               lr=1e-3, epochs=1)
        after = history[-1].heldout_perplexity
        assert after <= 0.70 * before, f"ppl {before:.1f} -> {after:.1f}"

        sent_cfg = LmConfig(vocab_size=vocab.size, context_length=64, n_layers=2,
                            d_model=32, n_heads=2, dropout=0.0, seed=1)
        sent_state = TrainState.new(init_params(sent_cfg))
        sentence = "The SolarWinds hack used malicious code."
        seq = np.asarray([vocab.begin_id] + vocab.encode(sentence) + [vocab.end_id])
        for _ in range(300):
            train_step(sent_state, [seq], 2e-3)
        assert perplexity(sent_state.params, [seq]) < 1.5
        assert time.perf_counter() - start < 600


def test_criterion_04_perplexity_definition(monkeypatch):
    with criterion(4, "uniform perplexity == vocab_size; perfect == 1"):
        class Stub:
            config = LmConfig(vocab_size=29, context_length=64, n_layers=1,
                              d_model=8, n_heads=1, dropout=0.0)

        monkeypatch.setattr("ctikg.generator.forward",
                            lambda p, ids: np.zeros((len(ids), 29)))
        assert abs(perplexity(Stub(), [np.arange(12) % 29]) - 29.0) < 1e-3

        def sharp(p, ids):
            logits = np.zeros((len(ids), 29))
            for t in range(len(ids)):
                logits[t, (t + 1) % 29] = 1e4
            return logits

        monkeypatch.setattr("ctikg.generator.forward", sharp)
        assert abs(perplexity(Stub(), [np.arange(12) % 29]) - 1.0) < 1e-6


def test_criterion_05_fake_sentence_extraction(gazetteer):
    with criterion(5, "fake-CTI sentence yields the exact entity and triple sets"):
        entities = extract_entities(fixtures.SOLARWINDS_FAKE_SENTENCE, gazetteer)
        assert {(e.surface.lower(), e.cls) for e in entities} == {
            ("solarwinds hack", "Campaign"),
            ("clicks an icon", "Attack-Pattern"),
            ("connect the service", "Attack-Pattern"),
        }
        triples = extract_document(fixtures.solarwinds_fake_doc(), gazetteer)
        uses = {(t.subject, t.object) for t in triples if t.predicate == "uses"}
        assert uses == {("solarwinds_hack", "clicks_an_icon"),
                        ("solarwinds_hack", "connect_the_service")}


def test_criterion_06_query_reproduction():
    with criterion(6, "reference queries on poisoned and clean graphs"):
        poisoned = fixtures.poisoned_reference_graph()
        assert run_query(poisoned, fixtures.CAMPAIGN_CLICKBAIT_QUERY) == \
            ["solarwinds_hack"]
        assert set(run_query(poisoned, fixtures.SOLARWINDS_ATTACK_PATTERN_QUERY)) == {
            "malicious_code", "offloading_sensitive_tools",
            "connect_the_service_page", "clicks_an_icon",
        }
        clean = fixtures.clean_reference_graph()
        clean_answers = set(run_query(clean, fixtures.SOLARWINDS_ATTACK_PATTERN_QUERY))
        assert clean_answers == {"malicious_code", "offloading_sensitive_tools"}


def test_criterion_07_poisoning_attribution(gazetteer):
    with criterion(7, "added triples attribute 100% to fake provenance"):
        clean_docs = fixtures.solarwinds_true_docs()
        fake = fixtures.solarwinds_fake_doc()
        clean = build_graph(clean_docs, gazetteer, phase="clean")
        poisoned = build_graph(clean_docs + [fake], gazetteer, phase="poisoned")
        delta = diff(clean, poisoned)
        fake_ids = {fake.id}
        attributed = {t for t in delta.added if t.provenance in fake_ids}
        precision = len(attributed) / len(delta.added)
        # every fake-provenance triple in the poisoned graph appears in the delta
        fake_triples = {t for t in poisoned.triples() if t.provenance in fake_ids}
        recall = len(attributed & fake_triples) / len(fake_triples)
        assert precision == 1.0 and recall == 1.0


def test_criterion_08_study_arithmetic():
    with criterion(8, "confusion counts 206/74/220/60 reproduce reported rates"):
        report = rates_from_matrix(ConfusionMatrix(tp=206, fn=74, fp=220, tn=60))
        assert report.matrix.total == 560
        assert abs(report.fraction_correct - 0.475) < 0.001
        assert abs(report.fraction_incorrect - 0.525) < 0.001
        assert abs(report.fake_labeled_true - 0.7857) < 0.001
        assert any("36.8" in n or "not derivable" in n for n in report.notes)


def test_criterion_09_assessment_construction(small_vocab):
    with criterion(9, "112-sample pool -> 2 x (28 true + 28 fake), no co-occurrence"):
        docs = fixtures.build_fixture_corpus(n_docs=60, seed=3,
                                             sentences_per_doc=(3, 5))
        cfg = LmConfig(vocab_size=small_vocab.size, context_length=128, n_layers=1,
                       d_model=16, n_heads=2, dropout=0.0, seed=4)
        params = init_params(cfg)
        task_a, task_b = build_assessment(docs, params, small_vocab, seed=11,
                                          settings=GenSettings(max_words=4, seed=11))
        assert len(task_a.items) + len(task_b.items) == 112
        for task in (task_a, task_b):
            truths = [it.truth for it in task.items]
            assert truths.count("true_cti") == 28
            assert truths.count("fake_cti") == 28
            # exhaustive co-occurrence check within the task
            sources = [it.counterpart_of for it in task.items]
            assert len(set(sources)) == len(sources)


def test_criterion_10_smoke_determinism(tmp_path):
    with criterion(10, "two same-seed smoke runs are byte-identical"):
        d1, d2 = tmp_path / "r1", tmp_path / "r2"
        assert dispatch(["smoke", "--workdir", str(d1), "--seed", "5"]) == 0
        assert dispatch(["smoke", "--workdir", str(d2), "--seed", "5"]) == 0
        files1 = sorted(p.name for p in d1.iterdir())
        assert files1 == sorted(p.name for p in d2.iterdir())
        assert {"model.ckpt", "clean.tsv", "poisoned.tsv",
                "attack_report.json"} <= set(files1)
        for name in files1:
            assert (d1 / name).read_bytes() == (d2 / name).read_bytes(), name


def test_criterion_11_tokenizer_round_trip(small_vocab):
    with criterion(11, "1,000 random byte strings round-trip losslessly"):
        rng = np.random.default_rng(123)
        for _ in range(1000):
            data = bytes(rng.integers(0, 256, size=rng.integers(0, 120)))
            assert small_vocab.decode(small_vocab.encode(data)) == data
