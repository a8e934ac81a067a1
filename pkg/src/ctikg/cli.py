"""Command-line entry point.

Subcommands: corpus, tokenizer, train, generate, extract, ckg, poison,
defend, eval, smoke. Exit codes: 0 success, 2 usage error, 3 input
validation error, 4 runtime failure.

Seed precedence (lowest to highest): CTIKG_SEED environment variable,
config file, command-line flag. Config files are flat key-value text with
section prefixes, e.g. `train.lr = 0.001`; flags win over the file and
unknown keys are rejected. Every run echoes its resolved configuration,
and every output file records the tool version and resolved seed.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

import ctikg
from ctikg import ckg as ckgmod
from ctikg import corpus as corpusmod
from ctikg import defense, fixtures, generator, poison, study, tokenizer
from ctikg.errors import CtikgError
from ctikg.extraction import Triple, extract_document, load_gazetteer
from ctikg.lm import (
    LmConfig,
    TrainState,
    init_params,
    load_checkpoint,
    save_checkpoint,
)

log = logging.getLogger("ctikg")

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_INPUT = 3
EXIT_RUNTIME = 4


class UsageError(Exception):
    pass


class InputError(Exception):
    pass


def _stamp(payload: dict, seed: int | None) -> dict:
    payload["tool_version"] = ctikg.__version__
    if seed is not None:
        payload["seed"] = seed
    return payload


def _write_json(payload: dict, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, sort_keys=True, indent=2)
        fh.write("\n")


def _read_config_file(path) -> dict[str, str]:
    values: dict[str, str] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise InputError(f"{path}:{lineno}: expected `section.key = value`")
            key, _, value = line.partition("=")
            values[key.strip()] = value.strip()
    return values


def _apply_config(args: argparse.Namespace, argv: list[str]) -> None:
    """Merge config-file values under the subcommand's section; flags win."""
    if not getattr(args, "config", None):
        return
    values = _read_config_file(args.config)
    section = args.command
    known = {k for k in vars(args) if k not in ("func", "config", "command")}
    for full_key, raw in values.items():
        sec, _, key = full_key.partition(".")
        if not key:
            raise InputError(f"config key {full_key!r} lacks a section prefix")
        if sec != section:
            continue
        dest = key.replace("-", "_")
        if dest not in known:
            raise InputError(f"unknown config key {full_key!r} for command {section!r}")
        if f"--{key}" in argv or f"--{dest.replace('_', '-')}" in argv:
            continue  # explicit flag wins
        current = getattr(args, dest)
        if dest == "seed":
            caster = int
        else:
            caster = type(current) if current is not None else str
        if caster is bool:
            setattr(args, dest, raw.lower() in ("1", "true", "yes"))
        else:
            setattr(args, dest, caster(raw))


def _resolve_seed(args) -> int:
    if getattr(args, "seed", None) is not None:
        return args.seed
    env = os.environ.get("CTIKG_SEED")
    if env is not None:
        return int(env)
    return 0


def _echo_config(args: argparse.Namespace) -> None:
    resolved = {k: v for k, v in sorted(vars(args).items()) if k != "func"}
    log.info("resolved config: %s", resolved)


def _load_corpus(path):
    docs, diagnostics = corpusmod.ingest(path)
    for d in diagnostics:
        log.warning("%s: %s", path, d)
    return docs


def _load_model(checkpoint_path, vocab_path):
    state = load_checkpoint(checkpoint_path)
    vocab = tokenizer.load_vocab(vocab_path)
    return state, vocab


# --- subcommand implementations -------------------------------------------

def cmd_corpus(args) -> int:
    if args.action == "ingest":
        docs, diagnostics = corpusmod.ingest(args.infile, source_category=args.category)
        for d in diagnostics:
            log.warning("%s", d)
        corpusmod.write_corpus(docs, args.out)
        log.info("wrote %d documents to %s", len(docs), args.out)
    elif args.action == "split":
        docs = _load_corpus(args.infile)
        split = corpusmod.split(docs, args.test_fraction, args.seed)
        _write_json(_stamp({
            "train": split.train,
            "test": split.test,
            "fraction": split.fraction,
        }, args.seed), args.out)
    elif args.action == "fixture":
        docs = fixtures.build_fixture_corpus(n_docs=args.n_docs, seed=args.seed)
        corpusmod.write_corpus(docs, args.out)
        log.info("wrote %d fixture documents to %s", len(docs), args.out)
    return EXIT_OK


def cmd_tokenizer(args) -> int:
    docs = _load_corpus(args.infile)
    vocab = tokenizer.train_bpe([d.body for d in docs], args.vocab_size)
    tokenizer.save_vocab(vocab, args.out)
    log.info("trained vocab of %d tokens to %s", vocab.size, args.out)
    return EXIT_OK


def cmd_train(args) -> int:
    docs = _load_corpus(args.corpus)
    vocab = tokenizer.load_vocab(args.vocab)
    split = corpusmod.split(docs, args.test_fraction, args.seed)
    by_id = {d.id: d for d in docs}
    train_docs = [by_id[i] for i in split.train]
    heldout_docs = [by_id[i] for i in split.test]

    cfg = LmConfig(
        vocab_size=vocab.size,
        context_length=args.block_size,
        n_layers=args.n_layers,
        d_model=args.d_model,
        n_heads=args.n_heads,
        dropout=args.dropout,
        seed=args.seed,
    )
    state = TrainState.new(init_params(cfg))
    state, history = generator.fine_tune(
        state, train_docs, heldout_docs, vocab,
        block_size=args.block_size, batch_size=args.batch_size,
        lr=args.lr, epochs=args.epochs,
    )
    for rec in history:
        log.info("epoch %d: train loss %.4f, held-out perplexity %.2f",
                 rec.epoch, rec.mean_train_loss, rec.heldout_perplexity)
    save_checkpoint(state, args.out)
    log.info("wrote checkpoint to %s", args.out)
    return EXIT_OK


def cmd_generate(args) -> int:
    state, vocab = _load_model(args.checkpoint, args.vocab)
    settings = generator.GenSettings(
        strategy=args.strategy, k=args.k, temperature=args.temperature,
        max_words=args.max_words, seed=args.seed,
    )
    samples = []
    if args.prompt:
        samples.append(generator.generate(state.params, vocab, args.prompt, settings))
    elif args.from_corpus:
        docs = _load_corpus(args.from_corpus)
        for doc in docs[: args.limit]:
            sample = generator.make_fake_counterpart(state.params, vocab, doc, settings)
            if sample is None:
                log.warning("skipping %s: no sentence boundary in the first "
                            "500 words", doc.id)
                continue
            samples.append(sample)
    else:
        raise UsageError("generate needs --prompt or --from-corpus")
    if args.out:
        generator.write_samples(samples, args.out)
    else:
        for s in samples:
            print(s.full_text)
    return EXIT_OK


def cmd_extract(args) -> int:
    gazetteer = load_gazetteer(args.gazetteer)
    if args.text:
        docs = [corpusmod.Document(
            id="inline", source_category="news", title="", body=args.text,
            provenance="inline", authenticity="unknown")]
    else:
        docs = _load_corpus(args.infile)
    graph = poison.build_graph(docs, gazetteer, phase="extraction",
                               threshold=args.threshold)
    if args.out:
        ckgmod.export_graph(graph, args.out)
        log.info("wrote %d triples to %s", len(graph), args.out)
    else:
        for t in sorted(graph.triples(), key=lambda t: (t.subject, t.predicate, t.object)):
            print(f"{t.subject}\t{t.predicate}\t{t.object}\t{t.provenance}\t{t.trust}")
    return EXIT_OK


def cmd_ckg(args) -> int:
    if args.action == "assert":
        graph = ckgmod.import_graph(args.graph) if Path(args.graph).exists() else ckgmod.Ckg()
        triples = []
        with open(args.source, encoding="utf-8") as fh:
            for line in fh:
                if line.strip():
                    d = json.loads(line)
                    triples.append(Triple(d["subject"], d["predicate"], d["object"],
                                          d["provenance"], d.get("trust", 1.0)))
        added = graph.assert_triples(triples)
        ckgmod.export_graph(graph, args.graph)
        log.info("asserted %d new triples into %s", added, args.graph)
    elif args.action == "query":
        graph = ckgmod.import_graph(args.graph)
        if args.file:
            text = Path(args.file).read_text(encoding="utf-8")
        else:
            text = args.query
        for binding in ckgmod.run_query(graph, text):
            print(binding)
    elif args.action == "diff":
        before = ckgmod.import_graph(args.before)
        after = ckgmod.import_graph(args.after)
        delta = ckgmod.diff(before, after)
        payload = _stamp({
            "added": sorted([t.subject, t.predicate, t.object, t.provenance, t.trust]
                            for t in delta.added),
            "removed": sorted([t.subject, t.predicate, t.object, t.provenance, t.trust]
                              for t in delta.removed),
            "added_by_provenance": {
                p: sorted([t.subject, t.predicate, t.object] for t in ts)
                for p, ts in delta.added_by_provenance.items()
            },
        }, None)
        _write_json(payload, args.report)
    return EXIT_OK


def cmd_poison(args) -> int:
    plan = poison.AttackPlan.from_json(args.plan)
    clean_docs = _load_corpus(args.clean)
    fake_docs = _load_corpus(args.fakes) if args.fakes else [fixtures.solarwinds_fake_doc()]
    poisoned_docs = poison.build_poisoned_corpus(clean_docs, fake_docs, plan)
    queries = _load_queries(args.queries) if args.queries else list(fixtures.REFERENCE_QUERIES)
    gazetteer = load_gazetteer(args.gazetteer)
    ground_truth = {d.id: d.authenticity for d in clean_docs + fake_docs}
    report = poison.run_attack(clean_docs, poisoned_docs, queries, gazetteer,
                               ground_truth=ground_truth)
    _write_json(_stamp(report.to_dict(), plan.seed), args.out)
    log.info("%d corrupted queries, %d poisoned triples",
             len(report.corrupted_queries), len(report.poisoned_triples.added))
    return EXIT_OK


def _load_queries(path) -> list[str]:
    p = Path(path)
    if p.is_dir():
        return [f.read_text(encoding="utf-8") for f in sorted(p.glob("*.rq"))]
    return [p.read_text(encoding="utf-8")]


def cmd_defend(args) -> int:
    with open(args.doc, encoding="utf-8") as fh:
        doc = corpusmod.Document.from_dict(json.load(fh))
    registry = (defense.SourceRegistry.from_json(args.registry)
                if args.registry else defense.SourceRegistry(scores={}))
    reference = ckgmod.import_graph(args.graph)
    gazetteer = load_gazetteer(args.gazetteer)
    candidates = extract_document(doc, gazetteer)
    assessment = defense.trust_score(doc, registry, reference, candidates)
    payload = {
        "source_score": assessment.source_score,
        "conflicts": len(assessment.consistency_conflicts),
        "novelty": assessment.novelty,
        "trust": assessment.composite,
    }
    if args.checkpoint:
        state, vocab = _load_model(args.checkpoint, args.vocab)
        report = defense.disfluency_score(doc.body, state.params, vocab)
        payload["disfluency"] = {
            "repetition_rate": report.repetition_rate,
            "type_token_ratio": report.type_token_ratio,
            "reference_perplexity": report.reference_perplexity,
            "composite": report.composite,
        }
    out = _stamp(payload, None)
    if args.out:
        _write_json(out, args.out)
    else:
        print(json.dumps(out, sort_keys=True, indent=2))
    return EXIT_OK


def cmd_eval(args) -> int:
    if args.action == "build":
        docs = _load_corpus(args.corpus)
        state, vocab = _load_model(args.checkpoint, args.vocab)
        settings = generator.GenSettings(max_words=args.max_words, seed=args.seed)
        task_a, task_b = study.build_assessment(docs, state.params, vocab,
                                                args.seed, settings)
        study.export_tasks([task_a, task_b], args.out)
        truths = {it.item_id: it.truth for t in (task_a, task_b) for it in t.items}
        _write_json(_stamp({"truths": truths}, args.seed), args.truths_out)
    elif args.action == "score":
        with open(args.truths, encoding="utf-8") as fh:
            truths = json.load(fh)["truths"]
        labels = study.read_labels_csv(args.labels)
        matrix = study.ConfusionMatrix()
        for (participant, item_id), label in labels.items():
            actual_true = truths[item_id] == "true_cti"
            labeled_true = label == "true"
            if actual_true and labeled_true:
                matrix.tp += 1
            elif actual_true:
                matrix.fn += 1
            elif labeled_true:
                matrix.fp += 1
            else:
                matrix.tn += 1
        _write_json(_stamp(study.rates_from_matrix(matrix).to_dict(), None), args.out)
    elif args.action == "rates":
        matrix = study.ConfusionMatrix(tp=args.tp, fn=args.fn, fp=args.fp, tn=args.tn)
        report = study.rates_from_matrix(matrix)
        print(json.dumps(_stamp(report.to_dict(), None), sort_keys=True, indent=2))
    return EXIT_OK


def cmd_smoke(args) -> int:
    """End-to-end run on bundled fixtures; every artifact lands in --workdir."""
    seed = args.seed
    workdir = Path(args.workdir)
    workdir.mkdir(parents=True, exist_ok=True)

    docs = fixtures.build_fixture_corpus(n_docs=48, seed=seed,
                                         sentences_per_doc=(8, 14))
    docs += fixtures.solarwinds_true_docs()
    corpus_path = workdir / "corpus.jsonl"
    corpusmod.write_corpus(docs, corpus_path)

    vocab = tokenizer.train_bpe([d.body for d in docs], 300)
    tokenizer.save_vocab(vocab, workdir / "vocab.txt")

    cfg = LmConfig(vocab_size=vocab.size, context_length=64, n_layers=2,
                   d_model=64, n_heads=2, dropout=0.0, seed=seed)
    state = TrainState.new(init_params(cfg))
    split = corpusmod.split(docs, 0.35, seed)
    by_id = {d.id: d for d in docs}
    state, history = generator.fine_tune(
        state, [by_id[i] for i in split.train], [by_id[i] for i in split.test],
        vocab, block_size=64, batch_size=16, lr=1e-3, epochs=1,
    )
    save_checkpoint(state, workdir / "model.ckpt")

    settings = generator.GenSettings(max_words=20, seed=seed)
    samples = []
    for doc in docs[:2]:
        sample = generator.make_fake_counterpart(state.params, vocab, doc, settings)
        if sample is not None:
            samples.append(sample)
    generator.write_samples(samples, workdir / "samples.jsonl")

    gazetteer = load_gazetteer()
    clean_docs = fixtures.solarwinds_true_docs()
    fake_doc = fixtures.solarwinds_fake_doc()
    plan = poison.AttackPlan(fake_ratio=1 / 3, seed=seed)
    poisoned_docs = poison.build_poisoned_corpus(clean_docs, [fake_doc], plan)
    ground_truth = {d.id: d.authenticity for d in clean_docs + [fake_doc]}
    report = poison.run_attack(clean_docs, poisoned_docs,
                               fixtures.REFERENCE_QUERIES, gazetteer,
                               ground_truth=ground_truth)
    _write_json(_stamp(report.to_dict(), seed), workdir / "attack_report.json")

    clean_graph = poison.build_graph(clean_docs, gazetteer, phase="clean-extraction")
    poisoned_graph = poison.build_graph(poisoned_docs, gazetteer,
                                        phase="poisoned-extraction")
    ckgmod.export_graph(clean_graph, workdir / "clean.tsv")
    ckgmod.export_graph(poisoned_graph, workdir / "poisoned.tsv")

    registry = defense.SourceRegistry(scores={}, default=0.8)
    assessment = defense.trust_score(fake_doc, registry, clean_graph,
                                     extract_document(fake_doc, gazetteer))
    disfluency = defense.disfluency_score(fake_doc.body, state.params, vocab)
    _write_json(_stamp({
        "trust": assessment.composite,
        "novelty": assessment.novelty,
        "conflicts": len(assessment.consistency_conflicts),
        "disfluency_composite": disfluency.composite,
    }, seed), workdir / "defense_report.json")

    matrix = study.ConfusionMatrix(tp=206, fn=74, fp=220, tn=60)
    _write_json(_stamp(study.rates_from_matrix(matrix).to_dict(), seed),
                workdir / "study_report.json")

    answers = {
        "campaign_query": ckgmod.run_query(poisoned_graph,
                                           fixtures.CAMPAIGN_CLICKBAIT_QUERY),
        "attack_pattern_query": ckgmod.run_query(poisoned_graph,
                                                 fixtures.SOLARWINDS_ATTACK_PATTERN_QUERY),
    }
    _write_json(_stamp(answers, seed), workdir / "query_answers.json")
    log.info("smoke pipeline complete in %s", workdir)
    return EXIT_OK


# --- parser ----------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ctikg",
        description="Synthetic CTI generation, knowledge-graph poisoning, and defenses",
    )
    parser.add_argument("--version", action="version", version=ctikg.__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", default=None, help="flat key-value config file")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("-v", "--verbose", action="store_true")

    p = sub.add_parser("corpus", help="ingest, split, or materialize corpora")
    common(p)
    p.add_argument("action", choices=["ingest", "split", "fixture"])
    p.add_argument("--in", dest="infile")
    p.add_argument("--category", choices=list(corpusmod.SOURCE_CATEGORIES), default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--test-fraction", type=float, default=0.35)
    p.add_argument("--n-docs", type=int, default=200)
    p.set_defaults(func=cmd_corpus)

    p = sub.add_parser("tokenizer", help="train a byte-level BPE vocabulary")
    common(p)
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--vocab-size", type=int, default=4096)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_tokenizer)

    p = sub.add_parser("train", help="fine-tune the language model on a corpus")
    common(p)
    p.add_argument("--corpus", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--epochs", type=int, default=1)
    p.add_argument("--lr", type=float, default=1e-4)
    p.add_argument("--block-size", type=int, default=128)
    p.add_argument("--batch-size", type=int, default=64)
    p.add_argument("--n-layers", type=int, default=4)
    p.add_argument("--d-model", type=int, default=128)
    p.add_argument("--n-heads", type=int, default=4)
    p.add_argument("--dropout", type=float, default=0.0)
    p.add_argument("--test-fraction", type=float, default=0.35)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("generate", help="generate text from a checkpoint")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--prompt", default=None)
    p.add_argument("--from-corpus", default=None)
    p.add_argument("--limit", type=int, default=10)
    p.add_argument("--strategy", choices=["greedy", "top_k"], default="greedy")
    p.add_argument("--k", type=int, default=10)
    p.add_argument("--temperature", type=float, default=1.0)
    p.add_argument("--max-words", type=int, default=500)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("extract", help="run entity/relation extraction")
    common(p)
    p.add_argument("--in", dest="infile", default=None)
    p.add_argument("--text", default=None)
    p.add_argument("--gazetteer", default=None)
    p.add_argument("--threshold", type=float, default=0.5)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("ckg", help="assert, query, or diff knowledge graphs")
    common(p)
    ckg_sub = p.add_subparsers(dest="action", required=True)
    pa = ckg_sub.add_parser("assert")
    pa.add_argument("--from", dest="source", required=True)
    pa.add_argument("--graph", required=True)
    pq = ckg_sub.add_parser("query")
    pq.add_argument("--graph", required=True)
    pq.add_argument("--file", default=None)
    pq.add_argument("--query", default=None)
    pd = ckg_sub.add_parser("diff")
    pd.add_argument("before")
    pd.add_argument("after")
    pd.add_argument("--report", required=True)
    p.set_defaults(func=cmd_ckg)

    p = sub.add_parser("poison", help="simulate a corpus-poisoning attack")
    common(p)
    p.add_argument("action", choices=["run"])
    p.add_argument("--plan", required=True)
    p.add_argument("--clean", required=True)
    p.add_argument("--fakes", default=None)
    p.add_argument("--queries", default=None)
    p.add_argument("--gazetteer", default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_poison)

    p = sub.add_parser("defend", help="score a document for trust and disfluency")
    common(p)
    p.add_argument("action", choices=["score"])
    p.add_argument("--doc", required=True)
    p.add_argument("--registry", default=None)
    p.add_argument("--ckg", dest="graph", required=True)
    p.add_argument("--gazetteer", default=None)
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--vocab", default=None)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_defend)

    p = sub.add_parser("eval", help="assessment sets and annotation scoring")
    common(p)
    p.add_argument("action", choices=["build", "score", "rates"])
    p.add_argument("--corpus", default=None)
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--vocab", default=None)
    p.add_argument("--max-words", type=int, default=500)
    p.add_argument("--out", default=None)
    p.add_argument("--truths-out", default="truths.json")
    p.add_argument("--truths", default=None)
    p.add_argument("--labels", default=None)
    p.add_argument("--tp", type=int, default=0)
    p.add_argument("--fn", type=int, default=0)
    p.add_argument("--fp", type=int, default=0)
    p.add_argument("--tn", type=int, default=0)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("smoke", help="end-to-end pipeline on bundled fixtures")
    common(p)
    p.add_argument("--workdir", required=True)
    p.set_defaults(func=cmd_smoke)

    return parser


def dispatch(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE

    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
        force=True,
    )
    try:
        _apply_config(args, list(argv) if argv is not None else sys.argv[1:])
        args.seed = _resolve_seed(args)
        _echo_config(args)
        return args.func(args)
    except UsageError as exc:
        log.error("%s", exc)
        return EXIT_USAGE
    except (InputError, ValueError, FileNotFoundError, CtikgError) as exc:
        log.error("%s", exc)
        return EXIT_INPUT
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        log.error("runtime failure: %s", exc)
        return EXIT_RUNTIME


def main() -> None:
    sys.exit(dispatch())


if __name__ == "__main__":
    main()
