"""Provenance-aware triple store with a small SPARQL-subset query engine.

Grammar (exactly enough for single-variable campaign/attack lookups):

    query   := "SELECT" var "WHERE" "{" subject po (";" po)* "."? "}"
    po      := predicate term
    predicate := "a" | ["^"] "CKG:" name
    subject / term := var | "CKG:" name
    var     := "?" name

`a` asserts a class, `^` flips a predicate's direction, and `CKG:` is the
only namespace prefix. Entity constants are canonicalized before matching;
class constants are matched verbatim.
"""

from __future__ import annotations

import re
from collections import defaultdict
from dataclasses import dataclass, field

from ctikg.errors import GraphFormatError, QuerySemanticError, QuerySyntaxError
from ctikg.extraction import ENTITY_CLASSES, PREDICATES, Triple, canonicalize


class Ckg:
    """Set-semantics triple store keyed on (subject, predicate, object, provenance)."""

    def __init__(self, triples=None):
        self._triples: dict[tuple, Triple] = {}
        self._by_predicate: dict[str, set[tuple[str, str]]] = defaultdict(set)
        if triples:
            self.assert_triples(triples)

    def __len__(self) -> int:
        return len(self._triples)

    def __eq__(self, other) -> bool:
        return isinstance(other, Ckg) and self.triples() == other.triples()

    def triples(self) -> set[Triple]:
        return set(self._triples.values())

    def assert_triples(self, triples) -> int:
        """Idempotent insert; returns how many triples were actually new."""
        added = 0
        for t in triples:
            if t.predicate not in PREDICATES:
                raise ValueError(f"unknown predicate {t.predicate!r} in {t}")
            key = (t.subject, t.predicate, t.object, t.provenance)
            if key in self._triples:
                continue
            self._triples[key] = t
            self._by_predicate[t.predicate].add((t.subject, t.object))
            added += 1
        return added

    def retract_triples(self, triples) -> int:
        removed = 0
        for t in triples:
            key = (t.subject, t.predicate, t.object, t.provenance)
            if key in self._triples:
                del self._triples[key]
                removed += 1
        self._rebuild_index()
        return removed

    def _rebuild_index(self) -> None:
        self._by_predicate = defaultdict(set)
        for t in self._triples.values():
            self._by_predicate[t.predicate].add((t.subject, t.object))

    def entity_ids(self) -> set[str]:
        ids = set()
        for t in self._triples.values():
            ids.add(t.subject)
            if t.predicate != "a":
                ids.add(t.object)
        return ids

    def classes_of(self, entity_id: str) -> set[str]:
        return {o for s, o in self._by_predicate["a"] if s == entity_id}

    def has(self, subject: str, predicate: str, obj: str) -> bool:
        return (subject, obj) in self._by_predicate[predicate]

    def provenance_of(self, subject: str, predicate: str, obj: str) -> set[str]:
        return {
            t.provenance for t in self._triples.values()
            if (t.subject, t.predicate, t.object) == (subject, predicate, obj)
        }

    def copy(self) -> "Ckg":
        return Ckg(self.triples())


# --- query parsing ---------------------------------------------------------

@dataclass(frozen=True)
class Pattern:
    subject: tuple[str, str]  # ("var", name) or ("const", value)
    predicate: str
    inverse: bool
    object: tuple[str, str]


@dataclass(frozen=True)
class QueryAst:
    select_var: str
    patterns: tuple[Pattern, ...]


_TOKEN_RE = re.compile(
    r"(?P<ws>\s+)"
    r"|(?P<lbrace>\{)|(?P<rbrace>\})|(?P<semi>;)|(?P<dot>\.(?!\w))"
    r"|(?P<var>\?[A-Za-z_][\w-]*)"
    r"|(?P<inv_const>\^CKG:[\w-]+)"
    r"|(?P<const>CKG:[\w-]+)"
    r"|(?P<word>[A-Za-z][\w-]*)"
)


def _tokenize(text: str):
    tokens = []
    pos = 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if m is None:
            raise QuerySyntaxError(f"unexpected character {text[pos]!r}", pos)
        if m.lastgroup != "ws":
            tokens.append((m.lastgroup, m.group(), pos))
        pos = m.end()
    tokens.append(("eof", "", len(text)))
    return tokens


def parse_query(text: str) -> QueryAst:
    """Parse one SELECT query into an AST; positions are character offsets."""
    tokens = _tokenize(text)
    i = 0

    def peek():
        return tokens[i]

    def expect(kind, what):
        nonlocal i
        tok_kind, value, pos = tokens[i]
        if tok_kind != kind:
            raise QuerySyntaxError(f"expected {what}, found {value or 'end of input'!r}", pos)
        i += 1
        return value, pos

    value, pos = expect("word", "SELECT")
    if value.upper() != "SELECT":
        raise QuerySyntaxError("expected SELECT", pos)
    var, _ = expect("var", "a ?variable")
    select_var = var[1:]
    value, pos = expect("word", "WHERE")
    if value.upper() != "WHERE":
        raise QuerySyntaxError("expected WHERE", pos)
    expect("lbrace", "'{'")

    kind, value, pos = peek()
    if kind == "var":
        subject = ("var", value[1:])
        i += 1
    elif kind == "const":
        subject = ("const", canonicalize(value[len("CKG:"):]))
        i += 1
    else:
        raise QuerySyntaxError("expected a subject term", pos)

    patterns: list[Pattern] = []
    while True:
        kind, value, pos = peek()
        if kind == "word" and value == "a":
            i += 1
            predicate, inverse = "a", False
            cls, cpos = expect("const", "a CKG:Class")
            cls_name = cls[len("CKG:"):]
            if cls_name not in ENTITY_CLASSES:
                raise QuerySemanticError(f"unknown class {cls_name!r}")
            obj = ("const", cls_name)
        elif kind in ("const", "inv_const"):
            i += 1
            inverse = kind == "inv_const"
            predicate = value.lstrip("^")[len("CKG:"):]
            if predicate not in PREDICATES or predicate == "a":
                raise QuerySemanticError(f"unknown predicate {predicate!r}")
            okind, ovalue, opos = peek()
            if okind == "var":
                obj = ("var", ovalue[1:])
                i += 1
            elif okind == "const":
                obj = ("const", canonicalize(ovalue[len("CKG:"):]))
                i += 1
            else:
                raise QuerySyntaxError("expected an object term", opos)
        else:
            raise QuerySyntaxError("expected a predicate", pos)
        patterns.append(Pattern(subject=subject, predicate=predicate,
                                inverse=inverse, object=obj))
        kind, value, pos = peek()
        if kind == "semi":
            i += 1
            continue
        if kind == "dot":
            i += 1
        break
    expect("rbrace", "'}'")
    kind, value, pos = peek()
    if kind != "eof":
        raise QuerySyntaxError(f"trailing input {value!r}", pos)

    ast = QueryAst(select_var=select_var, patterns=tuple(patterns))
    if not any(("var", select_var) in (p.subject, p.object) for p in ast.patterns):
        raise QuerySemanticError(f"?{select_var} does not appear in any pattern")
    return ast


def query(ckg: Ckg, ast: QueryAst) -> list[str]:
    """Conjunctive match; returns sorted bindings of the select variable."""
    candidates = ckg.entity_ids()
    for p in ast.patterns:
        predicate_pairs = ckg._by_predicate[p.predicate]
        if p.inverse:
            predicate_pairs = {(o, s) for s, o in predicate_pairs}
        matched = set()
        for value in candidates:
            env = {ast.select_var: value}

            def resolve(term):
                return env.get(term[1]) if term[0] == "var" else term[1]

            s, o = resolve(p.subject), resolve(p.object)
            if s is None or o is None:
                # A non-select variable is unconstrained: existential match.
                pool = predicate_pairs
                ok = any(
                    (s is None or ps == s) and (o is None or po == o)
                    for ps, po in pool
                )
            else:
                ok = (s, o) in predicate_pairs
            if ok:
                matched.add(value)
        candidates = matched
    return sorted(candidates)


def run_query(ckg: Ckg, text: str) -> list[str]:
    return query(ckg, parse_query(text))


# --- diffing ---------------------------------------------------------------

@dataclass
class GraphDelta:
    added: set[Triple] = field(default_factory=set)
    removed: set[Triple] = field(default_factory=set)
    added_by_provenance: dict[str, set[Triple]] = field(default_factory=dict)


def diff(before: Ckg, after: Ckg) -> GraphDelta:
    added = after.triples() - before.triples()
    removed = before.triples() - after.triples()
    by_prov: dict[str, set[Triple]] = defaultdict(set)
    for t in added:
        by_prov[t.provenance].add(t)
    return GraphDelta(added=added, removed=removed, added_by_provenance=dict(by_prov))


def apply_delta(before: Ckg, delta: GraphDelta) -> Ckg:
    g = before.copy()
    g.retract_triples(delta.removed)
    g.assert_triples(delta.added)
    return g


# --- persistence -----------------------------------------------------------

def export_graph(ckg: Ckg, path) -> None:
    """Sorted 5-field TSV: subject, predicate, object, provenance, trust."""
    rows = sorted(
        (t.subject, t.predicate, t.object, t.provenance, repr(float(t.trust)))
        for t in ckg.triples()
    )
    with open(path, "w", encoding="utf-8") as fh:
        for row in rows:
            fh.write("\t".join(row) + "\n")


def import_graph(path) -> Ckg:
    triples = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 5:
                raise GraphFormatError(f"expected 5 tab-separated fields, got {len(parts)}", lineno)
            s, p, o, prov, trust = parts
            try:
                triples.append(Triple(s, p, o, prov, float(trust)))
            except ValueError as exc:
                raise GraphFormatError(str(exc), lineno) from exc
    return Ckg(triples)
