"""Answer vocabulary: terms, embeddings, canonical refinement, surface matching.

The vocabulary is a fixed list of terms with dense integer ids.  A refinement
marks a subset as canonical and folds the rest into canonical targets via
merge groups.  Raw answer text is mapped onto canonical terms by an ordered
rule pipeline; an answer that is already canonical is a hit, one a rule can
repair is resolved, anything else stays unresolved and needs a human.

Every rule respects question categories: a term only matches for questions it
can answer, so a perfectly spelled term of the wrong category ("yes" for a
counting question) never hits.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np

from .validation import as_float_array

QUESTION_TYPES = ("quantity", "color", "shape", "other")
TOKEN_EXTRACTION_TYPES = frozenset({"quantity", "color", "shape"})
DEFAULT_SUFFIX_RULES = (("ular", "le"), ("ish", ""))


class CorpusError(ValueError):
    """Malformed vocabulary, refinement, or rule table."""


def normalize_surface(text: str) -> str:
    """Lowercase, trim, collapse internal whitespace."""
    return " ".join(str(text).split()).lower()


def check_question_type(qtype: str) -> str:
    if qtype not in QUESTION_TYPES:
        raise CorpusError(f"unknown question type {qtype!r}")
    return qtype


@dataclass(frozen=True)
class Term:
    id: int
    surface: str
    question_types: frozenset

    def __post_init__(self):
        # accept any iterable of categories; store one canonical representation
        object.__setattr__(self, "question_types", frozenset(self.question_types))
        for qtype in self.question_types:
            check_question_type(qtype)
        if not self.question_types:
            raise CorpusError(f"term {self.surface!r} answers no question type")
        if normalize_surface(self.surface) != self.surface:
            raise CorpusError(f"term surface {self.surface!r} is not normalized")
        if not self.surface:
            raise CorpusError("term surface is empty")


class Corpus:
    """Immutable term list with dense ids and unique normalized surfaces."""

    def __init__(self, terms):
        self.terms = list(terms)
        for expect, term in enumerate(self.terms):
            if term.id != expect:
                raise CorpusError(f"term ids must be dense, got {term.id} at position {expect}")
        self._by_surface = {}
        for term in self.terms:
            if term.surface in self._by_surface:
                raise CorpusError(f"duplicate surface {term.surface!r}")
            self._by_surface[term.surface] = term.id

    def __len__(self):
        return len(self.terms)

    def __eq__(self, other):
        return isinstance(other, Corpus) and self.terms == other.terms

    def term(self, term_id: int) -> Term:
        return self.terms[term_id]

    def surface(self, term_id: int) -> str:
        return self.terms[term_id].surface

    def id_of(self, surface: str) -> int | None:
        return self._by_surface.get(normalize_surface(surface))

    def answers(self, term_id: int, qtype: str) -> bool:
        return qtype in self.terms[term_id].question_types


@dataclass(frozen=True)
class EmbeddingTable:
    """One embedding vector per term, shape (|C|, m)."""

    vectors: np.ndarray

    def __post_init__(self):
        arr = as_float_array(self.vectors, "embeddings")
        if arr.ndim != 2:
            raise CorpusError(f"embedding table must be 2-D, got shape {arr.shape}")
        object.__setattr__(self, "vectors", arr)

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    def __len__(self):
        return self.vectors.shape[0]

    def __eq__(self, other):
        return isinstance(other, EmbeddingTable) and np.array_equal(self.vectors, other.vectors)


@dataclass(frozen=True)
class RefinedCorpus:
    """Canonical subset plus merge groups folding variants onto canonical ids."""

    canonical_ids: frozenset
    merge_groups: dict  # member id -> canonical id

    def __post_init__(self):
        overlap = self.canonical_ids & set(self.merge_groups)
        if overlap:
            raise CorpusError(f"ids both canonical and merged: {sorted(overlap)}")
        bad_targets = {t for t in self.merge_groups.values() if t not in self.canonical_ids}
        if bad_targets:
            raise CorpusError(f"merge targets not canonical: {sorted(bad_targets)}")

    def is_canonical(self, term_id: int) -> bool:
        return term_id in self.canonical_ids


def build_refined_corpus(corpus: Corpus, merge_spec) -> RefinedCorpus:
    """Build a refinement from (member ids, canonical id) groups.

    Terms not mentioned in any group stay canonical.  Groups must be disjoint
    and each must contain its own canonical id.
    """
    merge_groups = {}
    grouped = set()
    for members, canonical in merge_spec:
        members = list(members)
        for term_id in members + [canonical]:
            if not 0 <= term_id < len(corpus):
                raise CorpusError(f"merge group references unknown id {term_id}")
        if canonical not in members:
            raise CorpusError(f"canonical id {canonical} is not in its own group")
        for term_id in members:
            if term_id in grouped:
                raise CorpusError(
                    f"conflicting groups share {corpus.surface(term_id)!r} (id {term_id})"
                )
            grouped.add(term_id)
            if term_id != canonical:
                merge_groups[term_id] = canonical
    canonical_ids = frozenset(t.id for t in corpus.terms if t.id not in merge_groups)
    return RefinedCorpus(canonical_ids=canonical_ids, merge_groups=merge_groups)


class MatchKind(str, Enum):
    HIT = "hit"
    RESOLVED = "resolved"
    UNRESOLVED = "unresolved"


@dataclass(frozen=True)
class MatchOutcome:
    kind: MatchKind
    term_id: int | None = None

    @classmethod
    def hit(cls, term_id: int) -> "MatchOutcome":
        return cls(MatchKind.HIT, term_id)

    @classmethod
    def resolved(cls, term_id: int) -> "MatchOutcome":
        return cls(MatchKind.RESOLVED, term_id)

    @classmethod
    def unresolved(cls) -> "MatchOutcome":
        return cls(MatchKind.UNRESOLVED, None)


@dataclass(frozen=True)
class CanonicalMapping:
    """Precompiled rule tables for mapping raw answers onto canonical terms.

    Rule order: exact canonical surface, then merge/synonym lookup, then
    morphological suffix rewriting, then single-token extraction for the
    quantity / color / shape categories.
    """

    corpus: Corpus
    refined: RefinedCorpus
    synonyms: dict = field(default_factory=dict)           # surface -> canonical surface
    suffix_rules: tuple = DEFAULT_SUFFIX_RULES             # (suffix, replacement) pairs
    _canonical_by_surface: dict = field(default_factory=dict, repr=False)
    _mapped_by_surface: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        canonical_by_surface = {}
        for term_id in self.refined.canonical_ids:
            canonical_by_surface[self.corpus.surface(term_id)] = term_id

        mapped = {}
        for member_id, canonical_id in self.refined.merge_groups.items():
            mapped[self.corpus.surface(member_id)] = canonical_id
        for raw_surface, target_surface in self.synonyms.items():
            surface = normalize_surface(raw_surface)
            target_id = canonical_by_surface.get(normalize_surface(target_surface))
            if target_id is None:
                raise CorpusError(f"synonym target {target_surface!r} is not canonical")
            if surface in canonical_by_surface:
                raise CorpusError(f"synonym key {surface!r} shadows a canonical surface")
            mapped[surface] = target_id

        for rule in self.suffix_rules:
            if len(rule) != 2 or not rule[0]:
                raise CorpusError(f"bad suffix rule {rule!r}")
        object.__setattr__(self, "suffix_rules", tuple((str(a), str(b)) for a, b in self.suffix_rules))
        object.__setattr__(self, "_canonical_by_surface", canonical_by_surface)
        object.__setattr__(self, "_mapped_by_surface", mapped)

    def _exact(self, surface: str, qtype: str) -> int | None:
        term_id = self._canonical_by_surface.get(surface)
        if term_id is not None and self.corpus.answers(term_id, qtype):
            return term_id
        return None

    def _mapped(self, surface: str, qtype: str) -> int | None:
        term_id = self._mapped_by_surface.get(surface)
        if term_id is not None and self.corpus.answers(term_id, qtype):
            return term_id
        return None

    def _suffixed(self, surface: str, qtype: str) -> int | None:
        for suffix, replacement in self.suffix_rules:
            if len(surface) > len(suffix) and surface.endswith(suffix):
                candidate = surface[: -len(suffix)] + replacement
                term_id = self._canonical_by_surface.get(candidate)
                if term_id is not None and self.corpus.answers(term_id, qtype):
                    return term_id
        return None

    def _match_token(self, token: str, qtype: str) -> int | None:
        for rule in (self._exact, self._mapped, self._suffixed):
            term_id = rule(token, qtype)
            if term_id is not None:
                return term_id
        return None


def canonicalize(mapping: CanonicalMapping, refined: RefinedCorpus,
                 answer: str, qtype: str) -> MatchOutcome:
    """Map raw answer text onto a canonical term valid for the question type."""
    check_question_type(qtype)
    if refined != mapping.refined:
        raise CorpusError("mapping was built against a different refinement")
    surface = normalize_surface(answer)
    if not surface:
        return MatchOutcome.unresolved()

    term_id = mapping._exact(surface, qtype)
    if term_id is not None:
        return MatchOutcome.hit(term_id)
    term_id = mapping._mapped(surface, qtype)
    if term_id is not None:
        return MatchOutcome.resolved(term_id)
    term_id = mapping._suffixed(surface, qtype)
    if term_id is not None:
        return MatchOutcome.resolved(term_id)

    if qtype in TOKEN_EXTRACTION_TYPES:
        candidates = [t for t in surface.split() if mapping._match_token(t, qtype) is not None]
        if len(candidates) == 1:
            return MatchOutcome.resolved(mapping._match_token(candidates[0], qtype))
    return MatchOutcome.unresolved()


def surfaces_by_question_type(corpus: Corpus, refined: RefinedCorpus) -> dict:
    """Canonical surfaces grouped by the question categories they can answer."""
    groups = {qtype: [] for qtype in QUESTION_TYPES}
    for term_id in sorted(refined.canonical_ids):
        term = corpus.term(term_id)
        for qtype in term.question_types:
            groups[qtype].append(term.surface)
    return groups


# ---------------------------------------------------------------------------
# file formats


def load_corpus(path) -> tuple[Corpus, EmbeddingTable]:
    """Read the tab-separated vocabulary file: surface, categories, vector."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"corpus file not found: {path}")
    terms, rows = [], []
    dim = None
    with path.open("r", encoding="utf-8") as handle:
        for lineno, line in enumerate(handle):
            line = line.rstrip("\n")
            if not line:
                continue
            fields = line.split("\t")
            if len(fields) != 3:
                raise CorpusError(f"{path}:{lineno + 1}: expected 3 tab-separated fields")
            surface, qtypes_field, vector_field = fields
            qtypes = frozenset(normalize_surface(q) for q in qtypes_field.split(","))
            try:
                vector = [float(v) for v in vector_field.split(",")]
            except ValueError as exc:
                raise CorpusError(f"{path}:{lineno + 1}: bad vector component ({exc})") from None
            if dim is None:
                dim = len(vector)
            elif len(vector) != dim:
                raise CorpusError(
                    f"{path}:{lineno + 1}: vector has {len(vector)} components, expected {dim}"
                )
            terms.append(Term(id=len(terms), surface=normalize_surface(surface),
                              question_types=qtypes))
            rows.append(vector)
    if not terms:
        raise CorpusError(f"{path}: corpus is empty")
    return Corpus(terms), EmbeddingTable(vectors=np.array(rows, dtype=np.float64))


def save_corpus(corpus: Corpus, table: EmbeddingTable, path) -> None:
    if len(corpus) != len(table):
        raise CorpusError("corpus and embedding table disagree on size")
    path = Path(path)
    with path.open("w", encoding="utf-8") as handle:
        for term in corpus.terms:
            qtypes = ",".join(sorted(term.question_types))
            vector = ",".join(repr(v) for v in table.vectors[term.id].tolist())
            handle.write(f"{term.surface}\t{qtypes}\t{vector}\n")


def load_refinement(path, corpus: Corpus) -> tuple[RefinedCorpus, CanonicalMapping]:
    """Read the refinement JSON: canonical list, merges, synonyms, suffix rules."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"refinement file not found: {path}")
    with path.open("r", encoding="utf-8") as handle:
        doc = json.load(handle)
    unknown = set(doc) - {"canonical", "merges", "synonyms", "suffix_rules"}
    if unknown:
        raise CorpusError(f"{path}: unknown refinement fields {sorted(unknown)}")

    def _id_for(surface, role):
        term_id = corpus.id_of(surface)
        if term_id is None:
            raise CorpusError(f"{path}: {role} {surface!r} is not a corpus term")
        return term_id

    canonical_ids = frozenset(_id_for(s, "canonical surface") for s in doc.get("canonical", []))
    merge_groups = {}
    for member_surface, target_surface in doc.get("merges", {}).items():
        member = _id_for(member_surface, "merge member")
        target = _id_for(target_surface, "merge target")
        merge_groups[member] = target
    refined = RefinedCorpus(canonical_ids=canonical_ids, merge_groups=merge_groups)
    mapping = CanonicalMapping(
        corpus=corpus,
        refined=refined,
        synonyms=dict(doc.get("synonyms", {})),
        suffix_rules=tuple(tuple(rule) for rule in doc.get("suffix_rules", DEFAULT_SUFFIX_RULES)),
    )
    return refined, mapping


def save_refinement(mapping: CanonicalMapping, path) -> None:
    corpus, refined = mapping.corpus, mapping.refined
    doc = {
        "canonical": [corpus.surface(i) for i in sorted(refined.canonical_ids)],
        "merges": {
            corpus.surface(member): corpus.surface(target)
            for member, target in sorted(refined.merge_groups.items())
        },
        "synonyms": dict(sorted(mapping.synonyms.items())),
        "suffix_rules": [list(rule) for rule in mapping.suffix_rules],
    }
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")
