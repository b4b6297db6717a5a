"""Annotation oracles and the synthetic corpus/dataset generator.

Four oracle flavors repair (or decline to repair) flagged annotations: lazy
keeps everything, simulated-diligent restores the hidden clean label,
hierarchical tries rule-based canonicalization before falling back to a
simulated manual step, and remote-human defers to a person over an attached
bridge with a lazy timeout fallback.  The generator builds a desk-scale
corpus and dataset whose noise is planted by the same seeded model the
oracles later confront.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from enum import Enum
from typing import NamedTuple

import numpy as np

from .corpus import (
    QUESTION_TYPES,
    CanonicalMapping,
    Corpus,
    CorpusError,
    EmbeddingTable,
    MatchKind,
    RefinedCorpus,
    Term,
    build_refined_corpus,
    canonicalize,
)
from .pools import (
    NOISE_KINDS,
    Annotation,
    Dataset,
    InstanceRecord,
    SimulationTruth,
)

logger = logging.getLogger("aqua.oracle")

ORACLE_KINDS = ("lazy", "simulated_diligent", "hierarchical", "remote_human")
DEFAULT_REMOTE_TIMEOUT = 600.0

_ANNOTATION_STREAM = 5
_VARIANT_OFFSET = 0.05  # embedding perturbation norm for members/partners, <= 0.1


class OracleError(ValueError):
    """Unusable oracle configuration or missing simulation context."""


class ReannotationOutcome(str, Enum):
    HIT = "hit"
    RESOLVED = "resolved"
    MANUAL_REPLACED = "manual_replaced"
    UNCHANGED = "unchanged"


OUTCOME_NAMES = tuple(o.value for o in ReannotationOutcome)


@dataclass(frozen=True)
class ReannotationResult:
    label: int
    surface: str
    outcome: ReannotationOutcome


# ---------------------------------------------------------------------------
# noise model


@dataclass(frozen=True)
class NoiseModel:
    """Imperfection rates for the initial annotator; remainder is correct."""

    rate_alt_valid: float = 0.0
    rate_non_canonical: float = 0.0
    rate_irrelevant: float = 0.0
    seed: int = 0

    def __post_init__(self):
        rates = (self.rate_alt_valid, self.rate_non_canonical, self.rate_irrelevant)
        if any(r < 0 for r in rates):
            raise OracleError("noise rates must be >= 0")
        if sum(rates) > 1.0 + 1e-12:
            raise OracleError("noise rates must sum to at most 1")


@dataclass(frozen=True)
class NoisePlan:
    """Corpus-derived lookup tables the noise model draws variants from."""

    corpus: Corpus
    alt_partners: dict      # canonical id -> designated near-duplicate canonical id
    merge_members: dict     # canonical id -> tuple of member term ids
    off_type_terms: dict    # qtype -> tuple of canonical ids answering other qtypes

    @classmethod
    def build(cls, corpus: Corpus, refined: RefinedCorpus, alt_partners=None) -> "NoisePlan":
        members: dict = {}
        for member, target in refined.merge_groups.items():
            members.setdefault(target, []).append(member)
        off_type = {
            qtype: tuple(
                sorted(c for c in refined.canonical_ids if not corpus.answers(c, qtype))
            )
            for qtype in QUESTION_TYPES
        }
        return cls(
            corpus=corpus,
            alt_partners=dict(alt_partners or {}),
            merge_members={t: tuple(sorted(m)) for t, m in members.items()},
            off_type_terms=off_type,
        )


class PlannedAnnotation(NamedTuple):
    label: int
    surface: str
    kind: str
    fell_back: bool


def annotate_initial(instance_id: int, clean_label: int, qtype: str,
                     noise: NoiseModel, plan: NoisePlan) -> PlannedAnnotation:
    """Draw one initial annotation; each instance gets its own seeded stream.

    The categorical draw walks alt_valid, non_canonical, irrelevant in that
    fixed order.  A drawn kind with no available variant falls back to the
    clean label and reports the fallback.
    """
    rng = np.random.default_rng([noise.seed, _ANNOTATION_STREAM, instance_id])
    u = rng.random()
    edge_alt = noise.rate_alt_valid
    edge_non = edge_alt + noise.rate_non_canonical
    edge_irr = edge_non + noise.rate_irrelevant

    label, kind, fell_back = clean_label, "canonical_correct", False
    if u < edge_alt:
        partner = plan.alt_partners.get(clean_label)
        if partner is None:
            fell_back = True
        else:
            label, kind = partner, "alt_valid"
    elif u < edge_non:
        members = plan.merge_members.get(clean_label, ())
        if not members:
            fell_back = True
        else:
            label = members[int(rng.integers(len(members)))]
            kind = "non_canonical"
    elif u < edge_irr:
        pool = plan.off_type_terms.get(qtype, ())
        if not pool:
            fell_back = True
        else:
            label = pool[int(rng.integers(len(pool)))]
            kind = "irrelevant"
    return PlannedAnnotation(label, plan.corpus.surface(label), kind, fell_back)


# ---------------------------------------------------------------------------
# reannotation oracles


@dataclass
class QueueReport:
    """What one reannotation pass did, with simulation crosstabs when known."""

    outcome_counts: dict = field(
        default_factory=lambda: {name: 0 for name in OUTCOME_NAMES}
    )
    crosstab: dict = field(default_factory=dict)  # kind -> outcome -> count
    processed: int = 0
    timeouts: int = 0


def _resolve_and_tally(pool, truth, instance_id: int, result: ReannotationResult,
                       report: QueueReport) -> None:
    prior_kind = None
    entry = truth.get(instance_id) if truth else None
    if entry is not None:
        prior_kind = entry.current_kind
    pool.resolve(instance_id, result.label, result.outcome.value, result.surface)
    if entry is not None and result.label == entry.clean_label:
        entry.current_kind = "canonical_correct"
    report.outcome_counts[result.outcome.value] += 1
    report.processed += 1
    if prior_kind is not None:
        by_outcome = report.crosstab.setdefault(prior_kind, {})
        by_outcome[result.outcome.value] = by_outcome.get(result.outcome.value, 0) + 1


class Oracle:
    kind = "abstract"

    def reannotate(self, record: InstanceRecord, annotation: Annotation,
                   truth: SimulationTruth | None) -> ReannotationResult:
        raise NotImplementedError

    def process_queue(self, pool, truth=None, views=None) -> QueueReport:
        """Work the flagged queue to empty; ascending id order."""
        report = QueueReport()
        for instance_id in sorted(pool.queue):
            record = pool.record(instance_id)
            annotation = Annotation(record.annotated_label, record.surface_answer)
            entry = truth.get(instance_id) if truth else None
            result = self.reannotate(record, annotation, entry)
            _resolve_and_tally(pool, truth, instance_id, result, report)
        return report


class LazyOracle(Oracle):
    """Identity mapping: every flagged annotation comes back untouched."""

    kind = "lazy"

    def reannotate(self, record, annotation, truth):
        return ReannotationResult(annotation.label, annotation.surface,
                                  ReannotationOutcome.UNCHANGED)


class SimulatedDiligentOracle(Oracle):
    """Perfect annotator: always lands on the hidden clean label."""

    kind = "simulated_diligent"

    def __init__(self, corpus: Corpus):
        self.corpus = corpus

    def reannotate(self, record, annotation, truth):
        if truth is None:
            raise OracleError("simulated_diligent needs simulation truth")
        clean = truth.clean_label
        if clean == annotation.label:
            return ReannotationResult(annotation.label, annotation.surface,
                                      ReannotationOutcome.HIT)
        return ReannotationResult(clean, self.corpus.surface(clean),
                                  ReannotationOutcome.MANUAL_REPLACED)


class HierarchicalOracle(Oracle):
    """Rule-based canonicalization first; unresolved cases go to a manual step.

    The simulated manual step is perfect (clean label).  Canonical-and-valid
    surfaces are kept as-is, so this oracle never disturbs a correct
    annotation.
    """

    kind = "hierarchical"

    def __init__(self, corpus: Corpus, refined: RefinedCorpus, mapping: CanonicalMapping):
        self.corpus = corpus
        self.refined = refined
        self.mapping = mapping

    def reannotate(self, record, annotation, truth):
        match = canonicalize(self.mapping, self.refined,
                             annotation.surface or "", record.qtype)
        if match.kind is MatchKind.HIT:
            return ReannotationResult(annotation.label, annotation.surface,
                                      ReannotationOutcome.HIT)
        if match.kind is MatchKind.RESOLVED:
            return ReannotationResult(match.term_id, self.corpus.surface(match.term_id),
                                      ReannotationOutcome.RESOLVED)
        if truth is None:
            raise OracleError(
                "hierarchical manual step needs simulation truth; "
                "attach a remote bridge for live use"
            )
        clean = truth.clean_label
        return ReannotationResult(clean, self.corpus.surface(clean),
                                  ReannotationOutcome.MANUAL_REPLACED)


@dataclass(frozen=True)
class Decision:
    """One human resolution delivered over the bridge."""

    instance_id: int
    action: str           # "keep" | "replace"
    term_id: int | None = None


def classify_replacement(mapping: CanonicalMapping, refined: RefinedCorpus,
                         qtype: str, original_surface: str | None,
                         replacement_id: int) -> ReannotationOutcome:
    """Credit the rule pipeline when the human lands on its own answer."""
    match = canonicalize(mapping, refined, original_surface or "", qtype)
    if match.kind is MatchKind.HIT and match.term_id == replacement_id:
        return ReannotationOutcome.HIT
    if match.kind is MatchKind.RESOLVED and match.term_id == replacement_id:
        return ReannotationOutcome.RESOLVED
    return ReannotationOutcome.MANUAL_REPLACED


class RemoteHumanOracle(Oracle):
    """Publishes the flagged queue to a bridge and blocks for human decisions.

    The bridge contract: `publish(views)` makes requests visible;
    `next_decision(timeout)` blocks up to `timeout` seconds and returns a
    Decision or None.  When the phase deadline passes, every remaining
    instance falls back to lazy handling, and the fallback is logged.
    """

    kind = "remote_human"

    def __init__(self, corpus: Corpus, refined: RefinedCorpus,
                 mapping: CanonicalMapping, bridge,
                 timeout: float = DEFAULT_REMOTE_TIMEOUT):
        if bridge is None:
            raise OracleError("remote_human needs a bridge")
        if timeout <= 0:
            raise OracleError("timeout must be > 0")
        self.corpus = corpus
        self.refined = refined
        self.mapping = mapping
        self.bridge = bridge
        self.timeout = timeout
        self.timeout_count = 0

    def reannotate(self, record, annotation, truth):
        raise OracleError("remote_human resolves through process_queue only")

    def _apply(self, record: InstanceRecord, annotation: Annotation,
               decision: Decision) -> ReannotationResult:
        if decision.action == "keep":
            return ReannotationResult(annotation.label, annotation.surface,
                                      ReannotationOutcome.UNCHANGED)
        if decision.action != "replace" or decision.term_id is None:
            raise OracleError(f"malformed decision for instance {decision.instance_id}")
        outcome = classify_replacement(self.mapping, self.refined, record.qtype,
                                       annotation.surface, decision.term_id)
        return ReannotationResult(decision.term_id,
                                  self.corpus.surface(decision.term_id), outcome)

    def process_queue(self, pool, truth=None, views=None) -> QueueReport:
        report = QueueReport()
        pending = sorted(pool.queue)
        if not pending:
            return report
        views = views or {}
        self.bridge.publish([views.get(i, {"instance_id": i}) for i in pending])
        deadline = time.monotonic() + self.timeout
        while pool.queue:
            remaining = deadline - time.monotonic()
            if remaining <= 0:
                break
            decision = self.bridge.next_decision(remaining)
            if decision is None:
                break
            if decision.instance_id not in pool.queue:
                logger.warning("dropping decision for unqueued instance %d",
                               decision.instance_id)
                continue
            record = pool.record(decision.instance_id)
            annotation = Annotation(record.annotated_label, record.surface_answer)
            result = self._apply(record, annotation, decision)
            _resolve_and_tally(pool, truth, decision.instance_id, result, report)
        leftovers = sorted(pool.queue)
        if leftovers:
            logger.warning("reannotation timed out; %d instances kept unchanged",
                           len(leftovers))
            self.timeout_count += len(leftovers)
            report.timeouts += len(leftovers)
            for instance_id in leftovers:
                record = pool.record(instance_id)
                annotation = Annotation(record.annotated_label, record.surface_answer)
                result = ReannotationResult(annotation.label, annotation.surface,
                                            ReannotationOutcome.UNCHANGED)
                _resolve_and_tally(pool, truth, instance_id, result, report)
        return report


def make_oracle(kind: str, corpus: Corpus, refined: RefinedCorpus,
                mapping: CanonicalMapping, bridge=None,
                timeout: float = DEFAULT_REMOTE_TIMEOUT) -> Oracle:
    if kind == "lazy":
        return LazyOracle()
    if kind == "simulated_diligent":
        return SimulatedDiligentOracle(corpus)
    if kind == "hierarchical":
        return HierarchicalOracle(corpus, refined, mapping)
    if kind == "remote_human":
        return RemoteHumanOracle(corpus, refined, mapping, bridge, timeout)
    raise OracleError(f"unknown oracle kind {kind!r}; expected one of {ORACLE_KINDS}")


def build_request_view(corpus: Corpus, refined: RefinedCorpus,
                       mapping: CanonicalMapping, record: InstanceRecord,
                       annotation: Annotation, report, case,
                       probabilities: np.ndarray, top_k: int = 5) -> dict:
    """JSON-ready view of one flagged instance for the human oracle."""
    order = np.argsort(probabilities)[::-1][: min(top_k, len(probabilities))]
    view = {
        "instance_id": record.id,
        "qtype": record.qtype,
        "surface_answer": annotation.surface,
        "current_label": corpus.surface(annotation.label),
        "predictions": [
            {"surface": corpus.surface(int(t)), "probability": float(probabilities[t])}
            for t in order
        ],
        "logdet_cov": float(report.logdet_cov),
        "loss": float(report.loss),
        "case": case.value if hasattr(case, "value") else str(case),
    }
    match = canonicalize(mapping, refined, annotation.surface or "", record.qtype)
    if match.kind is MatchKind.RESOLVED:
        view["suggested"] = corpus.surface(match.term_id)
    return view


# ---------------------------------------------------------------------------
# synthetic generation


@dataclass(frozen=True)
class GeneratorConfig:
    """Shape of the synthetic corpus and dataset.

    `num_terms` counts canonical terms; every canonical also gets one
    merge-group variant, so the full vocabulary is twice this size.
    `qtype_mix` maps question types to canonical-term counts (None splits
    evenly); `zipf_exponent` 0 draws clean labels uniformly, larger values
    skew toward early terms.
    """

    num_instances: int
    num_terms: int
    embedding_dim: int
    feature_dim: int
    spread: float = 0.5
    zipf_exponent: float = 0.0
    qtype_mix: dict | None = None
    noise: NoiseModel = NoiseModel()
    seed: int = 0

    def __post_init__(self):
        if self.num_instances < 1:
            raise OracleError("num_instances must be >= 1")
        if self.num_terms < 4:
            raise OracleError("num_terms must be >= 4")
        if self.embedding_dim < 1 or self.feature_dim < 1:
            raise OracleError("embedding_dim and feature_dim must be >= 1")
        if self.spread < 0:
            raise OracleError("spread must be >= 0")
        if self.zipf_exponent < 0:
            raise OracleError("zipf_exponent must be >= 0")
        if self.qtype_mix is not None:
            unknown = set(self.qtype_mix) - set(QUESTION_TYPES)
            if unknown:
                raise OracleError(f"unknown question types in mix: {sorted(unknown)}")
            if any(v < 0 for v in self.qtype_mix.values()):
                raise OracleError("qtype_mix counts must be >= 0")
            if sum(self.qtype_mix.values()) != self.num_terms:
                raise OracleError("qtype_mix counts must sum to num_terms")

    def type_counts(self) -> dict:
        if self.qtype_mix is not None:
            return {t: int(self.qtype_mix.get(t, 0)) for t in QUESTION_TYPES}
        counts = {t: 0 for t in QUESTION_TYPES}
        for i in range(self.num_terms):
            counts[QUESTION_TYPES[i % len(QUESTION_TYPES)]] += 1
        return counts


@dataclass(frozen=True)
class SyntheticBundle:
    corpus: Corpus
    embeddings: EmbeddingTable
    refined: RefinedCorpus
    mapping: CanonicalMapping
    dataset: Dataset
    plan: NoisePlan
    fallbacks: dict  # requested kind -> count of canonical_correct fallbacks


_SURFACE_STEMS = {"quantity": "", "color": "color", "shape": "shape", "other": "thing"}


def _canonical_layout(counts: dict) -> list:
    """Interleave types round-robin so skewed draws still touch every type."""
    ordered = []
    depth = max(counts.values(), default=0)
    for rank in range(depth):
        for qtype in QUESTION_TYPES:
            if rank < counts[qtype]:
                ordered.append((f"{_SURFACE_STEMS[qtype]}{rank}", qtype))
    return ordered


def _unit_offset(rng, dim: int) -> np.ndarray:
    raw = rng.normal(size=dim)
    return _VARIANT_OFFSET * raw / max(float(np.linalg.norm(raw)), 1e-12)


def generate_synthetic(config: GeneratorConfig) -> SyntheticBundle:
    """Build corpus, refinement, embeddings, and an annotated dataset.

    Everything is a pure function of the config; a fixed config yields
    byte-identical serialized files.
    """
    counts = config.type_counts()
    layout = _canonical_layout(counts)
    n_canon = len(layout)

    terms = [
        Term(id=i, surface=surface, question_types=(qtype,))
        for i, (surface, qtype) in enumerate(layout)
    ]
    terms += [
        Term(id=n_canon + i, surface=f"{surface}ish", question_types=(qtype,))
        for i, (surface, qtype) in enumerate(layout)
    ]
    corpus = Corpus(terms)
    refined = build_refined_corpus(
        corpus, [((cid, n_canon + cid), cid) for cid in range(n_canon)]
    )
    mapping = CanonicalMapping(corpus=corpus, refined=refined, synonyms={})

    # designated alt partners: disjoint pairs within each question type
    by_type: dict = {}
    for cid, (_, qtype) in enumerate(layout):
        by_type.setdefault(qtype, []).append(cid)
    partners: dict = {}
    for ids in by_type.values():
        for a, b in zip(ids[0::2], ids[1::2]):
            partners[a] = b
            partners[b] = a
    plan = NoisePlan.build(corpus, refined, partners)

    if config.noise.rate_alt_valid > 0 and not partners:
        raise OracleError("rate_alt_valid > 0 but no question type has two canonical terms")
    if config.noise.rate_irrelevant > 0 and len({q for _, q in layout}) < 2:
        raise OracleError("rate_irrelevant > 0 but only one question type is present")

    emb_rng = np.random.default_rng([config.seed, 1])
    vectors = np.zeros((2 * n_canon, config.embedding_dim))
    for cid in range(n_canon):
        partner = partners.get(cid)
        if partner is not None and partner < cid:
            vectors[cid] = vectors[partner] + _unit_offset(emb_rng, config.embedding_dim)
        else:
            vectors[cid] = emb_rng.normal(size=config.embedding_dim)
    for cid in range(n_canon):
        vectors[n_canon + cid] = vectors[cid] + _unit_offset(emb_rng, config.embedding_dim)
    embeddings = EmbeddingTable(vectors=vectors)

    proto_rng = np.random.default_rng([config.seed, 2])
    prototypes = proto_rng.normal(size=(n_canon, config.feature_dim))

    label_rng = np.random.default_rng([config.seed, 3])
    if config.zipf_exponent > 0:
        weights = 1.0 / np.power(np.arange(1, n_canon + 1, dtype=np.float64),
                                 config.zipf_exponent)
        weights /= weights.sum()
    else:
        weights = np.full(n_canon, 1.0 / n_canon)
    clean_labels = label_rng.choice(n_canon, size=config.num_instances, p=weights)

    noise_rng = np.random.default_rng([config.seed, 4])
    features = prototypes[clean_labels] + config.spread * noise_rng.normal(
        size=(config.num_instances, config.feature_dim)
    )

    records, annotations, truth = [], {}, {}
    fallbacks = {kind: 0 for kind in NOISE_KINDS if kind != "canonical_correct"}
    for i in range(config.num_instances):
        clean = int(clean_labels[i])
        qtype = layout[clean][1]
        records.append(InstanceRecord(id=i, features=features[i], qtype=qtype))
        planned = annotate_initial(i, clean, qtype, config.noise, plan)
        annotations[i] = Annotation(planned.label, planned.surface)
        truth[i] = SimulationTruth(clean_label=clean, noise_kind=planned.kind)
        if planned.fell_back:
            # the requested kind had no variant; the annotation stayed clean
            u_kind = _requested_kind(i, config.noise)
            fallbacks[u_kind] += 1

    dataset = Dataset(records=records, annotations=annotations, truth=truth)
    return SyntheticBundle(corpus=corpus, embeddings=embeddings, refined=refined,
                           mapping=mapping, dataset=dataset, plan=plan,
                           fallbacks=fallbacks)


def _requested_kind(instance_id: int, noise: NoiseModel) -> str:
    rng = np.random.default_rng([noise.seed, _ANNOTATION_STREAM, instance_id])
    u = rng.random()
    if u < noise.rate_alt_valid:
        return "alt_valid"
    if u < noise.rate_alt_valid + noise.rate_non_canonical:
        return "non_canonical"
    if u < noise.rate_alt_valid + noise.rate_non_canonical + noise.rate_irrelevant:
        return "irrelevant"
    return "canonical_correct"


def write_bundle(bundle: SyntheticBundle, out_dir) -> dict:
    """Serialize a bundle to corpus.tsv, refinement.json, dataset.jsonl."""
    from pathlib import Path

    from .corpus import save_corpus, save_refinement
    from .pools import write_dataset

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {
        "corpus": out / "corpus.tsv",
        "refinement": out / "refinement.json",
        "dataset": out / "dataset.jsonl",
    }
    save_corpus(bundle.corpus, bundle.embeddings, paths["corpus"])
    save_refinement(bundle.mapping, paths["refinement"])
    write_dataset(bundle.dataset, paths["dataset"])
    return {name: str(path) for name, path in paths.items()}


def load_bundle(corpus_path, refinement_path, dataset_path) -> SyntheticBundle:
    """Read back a serialized bundle; partner tables are not serialized."""
    from .corpus import load_corpus, load_refinement
    from .pools import load_dataset

    corpus, embeddings = load_corpus(corpus_path)
    refined, mapping = load_refinement(refinement_path, corpus)
    dataset = load_dataset(dataset_path)
    plan = NoisePlan.build(corpus, refined)
    return SyntheticBundle(corpus=corpus, embeddings=embeddings, refined=refined,
                           mapping=mapping, dataset=dataset, plan=plan,
                           fallbacks={})
