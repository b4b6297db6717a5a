"""Dataset state machine: unlabeled pool, labeled pool, reannotation queue.

Every instance lives in exactly one of three places: the unlabeled pool,
the labeled pool, or the flagged queue awaiting reannotation.  Transitions
are one-way per epoch phase (select: unlabeled -> labeled; flag: labeled ->
queue; resolve: queue -> labeled) and the total count is conserved; `audit`
re-checks the whole invariant set and runs after every loop phase.

Simulation-only ground truth (clean label, injected noise kind) is kept in a
side table rather than on the records the learner and policy see, so it
cannot leak into selection or filtration.  The JSON-lines file format still
carries everything per line.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .corpus import check_question_type
from .validation import as_float_array

NOISE_KINDS = ("canonical_correct", "alt_valid", "non_canonical", "irrelevant")


class PoolError(ValueError):
    """Illegal pool transition or malformed dataset."""


class InstanceState(str, Enum):
    UNLABELED = "unlabeled"
    LABELED = "labeled"
    FLAGGED = "flagged"


@dataclass
class InstanceRecord:
    """One question instance as the learner and policy see it."""

    id: int
    features: np.ndarray
    qtype: str
    annotated_label: int | None = None
    surface_answer: str | None = None
    state: InstanceState = InstanceState.UNLABELED

    def __post_init__(self):
        self.features = as_float_array(self.features, f"features of instance {self.id}")
        check_question_type(self.qtype)


class Annotation(NamedTuple):
    """A (term id, raw surface) pair as produced by an annotator."""

    label: int
    surface: str


@dataclass
class SimulationTruth:
    """Hidden per-instance ground truth, available to oracles and metrics only.

    `noise_kind` is what the generator drew; `current_kind` tracks the kind of
    the instance's present annotation, and collapses to canonical_correct once
    a reannotation lands on the clean label.
    """

    clean_label: int
    noise_kind: str
    current_kind: str = ""

    def __post_init__(self):
        if self.noise_kind not in NOISE_KINDS:
            raise PoolError(f"unknown noise kind {self.noise_kind!r}")
        if not self.current_kind:
            self.current_kind = self.noise_kind


@dataclass
class Dataset:
    """Records plus the annotation book and simulation truth they came with."""

    records: list[InstanceRecord]
    annotations: dict  # id -> Annotation (what the initial oracle will answer)
    truth: dict | None = None  # id -> SimulationTruth; None outside simulation

    def __post_init__(self):
        ids = [r.id for r in self.records]
        if len(set(ids)) != len(ids):
            raise PoolError("dataset has duplicate instance ids")

    def __len__(self):
        return len(self.records)


class Pool:
    """Mutable partition of a dataset; single logical owner mutates it."""

    def __init__(self, records):
        self.records = {}
        for record in records:
            if record.id in self.records:
                raise PoolError(f"duplicate instance id {record.id}")
            record.state = InstanceState.UNLABELED
            record.annotated_label = None
            record.surface_answer = None
            self.records[record.id] = record
        self.unlabeled = set(self.records)
        self.labeled = set()
        self.queue = []
        self.total = len(self.records)
        self.resolution_log = []

    @classmethod
    def ingest(cls, records) -> "Pool":
        return cls(records)

    def sizes(self) -> tuple[int, int, int]:
        return len(self.unlabeled), len(self.labeled), len(self.queue)

    def record(self, instance_id: int) -> InstanceRecord:
        try:
            return self.records[instance_id]
        except KeyError:
            raise PoolError(f"unknown instance id {instance_id}") from None

    def commit_selection(self, ids, labels) -> None:
        """Move a selection batch into the labeled pool with its annotations."""
        ids = list(ids)
        if len(set(ids)) != len(ids):
            raise PoolError("selection batch repeats an id")
        for instance_id in ids:
            if instance_id not in self.unlabeled:
                raise PoolError(f"instance {instance_id} is not in the unlabeled pool")
            if instance_id not in labels:
                raise PoolError(f"no label provided for instance {instance_id}")
        for instance_id in ids:
            annotation = labels[instance_id]
            record = self.records[instance_id]
            record.annotated_label = int(annotation[0])
            record.surface_answer = annotation[1]
            record.state = InstanceState.LABELED
            self.unlabeled.discard(instance_id)
            self.labeled.add(instance_id)

    def flag(self, ids) -> None:
        """Move labeled instances into the reannotation queue (ascending id)."""
        ids = list(ids)
        for instance_id in ids:
            if instance_id not in self.labeled:
                raise PoolError(f"instance {instance_id} is not in the labeled pool")
        for instance_id in ids:
            self.labeled.discard(instance_id)
            self.records[instance_id].state = InstanceState.FLAGGED
            self.queue.append(instance_id)
        self.queue.sort()

    def resolve(self, instance_id: int, new_label: int, outcome,
                new_surface: str | None = None) -> None:
        """Return a queued instance to the labeled pool, possibly relabeled."""
        if instance_id not in self.queue:
            raise PoolError(f"instance {instance_id} is not queued for reannotation")
        self.queue.remove(instance_id)
        record = self.records[instance_id]
        record.annotated_label = int(new_label)
        if new_surface is not None:
            record.surface_answer = new_surface
        record.state = InstanceState.LABELED
        self.labeled.add(instance_id)
        self.resolution_log.append((instance_id, outcome))

    def labeled_arrays(self) -> tuple[np.ndarray, np.ndarray, list]:
        """Training view of the labeled pool: features, labels, ids (ascending)."""
        ids = sorted(self.labeled)
        if not ids:
            d = next(iter(self.records.values())).features.shape[0] if self.records else 0
            return np.zeros((0, d)), np.zeros(0, dtype=np.int64), []
        X = np.stack([self.records[i].features for i in ids])
        y = np.array([self.records[i].annotated_label for i in ids], dtype=np.int64)
        return X, y, ids

    def annotation_state(self) -> list:
        """Sorted (id, label, surface) triples across all annotated instances."""
        rows = []
        for instance_id in sorted(self.records):
            record = self.records[instance_id]
            if record.annotated_label is not None:
                rows.append((instance_id, record.annotated_label, record.surface_answer))
        return rows

    def audit(self) -> None:
        """Re-check disjointness, conservation, and per-record consistency."""
        queue_set = set(self.queue)
        if len(queue_set) != len(self.queue) or self.queue != sorted(self.queue):
            raise PoolError("reannotation queue must be ascending and duplicate-free")
        collections = [self.unlabeled, self.labeled, queue_set]
        for i in range(3):
            for j in range(i + 1, 3):
                if collections[i] & collections[j]:
                    raise PoolError("pool collections overlap")
        if len(self.unlabeled) + len(self.labeled) + len(self.queue) != self.total:
            raise PoolError("pool lost or duplicated instances")
        for instance_id, record in self.records.items():
            in_unlabeled = instance_id in self.unlabeled
            if in_unlabeled != (record.annotated_label is None):
                raise PoolError(f"instance {instance_id}: label presence disagrees with state")
            expected = (
                InstanceState.UNLABELED if in_unlabeled
                else InstanceState.FLAGGED if instance_id in queue_set
                else InstanceState.LABELED
            )
            if record.state is not expected:
                raise PoolError(f"instance {instance_id}: state {record.state} != {expected}")


# ---------------------------------------------------------------------------
# dataset file format (JSON lines, one instance per line)


def _record_to_line(record: InstanceRecord, annotation: Annotation | None,
                    truth: SimulationTruth | None) -> str:
    doc = {
        "id": record.id,
        "qtype": record.qtype,
        "features": record.features.tolist(),
        "annotated_label": annotation.label if annotation else None,
        "surface_answer": annotation.surface if annotation else None,
    }
    if truth is not None:
        doc["clean_label"] = truth.clean_label
        doc["noise_kind"] = truth.noise_kind
    return json.dumps(doc, sort_keys=True)


def write_dataset(dataset: Dataset, path) -> None:
    path = Path(path)
    with path.open("w", encoding="utf-8") as handle:
        for record in dataset.records:
            annotation = dataset.annotations.get(record.id)
            truth = dataset.truth.get(record.id) if dataset.truth else None
            handle.write(_record_to_line(record, annotation, truth) + "\n")


def load_dataset(path) -> Dataset:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"dataset file not found: {path}")
    records, annotations, truth = [], {}, {}
    with path.open("r", encoding="utf-8") as handle:
        for lineno, line in enumerate(handle):
            line = line.strip()
            if not line:
                continue
            try:
                doc = json.loads(line)
            except json.JSONDecodeError as exc:
                raise PoolError(f"{path}:{lineno + 1}: bad JSON ({exc})") from None
            known = {"id", "qtype", "features", "annotated_label", "surface_answer",
                     "clean_label", "noise_kind"}
            unknown = set(doc) - known
            if unknown:
                raise PoolError(f"{path}:{lineno + 1}: unknown fields {sorted(unknown)}")
            record = InstanceRecord(
                id=int(doc["id"]),
                features=np.asarray(doc["features"], dtype=np.float64),
                qtype=doc["qtype"],
            )
            records.append(record)
            if doc.get("annotated_label") is not None:
                annotations[record.id] = Annotation(
                    label=int(doc["annotated_label"]),
                    surface=doc.get("surface_answer") or "",
                )
            if doc.get("clean_label") is not None:
                truth[record.id] = SimulationTruth(
                    clean_label=int(doc["clean_label"]),
                    noise_kind=doc.get("noise_kind", "canonical_correct"),
                )
    return Dataset(records=records, annotations=annotations, truth=truth or None)
