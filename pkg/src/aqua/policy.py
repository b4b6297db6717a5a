"""Selection strategies, budget schedules, and the reannotation filtration rule.

Strategies score unlabeled instances from an immutable learner snapshot;
higher scores are selected first, ties break toward the lower instance id.
Budgets say how many to take this epoch.  Filtration runs over the labeled
pool: instances whose prediction is semantically concentrated (low
log-determinant) yet disagrees with their annotation (high loss) are the
ones whose labels are most suspect, and only those are flagged.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import NamedTuple

import numpy as np

from .uncertainty import DEFAULT_EPSILON, batch_logdet_cov
from .validation import as_float_array

STRATEGY_KINDS = ("random", "entropy", "infogain_bald", "weighted_variance")
SCHEDULE_KINDS = ("fixed", "scanqa", "vista")


class PolicyError(ValueError):
    """Unknown strategy/schedule kind or unusable scoring inputs."""


# ---------------------------------------------------------------------------
# selection strategies


def _stack_features(instances) -> np.ndarray:
    return np.stack([np.asarray(inst.features, dtype=np.float64) for inst in instances])


def _row_entropies(probs: np.ndarray) -> np.ndarray:
    safe = np.where(probs > 0, probs, 1.0)
    return -np.sum(np.where(probs > 0, probs * np.log(safe), 0.0), axis=1)


class SelectionStrategy:
    kind = "abstract"

    def scores(self, learner, emb, instances, heads=None, rng=None,
               epsilon: float = DEFAULT_EPSILON) -> np.ndarray:
        raise NotImplementedError


class RandomStrategy(SelectionStrategy):
    """Seeded uniform draws; selection becomes a reproducible random batch."""

    kind = "random"

    def scores(self, learner, emb, instances, heads=None, rng=None,
               epsilon: float = DEFAULT_EPSILON) -> np.ndarray:
        if rng is None:
            raise PolicyError("random strategy needs a seeded generator")
        return rng.random(len(instances))


class EntropyStrategy(SelectionStrategy):
    """Classic max-entropy acquisition over the predicted distribution."""

    kind = "entropy"

    def scores(self, learner, emb, instances, heads=None, rng=None,
               epsilon: float = DEFAULT_EPSILON) -> np.ndarray:
        probs = np.atleast_2d(learner.predict_proba(_stack_features(instances)))
        return _row_entropies(probs)


class BaldStrategy(SelectionStrategy):
    """Ensemble disagreement: entropy of the mean minus mean entropy."""

    kind = "infogain_bald"

    def scores(self, learner, emb, instances, heads=None, rng=None,
               epsilon: float = DEFAULT_EPSILON) -> np.ndarray:
        if not heads or len(heads) < 2:
            raise PolicyError("infogain_bald needs an ensemble of at least 2 heads")
        X = _stack_features(instances)
        member_probs = np.stack([np.atleast_2d(h.predict_proba(X)) for h in heads])
        mean_probs = member_probs.mean(axis=0)
        return _row_entropies(mean_probs) - _row_entropies(
            member_probs.reshape(-1, member_probs.shape[-1])
        ).reshape(len(heads), -1).mean(axis=0)


class WeightedVarianceStrategy(SelectionStrategy):
    """Semantic spread of the prediction in embedding space (regularized logdet)."""

    kind = "weighted_variance"

    def scores(self, learner, emb, instances, heads=None, rng=None,
               epsilon: float = DEFAULT_EPSILON) -> np.ndarray:
        probs = np.atleast_2d(learner.predict_proba(_stack_features(instances)))
        return batch_logdet_cov(probs, emb.vectors, epsilon)


_STRATEGIES = {
    cls.kind: cls for cls in (RandomStrategy, EntropyStrategy, BaldStrategy, WeightedVarianceStrategy)
}


def make_strategy(kind: str) -> SelectionStrategy:
    if kind not in _STRATEGIES:
        raise PolicyError(f"unknown strategy {kind!r}; expected one of {STRATEGY_KINDS}")
    return _STRATEGIES[kind]()


def score(strategy, learner, emb, instances, heads=None, rng=None,
          epsilon: float = DEFAULT_EPSILON) -> list:
    """Score instances for selection; returns (id, score) pairs, one per instance."""
    if isinstance(strategy, str):
        strategy = make_strategy(strategy)
    instances = list(instances)
    if not instances:
        return []
    values = as_float_array(
        strategy.scores(learner, emb, instances, heads=heads, rng=rng, epsilon=epsilon),
        "scores",
    )
    if values.shape != (len(instances),):
        raise PolicyError("strategy returned a malformed score vector")
    return [(inst.id, float(v)) for inst, v in zip(instances, values)]


def select_top_k(scores, k: int) -> list:
    """Ids of the k best scores; ties break toward the lower id."""
    if k < 0:
        raise PolicyError("k must be >= 0")
    ranked = sorted(scores, key=lambda pair: (-pair[1], pair[0]))
    return [instance_id for instance_id, _ in ranked[:k]]


# ---------------------------------------------------------------------------
# budgets


@dataclass(frozen=True)
class BudgetSchedule:
    """How many instances to select per epoch.

    fixed: `initial_batch` once, then `per_round`.
    scanqa: `initial_batch` once, then `per_round` while at least `stop_below`
            instances remain unlabeled.
    vista: `initial_batch` once, then a piecewise rule on the pool size:
           `high_batch` above `upper_threshold`, half the pool between the
           thresholds, nothing at or below `lower_threshold`.
    """

    kind: str = "fixed"
    initial_batch: int = 0
    per_round: int = 0
    stop_below: int = 0
    high_batch: int = 1500
    upper_threshold: int = 2250
    lower_threshold: int = 750
    fraction: float = 0.5

    def __post_init__(self):
        if self.kind not in SCHEDULE_KINDS:
            raise PolicyError(f"unknown schedule {self.kind!r}; expected one of {SCHEDULE_KINDS}")
        for name in ("initial_batch", "per_round", "stop_below", "high_batch",
                     "upper_threshold", "lower_threshold"):
            if getattr(self, name) < 0:
                raise PolicyError(f"{name} must be >= 0")

    @classmethod
    def scanqa(cls) -> "BudgetSchedule":
        return cls(kind="scanqa", initial_batch=2000, per_round=1000, stop_below=100)

    @classmethod
    def vista(cls) -> "BudgetSchedule":
        return cls(kind="vista", initial_batch=3000)

    @classmethod
    def fixed(cls, initial_batch: int, per_round: int) -> "BudgetSchedule":
        return cls(kind="fixed", initial_batch=initial_batch, per_round=per_round)


def budget(schedule: BudgetSchedule, du_size: int, epoch: int, is_initial: bool) -> int:
    """Selection batch size for this epoch given the unlabeled pool size."""
    if du_size < 0:
        raise PolicyError("du_size must be >= 0")
    if is_initial:
        return schedule.initial_batch
    if schedule.kind == "fixed":
        return schedule.per_round
    if schedule.kind == "scanqa":
        return schedule.per_round if du_size >= schedule.stop_below else 0
    # vista piecewise rule
    if du_size > schedule.upper_threshold:
        return schedule.high_batch
    if du_size > schedule.lower_threshold:
        return int(np.floor(schedule.fraction * du_size))
    return 0


# ---------------------------------------------------------------------------
# filtration


@dataclass(frozen=True)
class FiltrationThresholds:
    """Z-score cutoffs: flag below z_cov on logdet AND above z_loss on loss."""

    z_cov: float = -1.0
    z_loss: float = 3.0


class CaseLabel(str, Enum):
    LEARNED = "learned"
    UNCERTAIN = "uncertain"
    INCOMPATIBLE = "incompatible"


class FiltrationStats(NamedTuple):
    mu_cov: float
    sigma_cov: float
    mu_loss: float
    sigma_loss: float


def filtration_stats(reports) -> FiltrationStats | None:
    """Mean and population std of logdet and loss over the labeled pool.

    Fewer than 2 reports carry no distributional signal; returns None and the
    caller skips filtration.
    """
    values = list(reports.values() if hasattr(reports, "values") else reports)
    if len(values) < 2:
        return None
    logdets = np.array([r.logdet_cov for r in values])
    losses = np.array([r.loss for r in values])
    return FiltrationStats(
        mu_cov=float(logdets.mean()),
        sigma_cov=float(logdets.std()),  # population form, divide by N
        mu_loss=float(losses.mean()),
        sigma_loss=float(losses.std()),
    )


def categorize(report, stats: FiltrationStats,
               thresholds: FiltrationThresholds = FiltrationThresholds()) -> CaseLabel:
    """Three-way split of a labeled instance.

    Strict inequalities throughout: a degenerate batch (sigma 0) flags nothing.
    """
    cov_cut = stats.mu_cov + thresholds.z_cov * stats.sigma_cov
    loss_cut = stats.mu_loss + thresholds.z_loss * stats.sigma_loss
    if report.logdet_cov < cov_cut and report.loss > loss_cut:
        return CaseLabel.INCOMPATIBLE
    if report.logdet_cov >= cov_cut:
        return CaseLabel.UNCERTAIN
    return CaseLabel.LEARNED


def filter_for_reannotation(reports, stats: FiltrationStats | None,
                            thresholds: FiltrationThresholds = FiltrationThresholds()) -> list:
    """Ids whose case is Incompatible, ascending; reports keyed by instance id."""
    if stats is None:
        return []
    return sorted(
        instance_id
        for instance_id, report in reports.items()
        if categorize(report, stats, thresholds) is CaseLabel.INCOMPATIBLE
    )
