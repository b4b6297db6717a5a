"""Epoch orchestrator: selection, reannotation, training, evaluation.

Each epoch runs its phases in a fixed order (selection if scheduled, then
reannotation if scheduled, then one training pass over the labeled pool),
evaluates on a held-out split carved before pooling, and logs everything a
later metrics pass needs.  Runs are pure functions of (config, dataset,
seed): two invocations with the same inputs serialize byte-identically.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .learner import SoftmaxLearner, spawn_heads, train_bootstrap_heads
from .oracle import (
    DEFAULT_REMOTE_TIMEOUT,
    ORACLE_KINDS,
    OUTCOME_NAMES,
    build_request_view,
    make_oracle,
)
from .policy import (
    STRATEGY_KINDS,
    BudgetSchedule,
    FiltrationThresholds,
    budget,
    categorize,
    filter_for_reannotation,
    filtration_stats,
    make_strategy,
    score,
    select_top_k,
)
from .pools import Annotation, Pool
from .uncertainty import DEFAULT_EPSILON, UncertaintyReport, batch_logdet_cov

_EVAL_STREAM = 11
_SELECTION_STREAM = 13


class LoopError(ValueError):
    """Invalid loop configuration or inconsistent run inputs."""


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.1
    batch_size: int = 32
    steps_per_epoch: int | None = None
    seed: int = 0
    ensemble_heads: int = 0

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise LoopError("learning_rate must be > 0")
        if self.batch_size < 1:
            raise LoopError("batch_size must be >= 1")
        if self.steps_per_epoch is not None and self.steps_per_epoch < 1:
            raise LoopError("steps_per_epoch must be >= 1 or None for a full pass")
        if self.ensemble_heads < 0:
            raise LoopError("ensemble_heads must be >= 0")


@dataclass(frozen=True)
class LoopConfig:
    num_epochs: int
    strategy: str
    schedule: BudgetSchedule
    oracle_kind: str
    train: TrainConfig = TrainConfig()
    selection_epochs: tuple | str = "every"
    reannotation_epochs: tuple = ()
    thresholds: FiltrationThresholds = FiltrationThresholds()
    eval_split_fraction: float = 0.2
    auc_baseline: float = 20.0
    score_thresholds: tuple = ()
    epsilon: float = DEFAULT_EPSILON
    remote_timeout: float = DEFAULT_REMOTE_TIMEOUT
    master_seed: int = 0

    def __post_init__(self):
        if self.num_epochs < 0:
            raise LoopError("num_epochs must be >= 0")
        if self.strategy not in STRATEGY_KINDS:
            raise LoopError(f"unknown strategy {self.strategy!r}")
        if self.oracle_kind not in ORACLE_KINDS:
            raise LoopError(f"unknown oracle {self.oracle_kind!r}")
        object.__setattr__(self, "reannotation_epochs",
                           tuple(int(e) for e in self.reannotation_epochs))
        for epoch in self.reannotation_epochs:
            if not 0 <= epoch < max(self.num_epochs, 1):
                raise LoopError(f"reannotation epoch {epoch} outside [0, num_epochs)")
        if self.selection_epochs != "every":
            object.__setattr__(self, "selection_epochs",
                               tuple(int(e) for e in self.selection_epochs))
            for epoch in self.selection_epochs:
                if not 0 <= epoch < max(self.num_epochs, 1):
                    raise LoopError(f"selection epoch {epoch} outside [0, num_epochs)")
        if not 0 < self.eval_split_fraction < 1:
            raise LoopError("eval_split_fraction must be in (0, 1)")
        if not 0 <= self.auc_baseline <= 100:
            raise LoopError("auc_baseline must be in [0, 100]")
        object.__setattr__(self, "score_thresholds",
                           tuple(float(t) for t in self.score_thresholds))
        if list(self.score_thresholds) != sorted(self.score_thresholds):
            raise LoopError("score_thresholds must be ascending")
        if self.strategy == "infogain_bald" and self.train.ensemble_heads < 2:
            raise LoopError("infogain_bald needs train.ensemble_heads >= 2")

    def wants_selection(self, epoch: int) -> bool:
        if self.selection_epochs == "every":
            return True
        return epoch in self.selection_epochs

    def wants_reannotation(self, epoch: int) -> bool:
        return epoch in self.reannotation_epochs

    def to_dict(self) -> dict:
        doc = {
            "num_epochs": self.num_epochs,
            "strategy": self.strategy,
            "schedule": {
                "kind": self.schedule.kind,
                "initial_batch": self.schedule.initial_batch,
                "per_round": self.schedule.per_round,
                "stop_below": self.schedule.stop_below,
                "high_batch": self.schedule.high_batch,
                "upper_threshold": self.schedule.upper_threshold,
                "lower_threshold": self.schedule.lower_threshold,
                "fraction": self.schedule.fraction,
            },
            "oracle": self.oracle_kind,
            "train": {
                "learning_rate": self.train.learning_rate,
                "batch_size": self.train.batch_size,
                "steps_per_epoch": self.train.steps_per_epoch,
                "seed": self.train.seed,
                "ensemble_heads": self.train.ensemble_heads,
            },
            "selection_epochs": ("every" if self.selection_epochs == "every"
                                 else list(self.selection_epochs)),
            "reannotation_epochs": list(self.reannotation_epochs),
            "thresholds": {"z_cov": self.thresholds.z_cov,
                           "z_loss": self.thresholds.z_loss},
            "eval_split_fraction": self.eval_split_fraction,
            "auc_baseline": self.auc_baseline,
            "score_thresholds": list(self.score_thresholds),
            "epsilon": self.epsilon,
            "remote_timeout": self.remote_timeout,
            "master_seed": self.master_seed,
        }
        return doc


@dataclass
class EpochLog:
    epoch: int
    em1: float | None
    em1_annotation: float
    mean_train_loss: float | None
    selected_count: int
    selected_ids: tuple
    reannotation_ran: bool
    flagged_count: int
    flagged_ids: tuple
    flagged_noisy_count: int | None
    outcome_counts: dict
    outcome_crosstab: dict
    pool_unlabeled: int
    pool_labeled: int
    pool_flagged: int

    def to_dict(self) -> dict:
        return {
            "epoch": self.epoch,
            "em1": self.em1,
            "em1_annotation": self.em1_annotation,
            "mean_train_loss": self.mean_train_loss,
            "selected_count": self.selected_count,
            "selected_ids": list(self.selected_ids),
            "reannotation_ran": self.reannotation_ran,
            "flagged_count": self.flagged_count,
            "flagged_ids": list(self.flagged_ids),
            "flagged_noisy_count": self.flagged_noisy_count,
            "outcome_counts": dict(self.outcome_counts),
            "outcome_crosstab": {k: dict(v) for k, v in self.outcome_crosstab.items()},
            "pool_sizes": [self.pool_unlabeled, self.pool_labeled, self.pool_flagged],
        }


@dataclass
class ExperimentResult:
    config: dict
    logs: list
    best_cumulative: list
    auc: float
    cost_to_threshold: dict
    outcome_ratios: dict
    eval_size: int
    train_pool_size: int
    primary_series: str  # "clean" in simulation, "annotation" otherwise
    final: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "config": self.config,
            "logs": [log.to_dict() for log in self.logs],
            "best_cumulative": list(self.best_cumulative),
            "auc": self.auc,
            "cost_to_threshold": self.cost_to_threshold,
            "outcome_ratios": self.outcome_ratios,
            "eval_size": self.eval_size,
            "train_pool_size": self.train_pool_size,
            "primary_series": self.primary_series,
            "final": self.final,
        }


# ---------------------------------------------------------------------------
# metrics


def cumulative_best(series) -> list:
    best, out = None, []
    for value in series:
        best = value if best is None else max(best, value)
        out.append(best)
    return out


def auc_above_baseline(series, baseline: float) -> float:
    if not 0 <= baseline <= 100:
        raise LoopError("baseline must be in [0, 100]")
    return float(sum(max(value - baseline, 0.0) for value in series))


def cost_to_threshold(series, thresholds) -> list:
    """First epoch index reaching each threshold, or None when never reached."""
    thresholds = list(thresholds)
    if thresholds != sorted(thresholds):
        raise LoopError("thresholds must be ascending")
    out = []
    for threshold in thresholds:
        found = None
        for index, value in enumerate(series):
            if value >= threshold:
                found = index
                break
        out.append(found)
    return out


def filtration_confusion(logs) -> list:
    """(epoch, correct_rate, false_rate) for each epoch whose filtration ran.

    Correct means the flag caught a genuinely improper annotation.  Rates are
    None when the run has no simulation truth to judge against.
    """
    rows = []
    for log in logs:
        if not log.reannotation_ran:
            continue
        if log.flagged_count == 0:
            rows.append((log.epoch, 0.0, 0.0))
        elif log.flagged_noisy_count is None:
            rows.append((log.epoch, None, None))
        else:
            correct = log.flagged_noisy_count / log.flagged_count
            rows.append((log.epoch, correct, 1.0 - correct))
    return rows


def outcome_ratios(logs) -> dict:
    totals = {name: 0 for name in OUTCOME_NAMES}
    for log in logs:
        for name, count in log.outcome_counts.items():
            totals[name] += count
    processed = sum(totals.values())
    fractions = {
        name: (totals[name] / processed if processed else 0.0) for name in totals
    }
    return {"processed": processed, "fractions": fractions}


def exact_match_pct(model, X, y) -> float:
    return float(100.0 * np.mean(model.predict(X) == y))


# ---------------------------------------------------------------------------
# orchestration


def _noop_observer(event, epoch, pool):
    return None


def split_eval(dataset, fraction: float, master_seed: int) -> tuple:
    """Deterministic held-out carve; eval instances never reach the pools."""
    ids = sorted(record.id for record in dataset.records)
    if len(ids) < 2:
        raise LoopError("need at least 2 instances to carve an eval split")
    rng = np.random.default_rng([master_seed, _EVAL_STREAM])
    order = rng.permutation(len(ids))
    count = int(len(ids) * fraction)
    count = min(max(count, 1), len(ids) - 1)
    eval_ids = sorted(ids[i] for i in order[:count])
    train_ids = sorted(ids[i] for i in order[count:])
    return eval_ids, train_ids


def _assess_labeled(model, pool, embeddings, epsilon):
    """Uncertainty reports for every trainable labeled instance, id-keyed."""
    X, y, ids = pool.labeled_arrays()
    if len(ids) == 0:
        return {}, {}
    probs = np.atleast_2d(model.predict_proba(X))
    logdets = batch_logdet_cov(probs, embeddings.vectors, epsilon)
    losses = model.losses(X, y)
    reports = {}
    for row, instance_id in enumerate(ids):
        reports[instance_id] = UncertaintyReport(
            weighted_variance=0.0,
            logdet_cov=float(logdets[row]),
            entropy=0.0,
            delta=0.0,
            loss=float(losses[row]),
        )
    prob_rows = {instance_id: probs[row] for row, instance_id in enumerate(ids)}
    return reports, prob_rows


def run(config: LoopConfig, dataset, bundle, observer=None, oracle=None) -> ExperimentResult:
    """Execute the full multi-epoch loop and compute every reported metric."""
    observer = observer or _noop_observer
    corpus, embeddings = bundle.corpus, bundle.embeddings
    refined, mapping = bundle.refined, bundle.mapping

    n_terms = len(corpus)
    if len(embeddings) != n_terms:
        raise LoopError("embedding table size disagrees with the corpus")
    feature_dim = int(dataset.records[0].features.shape[0]) if dataset.records else 0
    if feature_dim < 1:
        raise LoopError("dataset has no usable feature vectors")
    for record in dataset.records:
        if record.id not in dataset.annotations:
            raise LoopError(f"instance {record.id} has no planned annotation")

    truth = dataset.truth
    if truth is not None:
        # runs are pure functions of their inputs; clear prior-run bookkeeping
        for entry in truth.values():
            entry.current_kind = entry.noise_kind

    eval_ids, train_ids = split_eval(dataset, config.eval_split_fraction,
                                     config.master_seed)
    by_id = {record.id: record for record in dataset.records}
    X_eval = np.stack([by_id[i].features for i in eval_ids])
    y_eval_annotation = np.array([dataset.annotations[i].label for i in eval_ids])
    y_eval_clean = (np.array([truth[i].clean_label for i in eval_ids])
                    if truth is not None else None)

    pool = Pool.ingest([by_id[i] for i in train_ids])

    model = SoftmaxLearner(
        n_features=feature_dim, n_terms=n_terms,
        learning_rate=config.train.learning_rate,
        batch_size=config.train.batch_size,
        steps_per_epoch=config.train.steps_per_epoch,
        seed=config.train.seed,
    )
    heads = (spawn_heads(model, config.train.ensemble_heads)
             if config.strategy == "infogain_bald" else None)
    strategy = make_strategy(config.strategy)
    if oracle is None:
        oracle = make_oracle(config.oracle_kind, corpus, refined, mapping)

    logs = []
    first_selection_done = False
    for epoch in range(config.num_epochs):
        selected_ids: tuple = ()
        if config.wants_selection(epoch) and pool.unlabeled:
            du_size = len(pool.unlabeled)
            batch = budget(config.schedule, du_size, epoch,
                           is_initial=not first_selection_done)
            if batch > 0:
                unlabeled = [pool.record(i) for i in sorted(pool.unlabeled)]
                rng = np.random.default_rng(
                    [config.master_seed, _SELECTION_STREAM, epoch])
                pairs = score(strategy, model.snapshot(), embeddings, unlabeled,
                              heads=heads, rng=rng, epsilon=config.epsilon)
                selected_ids = tuple(select_top_k(pairs, batch))
                pool.commit_selection(
                    selected_ids, {i: dataset.annotations[i] for i in selected_ids})
            first_selection_done = True
            pool.audit()
            observer("selection_done", epoch, pool)

        reannotation_ran = False
        flagged_ids: tuple = ()
        flagged_noisy = None
        outcome_counts = {name: 0 for name in OUTCOME_NAMES}
        crosstab: dict = {}
        if config.wants_reannotation(epoch):
            reports, prob_rows = _assess_labeled(model, pool, embeddings,
                                                 config.epsilon)
            stats = filtration_stats(reports)
            flag_list = filter_for_reannotation(reports, stats, config.thresholds)
            if flag_list:
                pool.flag(flag_list)
                flagged_ids = tuple(flag_list)
                if truth is not None:
                    flagged_noisy = sum(
                        1 for i in flag_list
                        if pool.record(i).annotated_label != truth[i].clean_label
                    )
                views = {}
                for instance_id in flag_list:
                    record = pool.record(instance_id)
                    annotation = Annotation(record.annotated_label,
                                            record.surface_answer)
                    report = reports[instance_id]
                    views[instance_id] = build_request_view(
                        corpus, refined, mapping, record, annotation, report,
                        categorize(report, stats, config.thresholds),
                        prob_rows[instance_id],
                    )
                observer("reannotation_start", epoch, pool)
                queue_report = oracle.process_queue(pool, truth=truth, views=views)
                outcome_counts = queue_report.outcome_counts
                crosstab = queue_report.crosstab
            elif truth is not None:
                flagged_noisy = 0
            reannotation_ran = True
            pool.audit()
            observer("reannotation_done", epoch, pool)

        mean_loss = None
        if pool.labeled:
            X, y, _ = pool.labeled_arrays()
            mean_loss = model.train_epoch(X, y, epoch_index=epoch)
            if heads is not None:
                train_bootstrap_heads(heads, X, y, epoch_index=epoch)
        observer("train_done", epoch, pool)

        em1 = (exact_match_pct(model, X_eval, y_eval_clean)
               if y_eval_clean is not None else None)
        em1_annotation = exact_match_pct(model, X_eval, y_eval_annotation)
        unlabeled_n, labeled_n, flagged_n = pool.sizes()
        logs.append(EpochLog(
            epoch=epoch,
            em1=em1,
            em1_annotation=em1_annotation,
            mean_train_loss=mean_loss,
            selected_count=len(selected_ids),
            selected_ids=selected_ids,
            reannotation_ran=reannotation_ran,
            flagged_count=len(flagged_ids),
            flagged_ids=flagged_ids,
            flagged_noisy_count=flagged_noisy,
            outcome_counts=outcome_counts,
            outcome_crosstab=crosstab,
            pool_unlabeled=unlabeled_n,
            pool_labeled=labeled_n,
            pool_flagged=flagged_n,
        ))
        pool.audit()
        observer("epoch_done", epoch, pool)

    primary_series = "clean" if truth is not None else "annotation"
    series = [log.em1 if primary_series == "clean" else log.em1_annotation
              for log in logs]
    best = cumulative_best(series)
    costs = cost_to_threshold(best, config.score_thresholds)
    result = ExperimentResult(
        config=config.to_dict(),
        logs=logs,
        best_cumulative=best,
        auc=auc_above_baseline(best, config.auc_baseline),
        cost_to_threshold={
            _threshold_key(t): c for t, c in zip(config.score_thresholds, costs)
        },
        outcome_ratios=outcome_ratios(logs),
        eval_size=len(eval_ids),
        train_pool_size=len(train_ids),
        primary_series=primary_series,
        final={
            "em1": logs[-1].em1 if logs else None,
            "em1_annotation": logs[-1].em1_annotation if logs else None,
            "best": best[-1] if best else None,
            "epochs": len(logs),
        },
    )
    observer("run_end", config.num_epochs, pool)
    return result


def _threshold_key(threshold: float) -> str:
    # integral thresholds print without the trailing .0 for stable file keys
    return str(int(threshold)) if float(threshold).is_integer() else str(threshold)


# ---------------------------------------------------------------------------
# artifact writers


def write_result_json(result: ExperimentResult, path) -> None:
    Path(path).write_text(
        json.dumps(result.to_dict(), indent=2, sort_keys=True) + "\n",
        encoding="utf-8",
    )


def write_curves_csv(result: ExperimentResult, path) -> None:
    with Path(path).open("w", encoding="utf-8", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(["epoch", "em1", "em1_annotation", "best_cumulative",
                         "unlabeled", "labeled", "flagged"])
        for log, best in zip(result.logs, result.best_cumulative):
            writer.writerow([
                log.epoch,
                "" if log.em1 is None else log.em1,
                log.em1_annotation,
                best,
                log.pool_unlabeled,
                log.pool_labeled,
                log.pool_flagged,
            ])


def write_filtration_csv(result: ExperimentResult, path) -> None:
    rows = {epoch: (correct, false)
            for epoch, correct, false in filtration_confusion(result.logs)}
    with Path(path).open("w", encoding="utf-8", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(["epoch", "flagged", "correct_rate", "false_rate",
                         "hit", "resolved", "manual_replaced", "unchanged"])
        for log in result.logs:
            if log.epoch not in rows:
                continue
            correct, false = rows[log.epoch]
            writer.writerow([
                log.epoch,
                log.flagged_count,
                "N/A" if correct is None else correct,
                "N/A" if false is None else false,
                log.outcome_counts.get("hit", 0),
                log.outcome_counts.get("resolved", 0),
                log.outcome_counts.get("manual_replaced", 0),
                log.outcome_counts.get("unchanged", 0),
            ])
