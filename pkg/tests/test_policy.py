"""Selection, budget, and filtration behavior.

Ranking examples are checked against a brute-force pick-the-best-remaining
oracle, budget values against hand-evaluated piecewise arithmetic, and the
filtration statistics against the statistics module's population formulas.
"""

import math
import statistics

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from aqua.corpus import EmbeddingTable
from aqua.learner import SoftmaxLearner, spawn_heads, train_bootstrap_heads
from aqua.policy import (
    BudgetSchedule,
    CaseLabel,
    FiltrationStats,
    FiltrationThresholds,
    PolicyError,
    budget,
    categorize,
    filter_for_reannotation,
    filtration_stats,
    make_strategy,
    score,
    select_top_k,
)
from aqua.pools import InstanceRecord
from aqua.uncertainty import UncertaintyReport, logdet_cov, weighted_covariance


def pick_best_repeatedly(scores, k):
    """Oracle: take the highest score (lowest id on ties), k times."""
    remaining = list(scores)
    chosen = []
    while remaining and len(chosen) < k:
        best = max(remaining, key=lambda pair: (pair[1], -pair[0]))
        remaining.remove(best)
        chosen.append(best[0])
    return chosen


def report(logdet, loss):
    return UncertaintyReport(
        weighted_variance=0.0, logdet_cov=logdet, entropy=0.0, delta=0.0, loss=loss
    )


def make_instances(features, qtype="other"):
    return [
        InstanceRecord(id=i, features=np.asarray(row, dtype=np.float64), qtype=qtype)
        for i, row in enumerate(features)
    ]


class TestSelectTopK:
    def test_two_of_three_with_tie(self):
        scores = [(1, 0.5), (2, 0.9), (3, 0.5)]
        assert select_top_k(scores, 2) == [2, 1]
        assert select_top_k(scores, 2) == pick_best_repeatedly(scores, 2)

    def test_k_exceeding_pool_returns_all_ranked(self):
        scores = [(7, 0.1), (3, 0.4), (9, 0.4)]
        assert select_top_k(scores, 10) == [3, 9, 7]
        assert select_top_k(scores, 10) == pick_best_repeatedly(scores, 10)

    def test_k_zero_and_empty(self):
        assert select_top_k([(1, 1.0)], 0) == []
        assert select_top_k([], 5) == []

    def test_negative_k_rejected(self):
        with pytest.raises(PolicyError):
            select_top_k([(1, 1.0)], -1)

    def test_all_tied_scores_come_back_in_id_order(self):
        scores = [(5, 1.0), (1, 1.0), (3, 1.0)]
        assert select_top_k(scores, 2) == [1, 3]

    @given(
        st.lists(st.floats(-10, 10), min_size=1, max_size=30, unique=True),
        st.integers(0, 30),
    )
    @settings(max_examples=50, deadline=None)
    def test_matches_pick_oracle(self, values, k):
        scores = list(enumerate(values))
        assert select_top_k(scores, k) == pick_best_repeatedly(scores, k)

    @given(st.floats(0.1, 100.0))
    @settings(max_examples=30, deadline=None)
    def test_scale_free(self, factor):
        scores = [(1, 0.5), (2, 0.9), (3, 0.5), (4, -0.2)]
        scaled = [(i, s * factor) for i, s in scores]
        assert select_top_k(scores, 2) == select_top_k(scaled, 2)


class TestBudget:
    def test_vista_values(self):
        sched = BudgetSchedule.vista()
        assert budget(sched, 5000, 0, True) == 3000
        assert budget(sched, 3000, 1, False) == 1500
        assert budget(sched, 2251, 1, False) == 1500
        assert budget(sched, 2250, 2, False) == 1125
        assert budget(sched, 2000, 2, False) == 1000
        assert budget(sched, 751, 3, False) == 375
        assert budget(sched, 750, 3, False) == 0
        assert budget(sched, 0, 4, False) == 0

    def test_scanqa_values(self):
        sched = BudgetSchedule.scanqa()
        assert budget(sched, 6000, 0, True) == 2000
        assert budget(sched, 4000, 1, False) == 1000
        assert budget(sched, 100, 2, False) == 1000
        assert budget(sched, 99, 2, False) == 0

    def test_fixed_values(self):
        sched = BudgetSchedule.fixed(initial_batch=120, per_round=60)
        assert budget(sched, 1000, 0, True) == 120
        assert budget(sched, 880, 1, False) == 60
        assert budget(sched, 0, 9, False) == 60  # select_top_k caps at the pool

    def test_bad_inputs(self):
        with pytest.raises(PolicyError):
            BudgetSchedule(kind="mystery")
        with pytest.raises(PolicyError):
            BudgetSchedule.fixed(initial_batch=-1, per_round=0)
        with pytest.raises(PolicyError):
            budget(BudgetSchedule.vista(), -1, 0, False)

    @given(st.integers(0, 10000), st.integers(0, 10000))
    @settings(max_examples=60, deadline=None)
    def test_vista_monotone_in_pool_size(self, a, b):
        sched = BudgetSchedule.vista()
        low, high = sorted((a, b))
        assert budget(sched, low, 1, False) <= budget(sched, high, 1, False)

    @given(st.integers(0, 10000))
    @settings(max_examples=60, deadline=None)
    def test_vista_never_exceeds_half_between_thresholds(self, du):
        sched = BudgetSchedule.vista()
        value = budget(sched, du, 1, False)
        assert value >= 0
        if 750 < du <= 2250:
            assert value == math.floor(0.5 * du)


class TestFiltrationStats:
    def test_two_point_population_std(self):
        reports = {0: report(0.0, 0.0), 1: report(2.0, 2.0)}
        stats = filtration_stats(reports)
        assert stats.mu_cov == 1.0
        assert stats.sigma_cov == 1.0  # population form, not the n-1 sample form
        assert stats.mu_loss == 1.0
        assert stats.sigma_loss == 1.0

    def test_matches_statistics_module(self):
        rng = np.random.default_rng(5)
        logdets = rng.normal(size=9)
        losses = rng.gamma(2.0, size=9)
        reports = {i: report(ld, lo) for i, (ld, lo) in enumerate(zip(logdets, losses))}
        stats = filtration_stats(reports)
        assert stats.mu_cov == pytest.approx(statistics.fmean(logdets))
        assert stats.sigma_cov == pytest.approx(statistics.pstdev(logdets))
        assert stats.mu_loss == pytest.approx(statistics.fmean(losses))
        assert stats.sigma_loss == pytest.approx(statistics.pstdev(losses))

    def test_fewer_than_two_reports_yields_none(self):
        assert filtration_stats({}) is None
        assert filtration_stats({0: report(1.0, 1.0)}) is None


class TestCategorize:
    STATS = FiltrationStats(mu_cov=0.0, sigma_cov=2.0, mu_loss=1.0, sigma_loss=0.5)

    def test_concentrated_and_surprising_is_incompatible(self):
        r = report(self.STATS.mu_cov - 2 * self.STATS.sigma_cov,
                   self.STATS.mu_loss + 4 * self.STATS.sigma_loss)
        assert categorize(r, self.STATS) is CaseLabel.INCOMPATIBLE

    def test_mean_logdet_is_uncertain_whatever_the_loss(self):
        for loss in (0.0, self.STATS.mu_loss, self.STATS.mu_loss + 10):
            r = report(self.STATS.mu_cov, loss)
            assert categorize(r, self.STATS) is CaseLabel.UNCERTAIN

    def test_concentrated_with_typical_loss_is_learned(self):
        r = report(self.STATS.mu_cov - 2 * self.STATS.sigma_cov, self.STATS.mu_loss)
        assert categorize(r, self.STATS) is CaseLabel.LEARNED

    def test_boundary_is_strict(self):
        # exactly at both cuts: not below the cov cut, so the instance
        # falls into the uncertain branch
        cuts = report(self.STATS.mu_cov - 1.0 * self.STATS.sigma_cov,
                      self.STATS.mu_loss + 3.0 * self.STATS.sigma_loss)
        assert categorize(cuts, self.STATS) is CaseLabel.UNCERTAIN

    @given(st.floats(-10, 10), st.floats(0, 10))
    @settings(max_examples=80, deadline=None)
    def test_every_report_gets_exactly_one_case(self, logdet, loss):
        assert categorize(report(logdet, loss), self.STATS) in set(CaseLabel)


class TestFilterForReannotation:
    def test_flags_only_incompatible_ascending(self):
        reports = {
            4: report(-5.0, 9.0),   # concentrated + surprising
            1: report(-5.0, 1.0),   # concentrated, typical loss
            9: report(0.5, 9.0),    # diffuse
            2: report(-5.0, 9.5),   # concentrated + surprising
        }
        stats = FiltrationStats(0.0, 2.0, 1.0, 0.5)
        assert filter_for_reannotation(reports, stats) == [2, 4]

    def test_none_stats_suppresses_filtration(self):
        assert filter_for_reannotation({0: report(-99.0, 99.0)}, None) == []

    def test_zero_sigma_batch_flags_nothing(self):
        reports = {i: report(1.0, 2.0) for i in range(5)}
        stats = filtration_stats(reports)
        assert stats.sigma_cov == 0.0
        assert filter_for_reannotation(reports, stats) == []

    def test_infinite_z_cov_flags_nothing(self):
        thresholds = FiltrationThresholds(z_cov=-math.inf, z_loss=3.0)
        spread = {0: report(-5.0, 9.0), 1: report(5.0, 0.0), 2: report(0.0, 0.0)}
        assert filter_for_reannotation(spread, filtration_stats(spread), thresholds) == []
        flat = {i: report(1.0, float(i)) for i in range(4)}  # sigma_cov == 0 path
        assert filter_for_reannotation(flat, filtration_stats(flat), thresholds) == []

    def test_looser_thresholds_flag_supersets(self):
        rng = np.random.default_rng(11)
        reports = {
            i: report(float(rng.normal()), float(rng.gamma(2.0))) for i in range(40)
        }
        stats = filtration_stats(reports)
        tight = set(filter_for_reannotation(reports, stats, FiltrationThresholds(-1.0, 3.0)))
        loose = set(filter_for_reannotation(reports, stats, FiltrationThresholds(-0.2, 0.5)))
        assert tight <= loose


class TestStrategies:
    N_TERMS = 6
    M = 3

    @pytest.fixture()
    def emb(self):
        rng = np.random.default_rng(3)
        return EmbeddingTable(vectors=rng.normal(size=(self.N_TERMS, self.M)))

    @pytest.fixture()
    def instances(self):
        rng = np.random.default_rng(4)
        return make_instances(rng.normal(size=(8, 5)))

    @pytest.fixture()
    def trained(self, emb, instances):
        model = SoftmaxLearner(n_features=5, n_terms=self.N_TERMS, learning_rate=0.3, seed=2)
        X = np.stack([inst.features for inst in instances])
        y = np.arange(len(instances)) % self.N_TERMS
        model.fit(X, y, epochs=12)
        return model

    def test_unknown_kind_rejected(self):
        with pytest.raises(PolicyError):
            make_strategy("gradient_magic")

    def test_empty_instance_list_scores_empty(self, trained, emb):
        assert score("entropy", trained, emb, []) == []

    def test_random_requires_rng_and_reproduces(self, trained, emb, instances):
        with pytest.raises(PolicyError):
            score("random", trained, emb, instances)
        first = score("random", trained, emb, instances, rng=np.random.default_rng(9))
        second = score("random", trained, emb, instances, rng=np.random.default_rng(9))
        assert first == second
        third = score("random", trained, emb, instances, rng=np.random.default_rng(10))
        assert first != third

    def test_entropy_on_fresh_learner_is_uniform_entropy(self, emb, instances):
        fresh = SoftmaxLearner(n_features=5, n_terms=self.N_TERMS)
        pairs = score("entropy", fresh, emb, instances)
        for _, value in pairs:
            assert value == pytest.approx(math.log(self.N_TERMS))

    def test_entropy_matches_per_instance_route(self, trained, emb, instances):
        pairs = dict(score("entropy", trained, emb, instances))
        for inst in instances:
            probs = trained.predict_proba(inst.features)
            expected = -sum(p * math.log(p) for p in probs if p > 0)
            assert pairs[inst.id] == pytest.approx(expected, abs=1e-10)

    def test_weighted_variance_matches_per_instance_route(self, trained, emb, instances):
        pairs = dict(score("weighted_variance", trained, emb, instances))
        for inst in instances:
            probs = trained.predict_proba(inst.features)
            expected = logdet_cov(weighted_covariance(probs, emb.vectors))
            assert pairs[inst.id] == pytest.approx(expected, abs=1e-5)

    def test_weighted_variance_ranking_survives_rotation(self, trained, emb, instances):
        rng = np.random.default_rng(21)
        q, _ = np.linalg.qr(rng.normal(size=(self.M, self.M)))
        rotated = EmbeddingTable(vectors=emb.vectors @ q)
        base = score("weighted_variance", trained, emb, instances)
        moved = score("weighted_variance", trained, rotated, instances)
        assert select_top_k(base, 4) == select_top_k(moved, 4)

    def test_bald_requires_ensemble(self, trained, emb, instances):
        with pytest.raises(PolicyError):
            score("infogain_bald", trained, emb, instances)
        with pytest.raises(PolicyError):
            score("infogain_bald", trained, emb, instances, heads=[trained])

    def test_bald_zero_for_identical_heads(self, trained, emb, instances):
        pairs = score("infogain_bald", trained, emb, instances, heads=[trained, trained])
        for _, value in pairs:
            assert value == pytest.approx(0.0, abs=1e-12)

    def test_bald_positive_for_disagreeing_heads(self, emb, instances):
        base = SoftmaxLearner(n_features=5, n_terms=self.N_TERMS, learning_rate=0.5, seed=7)
        heads = spawn_heads(base, 4)
        X = np.stack([inst.features for inst in instances])
        y = np.arange(len(instances)) % self.N_TERMS
        for epoch in range(15):
            train_bootstrap_heads(heads, X, y, epoch_index=epoch)
        pairs = score("infogain_bald", base, emb, instances, heads=heads)
        assert all(value >= -1e-9 for _, value in pairs)
        assert max(value for _, value in pairs) > 1e-4

    def test_score_pairs_align_with_instance_ids(self, trained, emb):
        rng = np.random.default_rng(30)
        records = [
            InstanceRecord(id=i * 10 + 3, features=rng.normal(size=5), qtype="color")
            for i in range(5)
        ]
        pairs = score("entropy", trained, emb, records)
        assert [instance_id for instance_id, _ in pairs] == [3, 13, 23, 33, 43]
