import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import problems
from oracles import (
    exact_beta,
    integrated_assignment_prob,
    integrated_count_prob,
    log_fraction,
)
from mrs.core import Condition, Dataset, Rule, RuleSet, build_coverage
from mrs.errors import ConfigError, InvariantError
from mrs.evaluation import make_schema
from mrs.posterior import (
    ConfusionCounts,
    Hyperparams,
    LikelihoodHyperparams,
    PriorHyperparams,
    Scorer,
    log_beta,
    log_likelihood,
    log_neg_binomial,
    log_prior,
    score,
)

ONES = LikelihoodHyperparams(1, 1, 1, 1)


class TestHyperparams:
    @pytest.mark.parametrize("field", ["alpha_M", "beta_M", "alpha_L", "beta_L", "theta"])
    def test_prior_must_be_positive(self, field):
        with pytest.raises(ConfigError):
            PriorHyperparams(**{field: 0.0})

    def test_likelihood_must_be_positive(self):
        with pytest.raises(ConfigError):
            LikelihoodHyperparams(alpha_pos=-1)

    def test_warns_when_prior_prefers_complexity(self):
        with pytest.warns(UserWarning):
            PriorHyperparams(alpha_L=5, beta_L=1)

    def test_theta_length_checked(self):
        schema = make_schema([("a", 2), ("b", 2)])
        with pytest.raises(ConfigError):
            log_prior(RuleSet(), schema, PriorHyperparams(theta=(1.0, 1.0, 1.0)))


class TestLogPrior:
    def test_empty_ruleset(self):
        hp = PriorHyperparams(alpha_M=1, beta_M=9, alpha_L=1, beta_L=9)
        schema = make_schema([("a", 2)])
        assert log_prior(RuleSet(), schema, hp) == pytest.approx(math.log(0.9), abs=1e-12)
        assert math.log(integrated_count_prob([0], 1, 9)) == pytest.approx(math.log(0.9), abs=1e-9)

    def test_single_rule_both_items_on_one_feature(self):
        schema = make_schema([("a", 3), ("b", 3)])
        hp = PriorHyperparams(alpha_M=1, beta_M=9, alpha_L=1, beta_L=9, theta=1.0)
        rs = RuleSet([Rule([Condition(0, [0, 1])])])
        assignment = integrated_assignment_prob([(2, 0)], (1.0, 1.0))
        assert assignment == pytest.approx(1 / 3, abs=1e-9)
        expected = (math.log(integrated_count_prob([1], 1, 9))
                    + math.log(integrated_count_prob([2], 1, 9)) + math.log(assignment))
        assert log_prior(rs, schema, hp) == pytest.approx(expected, abs=1e-3)

    def test_rule_order_irrelevant(self):
        schema = make_schema([("a", 3), ("b", 2), ("c", 4)])
        r1 = Rule([Condition(0, [0, 2]), Condition(2, [1])])
        r2 = Rule([Condition(1, [1])])
        hp = PriorHyperparams(theta=(0.5, 2.0, 1.5))
        assert log_prior(RuleSet([r1, r2]), schema, hp) == log_prior(RuleSet([r2, r1]), schema, hp)

    def test_feature_reuse_is_rewarded(self):
        # same lengths, but one model spreads over two features
        schema = make_schema([("a", 4), ("b", 4), ("c", 4)])
        hp = PriorHyperparams()
        shared = RuleSet([Rule([Condition(0, [0])]), Rule([Condition(0, [1])])])
        spread = RuleSet([Rule([Condition(0, [0])]), Rule([Condition(1, [1])])])
        assert log_prior(shared, schema, hp) > log_prior(spread, schema, hp)

    def test_shorter_is_better(self):
        schema = make_schema([("a", 4), ("b", 4)])
        hp = PriorHyperparams()
        short = RuleSet([Rule([Condition(0, [0])])])
        longer = RuleSet([Rule([Condition(0, [0]), Condition(1, [1])])])
        assert log_prior(short, schema, hp) > log_prior(longer, schema, hp)

    def test_neg_binomial_normalizes(self):
        total = sum(math.exp(log_neg_binomial(k, 2.5, 1.5)) for k in range(400))
        assert total == pytest.approx(1.0, abs=1e-12)


@settings(max_examples=200, deadline=None)
@given(problems(canonical=True), st.randoms(use_true_random=False))
def test_prior_exchangeable(problem, rnd):
    ds, rs = problem
    hp = PriorHyperparams(theta=tuple(0.5 + j for j in range(len(ds.schema))))
    rules = list(rs.rules)
    rnd.shuffle(rules)
    shuffled = [Rule(reversed([Condition(c.feature, list(reversed(c.values))) for c in r]))
                for r in rules]
    assert log_prior(RuleSet(shuffled), ds.schema, hp) == log_prior(rs, ds.schema, hp)


class TestLogLikelihood:
    def test_single_true_positive(self):
        assert log_likelihood(ConfusionCounts(1, 0, 0, 0), ONES) == pytest.approx(math.log(0.5), abs=1e-14)
        assert log_fraction(exact_beta(2, 1) * exact_beta(1, 1)) == pytest.approx(math.log(0.5))

    def test_empty_data_is_prior_normalizer(self):
        hp = LikelihoodHyperparams(3, 2, 5, 7)
        assert log_likelihood(ConfusionCounts(0, 0, 0, 0), hp) == pytest.approx(
            log_beta(3, 2) + log_beta(5, 7), abs=1e-14)

    def test_three_to_one(self):
        assert exact_beta(4, 2) == Fraction(1, 20)
        expected = math.log(1 / 20) + log_fraction(exact_beta(1 + 2, 1 + 5))
        assert log_likelihood(ConfusionCounts(3, 1, 2, 5), ONES) == pytest.approx(expected, rel=1e-12)

    def test_closed_form_with_unit_hyperparameters(self):
        for a in range(0, 31):
            for b in range(0, 31 - a):
                exact = Fraction(1, (a + b + 1) * math.comb(a + b, a))
                assert exact == exact_beta(a + 1, b + 1)
                got = log_likelihood(ConfusionCounts(a, b, 0, 0), ONES)
                assert got == pytest.approx(log_fraction(exact), rel=1e-12, abs=1e-13)

    def test_dominance_grid(self):
        hp = LikelihoodHyperparams(100, 1, 100, 1)
        for size in range(1, 25):
            pos = [log_likelihood(ConfusionCounts(tp, size - tp, 0, 0), hp) for tp in range(size + 1)]
            neg = [log_likelihood(ConfusionCounts(0, 0, tn, size - tn), hp) for tn in range(size + 1)]
            assert all(np.diff(pos) > 0) and all(np.diff(neg) > 0)


class TestScore:
    @pytest.fixture
    def ten_rows(self):
        schema = make_schema([("a", 2), ("b", 5)])
        rows = [[1, 0], [1, 1], [1, 2], [0, 0], [0, 1], [0, 2], [0, 3], [0, 4], [1, 3], [1, 4]]
        labels = [1, 1, 1, 0, 0, 0, 0, 0, 0, 0]
        return Dataset(schema, rows, labels)

    def test_empty_covers_nothing(self, ten_rows):
        s = score(RuleSet(), ten_rows, build_coverage(ten_rows, RuleSet()), Hyperparams())
        assert s.counts == ConfusionCounts(0, 0, 7, 3)

    def test_perfect_cover_maximizes_likelihood(self, ten_rows):
        rs = RuleSet([Rule([Condition(0, [1]), Condition(1, [0, 1, 2])])])
        hps = Hyperparams()
        s = score(rs, ten_rows, build_coverage(ten_rows, rs), hps)
        assert s.counts == ConfusionCounts(3, 0, 7, 0)
        # every coverage pattern is some (tp, fp) with tp <= 3, fp <= 7
        best = max(log_likelihood(ConfusionCounts(tp, fp, 7 - fp, 3 - tp), hps.likelihood)
                   for tp in range(4) for fp in range(8))
        assert s.log_likelihood == best
        assert s.total == s.log_prior + s.log_likelihood

    def test_rule_order_invariant(self, ten_rows):
        r1, r2 = Rule([Condition(0, [1])]), Rule([Condition(1, [4])])
        a, b = RuleSet([r1, r2]), RuleSet([r2, r1])
        hps = Hyperparams()
        assert score(a, ten_rows, build_coverage(ten_rows, a), hps) == \
            score(b, ten_rows, build_coverage(ten_rows, b), hps)

    def test_length_mismatch(self, ten_rows):
        small = ten_rows.subset([0, 1])
        with pytest.raises(InvariantError):
            score(RuleSet(), ten_rows, build_coverage(small, RuleSet()), Hyperparams())

    def test_scorer_matches_score(self, ten_rows):
        scorer = Scorer(ten_rows, Hyperparams())
        rs = RuleSet([Rule([Condition(0, [1])])])
        assert scorer(rs) == score(rs, ten_rows, build_coverage(ten_rows, rs), Hyperparams())
        assert scorer(rs) is scorer(rs)


@settings(max_examples=200, deadline=None)
@given(problems(canonical=True), st.integers(0, 2**32 - 1))
def test_row_permutation_invariant(problem, seed):
    ds, rs = problem
    perm = np.random.default_rng(seed).permutation(ds.n_rows)
    shuffled = Dataset(ds.schema, ds.rows[perm], ds.labels[perm])
    hps = Hyperparams()
    assert score(rs, ds, build_coverage(ds, rs), hps) == \
        score(rs, shuffled, build_coverage(shuffled, rs), hps)
