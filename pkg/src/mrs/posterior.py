"""Collapsed log-posterior of a rule set.

The prior draws the number of rules and every rule length from Poisson
distributions whose rates carry Gamma(alpha, beta) priors (rate
parameterization), and fills each rule's items with features drawn from
a multinomial whose weights carry a Dirichlet(theta) prior shared by all
rules. All three nuisance parameters are integrated out in closed form:

* rule count ``M``: negative binomial,
* lengths ``L_1..L_M``: Gamma-Poisson compound with one shared rate,
* feature assignment: Dirichlet-multinomial over the pooled per-feature
  item counts, times the within-rule multinomial coefficients.

The likelihood integrates out Bernoulli rates for covered and uncovered
rows, giving ``B(tp+a+, fp+b+) * B(tn+a-, fn+b-)``.
"""

from __future__ import annotations

import math
import warnings
from collections import OrderedDict
from dataclasses import dataclass
from functools import lru_cache
from typing import NamedTuple, Sequence

from .core import CoverageIndex, Dataset, Rule, RuleSet, Schema
from .errors import ConfigError, InvariantError

_lgamma = math.lgamma
_log = math.log


def _check_positive(obj, names):
    for name in names:
        value = getattr(obj, name)
        if not (isinstance(value, (int, float)) and math.isfinite(value) and value > 0):
            raise ConfigError(f"{name} must be a positive real, got {value!r}")


@dataclass(frozen=True)
class PriorHyperparams:
    alpha_M: float = 1.0
    beta_M: float = 10.0
    alpha_L: float = 1.0
    beta_L: float = 10.0
    # scalar means a symmetric Dirichlet over all features
    theta: float | tuple[float, ...] = 1.0

    def __post_init__(self):
        _check_positive(self, ("alpha_M", "beta_M", "alpha_L", "beta_L"))
        if isinstance(self.theta, (list, tuple)):
            object.__setattr__(self, "theta", tuple(float(t) for t in self.theta))
            bad = [t for t in self.theta if not (math.isfinite(t) and t > 0)]
            if bad or not self.theta:
                raise ConfigError(f"theta entries must be positive, got {self.theta!r}")
        else:
            _check_positive(self, ("theta",))
        if self.alpha_L >= self.beta_L or self.alpha_M >= self.beta_M:
            warnings.warn(
                "alpha_L < beta_L and alpha_M < beta_M are expected for a preference "
                "towards few, short rules", stacklevel=3)

    def theta_vector(self, n_features: int) -> tuple[float, ...]:
        if isinstance(self.theta, tuple):
            if len(self.theta) != n_features:
                raise ConfigError(
                    f"theta has {len(self.theta)} entries but the schema has {n_features} features")
            return self.theta
        return (float(self.theta),) * n_features


@dataclass(frozen=True)
class LikelihoodHyperparams:
    alpha_pos: float = 100.0
    beta_pos: float = 1.0
    alpha_neg: float = 100.0
    beta_neg: float = 1.0

    def __post_init__(self):
        _check_positive(self, ("alpha_pos", "beta_pos", "alpha_neg", "beta_neg"))


@dataclass(frozen=True)
class Hyperparams:
    prior: PriorHyperparams = PriorHyperparams()
    likelihood: LikelihoodHyperparams = LikelihoodHyperparams()


class ConfusionCounts(NamedTuple):
    tp: int
    fp: int
    tn: int
    fn: int

    @property
    def n(self) -> int:
        return self.tp + self.fp + self.tn + self.fn


@dataclass(frozen=True)
class PosteriorScore:
    log_prior: float
    log_likelihood: float
    counts: ConfusionCounts

    @property
    def total(self) -> float:
        return self.log_prior + self.log_likelihood


def log_beta(a: float, b: float) -> float:
    return _lgamma(a) + _lgamma(b) - _lgamma(a + b)


def log_neg_binomial(k: int, alpha: float, beta: float) -> float:
    """log P(k) for k ~ Poisson(lam), lam ~ Gamma(alpha, rate=beta)."""
    return (_lgamma(k + alpha) - _lgamma(alpha) - _lgamma(k + 1)
            + alpha * _log(beta / (beta + 1.0)) - k * _log(beta + 1.0))


@lru_cache(maxsize=1 << 16)
def _rule_summary(rule: Rule) -> tuple[int, float, tuple[tuple[int, int], ...]]:
    """(length, log multinomial coefficient, per-feature item counts)."""
    counts = tuple((c.feature, len(c.values)) for c in rule.conditions)
    length = sum(l for _, l in counts)
    log_coef = _lgamma(length + 1) - sum(_lgamma(l + 1) for _, l in counts)
    return length, log_coef, counts


def log_prior(ruleset: RuleSet, schema: Schema, hp: PriorHyperparams) -> float:
    m = len(ruleset)
    lp = log_neg_binomial(m, hp.alpha_M, hp.beta_M)
    theta = hp.theta_vector(len(schema))
    if m == 0:
        return lp

    total = 0
    log_len_fact = 0.0
    log_coef = 0.0
    pooled: dict[int, int] = {}
    for rule in ruleset.rules:
        length, coef, counts = _rule_summary(rule)
        total += length
        log_len_fact += _lgamma(length + 1)
        log_coef += coef
        for j, l in counts:
            pooled[j] = pooled.get(j, 0) + l

    # lengths share a single Poisson rate
    a, b = hp.alpha_L, hp.beta_L
    lp += (a * _log(b) - _lgamma(a) + _lgamma(a + total)
           - (a + total) * _log(b + m) - log_len_fact)

    theta_sum = math.fsum(theta)
    lp += log_coef + _lgamma(theta_sum) - _lgamma(theta_sum + total)
    for j, n_j in pooled.items():
        lp += _lgamma(theta[j] + n_j) - _lgamma(theta[j])
    return lp


def log_likelihood(counts: ConfusionCounts, hp: LikelihoodHyperparams) -> float:
    tp, fp, tn, fn = counts
    a, b = tp + hp.alpha_pos, fp + hp.beta_pos
    c, d = tn + hp.alpha_neg, fn + hp.beta_neg
    # log_beta inlined: this runs once per scored candidate
    return _lgamma(a) + _lgamma(b) - _lgamma(a + b) + _lgamma(c) + _lgamma(d) - _lgamma(c + d)


def confusion_from_bits(covered: int, positives: int, n_rows: int, n_positive: int) -> ConfusionCounts:
    tp = (covered & positives).bit_count()
    fp = covered.bit_count() - tp
    fn = n_positive - tp
    return ConfusionCounts(tp, fp, n_rows - n_positive - fp, fn)


def score(ruleset: RuleSet, dataset: Dataset, coverage: CoverageIndex,
          hps: Hyperparams) -> PosteriorScore:
    if coverage.n_rows != dataset.n_rows:
        raise InvariantError(
            f"coverage spans {coverage.n_rows} rows, dataset has {dataset.n_rows}")
    if coverage.rules != ruleset.rules:
        raise InvariantError("coverage index was built for a different rule set")
    counts = confusion_from_bits(coverage.aggregate, dataset.positive_bits,
                                 dataset.n_rows, dataset.n_positive)
    return PosteriorScore(log_prior(ruleset, dataset.schema, hps.prior),
                          log_likelihood(counts, hps.likelihood), counts)


class Scorer:
    """Memoized scoring of rule sets against one dataset.

    Rule bitmaps are cached on the dataset; whole-rule-set scores are kept
    in a bounded LRU map since the search revisits states often.
    """

    def __init__(self, dataset: Dataset, hps: Hyperparams, cache_size: int = 1 << 16):
        self.dataset = dataset
        self.hps = hps
        self.cache_size = cache_size
        self._cache: OrderedDict[RuleSet, PosteriorScore] = OrderedDict()
        hps.prior.theta_vector(len(dataset.schema))

    def aggregate_bits(self, ruleset: RuleSet) -> int:
        bits = 0
        rule_bits = self.dataset.rule_bits
        for r in ruleset.rules:
            bits |= rule_bits(r)
        return bits

    def __call__(self, ruleset: RuleSet) -> PosteriorScore:
        cache = self._cache
        hit = cache.get(ruleset)
        if hit is not None:
            cache.move_to_end(ruleset)
            return hit
        ds = self.dataset
        counts = confusion_from_bits(self.aggregate_bits(ruleset), ds.positive_bits,
                                     ds.n_rows, ds.n_positive)
        result = PosteriorScore(log_prior(ruleset, ds.schema, self.hps.prior),
                                log_likelihood(counts, self.hps.likelihood), counts)
        cache[ruleset] = result
        if len(cache) > self.cache_size:
            cache.popitem(last=False)
        return result

    def score_all(self, rulesets: Sequence[RuleSet]) -> list[PosteriorScore]:
        return [self(r) for r in rulesets]
