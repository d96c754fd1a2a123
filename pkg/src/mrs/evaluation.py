"""Metrics, splitting, brute-force MAP search and planted-model data."""

from __future__ import annotations

import itertools
import json
import math
import warnings
from dataclasses import asdict, dataclass
from typing import Iterator, Sequence

import numpy as np

from .core import Condition, Dataset, Rule, RuleSet, Schema, build_coverage, validate_rule
from .errors import SearchSpaceTooLarge
from .posterior import ConfusionCounts, Hyperparams, PosteriorScore, Scorer, confusion_from_bits

EXHAUSTIVE_CEILING = 10**7


@dataclass(frozen=True)
class ModelReport:
    f1: float
    precision: float
    recall: float
    n_rule: int
    n_cond: int
    n_feat: int
    n_item: int
    confusion: ConfusionCounts
    degenerate: bool = False

    def to_dict(self) -> dict:
        d = asdict(self)
        d["confusion"] = self.confusion._asdict()
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"

    def table(self, name: str = "MRS") -> str:
        """Aligned one-row table with the usual F1 / complexity columns."""
        header = f"{'':<12}{'F1':>7}{'n_rule':>8}{'n_cond':>8}{'n_feat':>8}{'n_item':>8}"
        row = (f"{name:<12}{self.f1:>7.3f}{self.n_rule:>8d}{self.n_cond:>8d}"
               f"{self.n_feat:>8d}{self.n_item:>8d}")
        c = self.confusion
        return (f"{header}\n{row}\n"
                f"precision={self.precision:.3f} recall={self.recall:.3f} "
                f"tp={c.tp} fp={c.fp} tn={c.tn} fn={c.fn}"
                + (" (degenerate F1)" if self.degenerate else "") + "\n")


def f1_from_counts(counts: ConfusionCounts) -> tuple[float, float, float, bool]:
    """(f1, precision, recall, degenerate); zero denominators give 0."""
    tp, fp, _, fn = counts
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    if precision + recall == 0:
        return 0.0, precision, recall, True
    return 2 * precision * recall / (precision + recall), precision, recall, False


def evaluate(ruleset: RuleSet, dataset: Dataset) -> ModelReport:
    cov = build_coverage(dataset, ruleset)
    counts = confusion_from_bits(cov.aggregate, dataset.positive_bits,
                                 dataset.n_rows, dataset.n_positive)
    f1, p, r, degenerate = f1_from_counts(counts)
    return ModelReport(f1, p, r, ruleset.n_rules, ruleset.n_conditions,
                       len(ruleset.features), ruleset.n_items, counts, degenerate)


def split(dataset: Dataset, test_fraction: float, seed: int) -> tuple[Dataset, Dataset]:
    """Stratified train/test split; the test size is round(N * test_fraction)."""
    if not 0 < test_fraction < 1:
        raise ValueError("test_fraction must lie strictly between 0 and 1")
    n = dataset.n_rows
    if n < 2:
        raise ValueError("need at least two rows to split")
    n_test = min(max(round(n * test_fraction), 1), n - 1)
    rng = np.random.default_rng(seed)
    labels = dataset.labels
    classes = [np.flatnonzero(labels == k) for k in (0, 1)]
    classes = [c for c in classes if len(c)]

    if any(len(c) < 2 for c in classes) and len(classes) > 1:
        warnings.warn("a class has fewer than two rows; falling back to an unstratified split")
        order = rng.permutation(n)
        test = order[:n_test]
    else:
        # largest-remainder allocation of the test rows across classes
        quotas = [len(c) * n_test / n for c in classes]
        alloc = [math.floor(q) for q in quotas]
        by_remainder = sorted(range(len(classes)), key=lambda i: (-(quotas[i] - alloc[i]), i))
        for i in by_remainder[: n_test - sum(alloc)]:
            alloc[i] += 1
        test = np.concatenate([rng.permutation(c)[:k] for c, k in zip(classes, alloc)])
    mask = np.zeros(n, dtype=bool)
    mask[test] = True
    return dataset.subset(np.flatnonzero(~mask)), dataset.subset(np.flatnonzero(mask))


# ---------------------------------------------------------------------------
# exhaustive oracle
# ---------------------------------------------------------------------------

def _rule_count_by_length(sizes: Sequence[int], max_len: int) -> list[int]:
    """counts[L] = number of rules with exactly L items (no tautologies)."""
    poly = [1] + [0] * max_len
    for size in sizes:
        factor = [1] + [math.comb(size, k) if k < size else 0 for k in range(1, max_len + 1)]
        new = [0] * (max_len + 1)
        for i, a in enumerate(poly):
            if a:
                for k, b in enumerate(factor[: max_len + 1 - i]):
                    new[i + k] += a * b
        poly = new
    return poly


def count_rules(schema: Schema, max_rule_len: int) -> int:
    return sum(_rule_count_by_length(schema.sizes, max_rule_len)[1:])


def count_search_space(schema: Schema, max_rules: int, max_rule_len: int) -> int:
    n = count_rules(schema, max_rule_len)
    return sum(math.comb(n, m) for m in range(max_rules + 1))


def enumerate_rules(schema: Schema, max_rule_len: int) -> Iterator[Rule]:
    sizes = schema.sizes
    per_feature = []
    for j, size in enumerate(sizes):
        subsets = [None]
        for k in range(1, min(size - 1, max_rule_len) + 1):
            subsets.extend(Condition(j, vs) for vs in itertools.combinations(range(size), k))
        per_feature.append(subsets)
    for combo in itertools.product(*per_feature):
        conds = [c for c in combo if c is not None]
        if conds and sum(len(c) for c in conds) <= max_rule_len:
            yield Rule(conds)


def exhaustive_map(dataset: Dataset, hps: Hyperparams, max_rules: int, max_rule_len: int,
                   ceiling: int = EXHAUSTIVE_CEILING) -> tuple[RuleSet, PosteriorScore]:
    """Score every canonical rule set within the bounds and return the argmax."""
    size = count_search_space(dataset.schema, max_rules, max_rule_len)
    if size > ceiling:
        raise SearchSpaceTooLarge(size, ceiling)
    rules = sorted(enumerate_rules(dataset.schema, max_rule_len))
    scorer = Scorer(dataset, hps, cache_size=0)
    best_rs, best = None, None
    for m in range(max_rules + 1):
        for combo in itertools.combinations(rules, m):
            rs = RuleSet(combo)
            s = scorer(rs)
            if best is None or s.total > best.total or (s.total == best.total and rs.key < best_rs.key):
                best_rs, best = rs, s
    return best_rs, best


# ---------------------------------------------------------------------------
# planted-model generator
# ---------------------------------------------------------------------------

def make_schema(schema_spec: Sequence[tuple[str, int | Sequence[str]]]) -> Schema:
    """Schema from (name, cardinality) or (name, labels) pairs; integer
    cardinalities get labels ``"0".."k-1"``."""
    feats = []
    for name, vocab in schema_spec:
        labels = [str(v) for v in range(vocab)] if isinstance(vocab, int) else list(vocab)
        feats.append((name, labels))
    return Schema.from_vocabularies(feats)


def generate_planted(n_rows: int, schema_spec, planted: RuleSet, noise_rate: float,
                     seed: int) -> Dataset:
    if not 0 <= noise_rate < 0.5:
        raise ValueError("noise_rate must lie in [0, 0.5)")
    schema = schema_spec if isinstance(schema_spec, Schema) else make_schema(schema_spec)
    for rule in planted:
        validate_rule(rule, schema)
    rng = np.random.default_rng(seed)
    rows = np.column_stack([rng.integers(0, size, n_rows) for size in schema.sizes])
    clean = Dataset(schema, rows, np.zeros(n_rows, dtype=np.uint8))
    truth = build_coverage(clean, planted).mask()
    flips = rng.random(n_rows) < noise_rate
    return Dataset(schema, rows, (truth ^ flips).astype(np.uint8))
