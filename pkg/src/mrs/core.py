"""Datasets, multi-value rules and coverage bitmaps.

A *condition* pairs a feature with a set of admissible values and is
satisfied when a row's value lies in that set.  A *rule* is a conjunction
of conditions on distinct features, and a *rule set* classifies a row as
positive when at least one of its rules covers it.

Coverage over a dataset is stored as Python integers used as bitsets:
bit ``n`` is set when row ``n`` is covered.
"""

from __future__ import annotations

import hashlib
import itertools
import json
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Iterator, Sequence

import numpy as np

from .errors import DataError, SchemaMismatchError

# Value index for categories never seen during training. It satisfies no condition.
UNSEEN = -1
MISSING_LABEL = "⟨missing⟩"
UNSEEN_LABEL = "⟨unseen⟩"


# ---------------------------------------------------------------------------
# bitset helpers
# ---------------------------------------------------------------------------

def bits_from_mask(mask: np.ndarray) -> int:
    """Pack a boolean vector into an int whose bit ``n`` is ``mask[n]``."""
    packed = np.packbits(np.asarray(mask, dtype=bool), bitorder="little")
    return int.from_bytes(packed.tobytes(), "little")


def mask_from_bits(bits: int, n: int) -> np.ndarray:
    raw = bits.to_bytes((n + 7) // 8 or 1, "little")
    return np.unpackbits(np.frombuffer(raw, dtype=np.uint8), bitorder="little")[:n].astype(bool)


def bits_to_string(bits: int, n: int) -> str:
    """Render a bitmap row-0-first, e.g. rows {0, 2} of 4 -> ``"1010"``."""
    return "".join("1" if bits >> i & 1 else "0" for i in range(n))


def iter_bits(bits: int) -> Iterator[int]:
    while bits:
        low = bits & -bits
        yield low.bit_length() - 1
        bits ^= low


# ---------------------------------------------------------------------------
# schema and dataset
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Feature:
    """A discrete feature. Continuous columns carry the interior bin ``edges``."""

    name: str
    vocabulary: tuple[str, ...]
    edges: tuple[float, ...] | None = None

    def __post_init__(self):
        object.__setattr__(self, "vocabulary", tuple(str(v) for v in self.vocabulary))
        if self.edges is not None:
            object.__setattr__(self, "edges", tuple(float(e) for e in self.edges))
        if not self.vocabulary:
            raise DataError(f"feature {self.name!r} has an empty vocabulary")
        if len(set(self.vocabulary)) != len(self.vocabulary):
            raise DataError(f"feature {self.name!r} has duplicate value labels")

    @property
    def size(self) -> int:
        return len(self.vocabulary)

    @property
    def is_continuous(self) -> bool:
        return self.edges is not None


@dataclass(frozen=True)
class Schema:
    features: tuple[Feature, ...]

    def __post_init__(self):
        feats = tuple(f if isinstance(f, Feature) else Feature(*f) for f in self.features)
        object.__setattr__(self, "features", feats)
        names = [f.name for f in feats]
        if len(set(names)) != len(names):
            raise DataError("feature names must be unique")

    @classmethod
    def from_vocabularies(cls, spec: Iterable[tuple[str, Sequence[str]]]) -> "Schema":
        return cls(tuple(Feature(name, tuple(vocab)) for name, vocab in spec))

    def __len__(self) -> int:
        return len(self.features)

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(f.name for f in self.features)

    @cached_property
    def sizes(self) -> tuple[int, ...]:
        return tuple(f.size for f in self.features)

    @cached_property
    def _index(self) -> dict[str, int]:
        return {f.name: j for j, f in enumerate(self.features)}

    def index(self, name: str) -> int:
        try:
            return self._index[name]
        except KeyError:
            raise SchemaMismatchError(f"unknown feature {name!r}") from None

    def value_index(self, feature: int, label: str) -> int:
        try:
            return self.features[feature].vocabulary.index(label)
        except ValueError:
            raise SchemaMismatchError(
                f"unknown value {label!r} for feature {self.features[feature].name!r}"
            ) from None

    def to_dict(self) -> dict:
        return {
            "features": [
                {"name": f.name, "vocabulary": list(f.vocabulary),
                 "edges": None if f.edges is None else list(f.edges)}
                for f in self.features
            ]
        }

    @classmethod
    def from_dict(cls, data: dict) -> "Schema":
        return cls(tuple(
            Feature(f["name"], tuple(f["vocabulary"]),
                    None if f.get("edges") is None else tuple(f["edges"]))
            for f in data["features"]
        ))

    def digest(self) -> str:
        payload = json.dumps(self.to_dict(), sort_keys=True, ensure_ascii=False)
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()[:16]


@dataclass(eq=False)
class Dataset:
    """Encoded feature matrix plus binary labels.

    ``rows[n, j]`` indexes into the vocabulary of feature ``j``; the
    reserved :data:`UNSEEN` index is allowed for data encoded against a
    schema learned elsewhere. Treat instances as immutable.
    """

    schema: Schema
    rows: np.ndarray
    labels: np.ndarray
    _rule_cache: dict = field(default_factory=dict, init=False, repr=False)

    def __post_init__(self):
        self.rows = np.asarray(self.rows, dtype=np.int64)
        self.labels = np.asarray(self.labels).astype(np.uint8)
        if self.rows.ndim != 2 or self.rows.shape[1] != len(self.schema):
            raise DataError(
                f"rows must be an N x {len(self.schema)} matrix, got shape {self.rows.shape}")
        n = self.rows.shape[0]
        if n < 1:
            raise DataError("dataset has no rows")
        if self.labels.shape != (n,):
            raise DataError(f"expected {n} labels, got {self.labels.shape[0]}")
        if np.any(self.labels > 1):
            raise DataError("labels must be binary")
        sizes = np.asarray(self.schema.sizes)
        bad = (self.rows >= sizes) | (self.rows < UNSEEN)
        if bad.any():
            n_bad, j_bad = np.argwhere(bad)[0]
            raise DataError(
                f"row {n_bad}: value index {self.rows[n_bad, j_bad]} out of range "
                f"for feature {self.schema.features[j_bad].name!r}")

    def __len__(self) -> int:
        return self.rows.shape[0]

    @property
    def n_rows(self) -> int:
        return self.rows.shape[0]

    @cached_property
    def positive_bits(self) -> int:
        return bits_from_mask(self.labels == 1)

    @cached_property
    def n_positive(self) -> int:
        return int(self.labels.sum())

    @cached_property
    def all_bits(self) -> int:
        return (1 << self.n_rows) - 1

    @cached_property
    def item_bits(self) -> tuple[tuple[int, ...], ...]:
        """``item_bits[j][v]``: rows whose feature ``j`` takes value ``v``."""
        return tuple(
            tuple(bits_from_mask(self.rows[:, j] == v) for v in range(size))
            for j, size in enumerate(self.schema.sizes)
        )

    def condition_bits(self, condition: "Condition") -> int:
        items = self.item_bits[condition.feature]
        bits = 0
        for v in condition.values:
            bits |= items[v]
        return bits

    def rule_bits(self, rule: "Rule") -> int:
        cache = self._rule_cache
        bits = cache.get(rule)
        if bits is None:
            bits = self.all_bits
            for c in rule.conditions:
                bits &= self.condition_bits(c)
            if len(cache) > 200_000:
                cache.clear()
            cache[rule] = bits
        return bits

    def subset(self, indices: Sequence[int]) -> "Dataset":
        idx = np.asarray(indices, dtype=np.int64)
        return Dataset(self.schema, self.rows[idx], self.labels[idx])


# ---------------------------------------------------------------------------
# conditions, rules and rule sets
# ---------------------------------------------------------------------------

class Condition:
    """Feature index plus a non-empty set of admissible value indices."""

    __slots__ = ("feature", "values", "_hash")

    def __init__(self, feature: int, values: Iterable[int]):
        vals = tuple(sorted({int(v) for v in values}))
        if not vals:
            raise ValueError("a condition needs at least one value")
        self.feature = int(feature)
        self.values = vals
        self._hash = hash((self.feature, vals))

    @property
    def key(self) -> tuple[int, tuple[int, ...]]:
        return (self.feature, self.values)

    def __len__(self) -> int:
        return len(self.values)

    def __eq__(self, other):
        return isinstance(other, Condition) and self.key == other.key

    def __hash__(self):
        return self._hash

    def __repr__(self):
        return f"Condition({self.feature}, {list(self.values)})"

    def with_value(self, value: int) -> "Condition":
        return Condition(self.feature, self.values + (value,))


class Rule:
    """Conjunction of conditions on pairwise distinct features."""

    __slots__ = ("conditions", "key", "_hash")

    def __init__(self, conditions: Iterable[Condition] = ()):
        conds = tuple(sorted(conditions, key=lambda c: c.feature))
        for a, b in zip(conds, conds[1:]):
            if a.feature == b.feature:
                raise ValueError(f"two conditions on feature {a.feature}; merge them first")
        self.conditions = conds
        self.key = tuple(c.key for c in conds)
        self._hash = hash(self.key)

    @classmethod
    def from_items(cls, items: Iterable[tuple[int, int]]) -> "Rule":
        """Build a rule from (feature, value) items, merging items on the same feature."""
        grouped: dict[int, set[int]] = {}
        for j, v in items:
            grouped.setdefault(j, set()).add(v)
        return cls(Condition(j, vs) for j, vs in grouped.items())

    @property
    def length(self) -> int:
        """Total item count, i.e. the summed sizes of the value sets."""
        return sum(len(c.values) for c in self.conditions)

    @property
    def features(self) -> tuple[int, ...]:
        return tuple(c.feature for c in self.conditions)

    def condition_on(self, feature: int) -> Condition | None:
        for c in self.conditions:
            if c.feature == feature:
                return c
        return None

    def without(self, condition: Condition) -> "Rule":
        return Rule(c for c in self.conditions if c != condition)

    def with_condition(self, condition: Condition) -> "Rule":
        """Add ``condition``, replacing any existing condition on the same feature."""
        return Rule([c for c in self.conditions if c.feature != condition.feature] + [condition])

    def __len__(self) -> int:
        return len(self.conditions)

    def __iter__(self):
        return iter(self.conditions)

    def __eq__(self, other):
        return isinstance(other, Rule) and self.key == other.key

    def __lt__(self, other: "Rule"):
        return self.key < other.key

    def __hash__(self):
        return self._hash

    def __repr__(self):
        return f"Rule({list(self.conditions)})"


class RuleSet:
    """Disjunction of distinct rules, held in canonical (sorted) order."""

    __slots__ = ("rules", "key", "_hash")

    def __init__(self, rules: Iterable[Rule] = ()):
        self.rules = tuple(sorted(set(rules), key=lambda r: r.key))
        self.key = tuple(r.key for r in self.rules)
        self._hash = hash(self.key)

    def __len__(self) -> int:
        return len(self.rules)

    def __iter__(self):
        return iter(self.rules)

    def __contains__(self, rule) -> bool:
        return rule in self.rules

    def __eq__(self, other):
        return isinstance(other, RuleSet) and self.key == other.key

    def __hash__(self):
        return self._hash

    def __repr__(self):
        return f"RuleSet({list(self.rules)})"

    @property
    def n_rules(self) -> int:
        return len(self.rules)

    @property
    def n_conditions(self) -> int:
        return sum(len(r) for r in self.rules)

    @property
    def n_items(self) -> int:
        return sum(r.length for r in self.rules)

    @property
    def features(self) -> frozenset[int]:
        return frozenset(c.feature for r in self.rules for c in r.conditions)

    def add(self, rule: Rule) -> "RuleSet":
        return RuleSet(self.rules + (rule,))

    def remove(self, rule: Rule) -> "RuleSet":
        return RuleSet(r for r in self.rules if r != rule)

    def replace(self, old: Rule, new: Rule) -> "RuleSet":
        return RuleSet([r for r in self.rules if r != old] + [new])


# ---------------------------------------------------------------------------
# schema validation and canonical form
# ---------------------------------------------------------------------------

def validate_rule(rule: Rule, schema: Schema) -> None:
    sizes = schema.sizes
    for c in rule.conditions:
        if not 0 <= c.feature < len(sizes):
            raise SchemaMismatchError(f"feature index {c.feature} outside schema of {len(sizes)}")
        if c.values[0] < 0 or c.values[-1] >= sizes[c.feature]:
            raise SchemaMismatchError(
                f"value index out of range for feature {schema.features[c.feature].name!r}")


def canonical_rule(rule: Rule, schema: Schema) -> Rule | None:
    """Drop tautological (full-vocabulary) conditions; ``None`` if nothing is left."""
    validate_rule(rule, schema)
    sizes = schema.sizes
    kept = [c for c in rule.conditions if len(c.values) < sizes[c.feature]]
    if not kept:
        return None
    return rule if len(kept) == len(rule.conditions) else Rule(kept)


def canonical_ruleset(ruleset: Iterable[Rule], schema: Schema) -> RuleSet:
    """Validate and canonicalize; rules that reduce to no condition are rejected."""
    out = []
    for rule in ruleset:
        canon = canonical_rule(rule, schema)
        if canon is None:
            raise SchemaMismatchError(f"{rule!r} has no non-tautological condition")
        out.append(canon)
    return RuleSet(out)


def expand_single_value(ruleset: RuleSet) -> RuleSet:
    """Rewrite every rule as the equivalent set of single-value rules."""
    expanded = []
    for rule in ruleset:
        per_feature = [[(c.feature, v) for v in c.values] for c in rule.conditions]
        for combo in itertools.product(*per_feature):
            expanded.append(Rule(Condition(j, (v,)) for j, v in combo))
    return RuleSet(expanded)


# ---------------------------------------------------------------------------
# row-level semantics
# ---------------------------------------------------------------------------

def condition_satisfied(row: Sequence[int], c: Condition) -> bool:
    if not 0 <= c.feature < len(row):
        raise SchemaMismatchError(f"condition on feature {c.feature} but row has {len(row)} features")
    return int(row[c.feature]) in c.values


def rule_covers(row: Sequence[int], rule: Rule) -> bool:
    return all(condition_satisfied(row, c) for c in rule.conditions)


def classify(row: Sequence[int], ruleset: RuleSet) -> int:
    return int(any(rule_covers(row, r) for r in ruleset))


def first_covering_rule(row: Sequence[int], ruleset: RuleSet) -> int | None:
    """Position (0-based, canonical order) of the first rule covering ``row``."""
    for i, r in enumerate(ruleset):
        if rule_covers(row, r):
            return i
    return None


# ---------------------------------------------------------------------------
# coverage index
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CoverageIndex:
    """Per-rule coverage bitmaps, aligned with ``rules``, and their union."""

    n_rows: int
    rules: tuple[Rule, ...]
    rule_bits: tuple[int, ...]
    aggregate: int

    @classmethod
    def from_rule_bits(cls, n_rows: int, rules: tuple[Rule, ...], bits: tuple[int, ...]):
        agg = 0
        for b in bits:
            agg |= b
        return cls(n_rows, rules, bits, agg)

    def covered(self, row: int) -> bool:
        return bool(self.aggregate >> row & 1)

    def mask(self) -> np.ndarray:
        return mask_from_bits(self.aggregate, self.n_rows)

    def rule_mask(self, i: int) -> np.ndarray:
        return mask_from_bits(self.rule_bits[i], self.n_rows)

    def update(self, dataset: Dataset, ruleset: RuleSet) -> "CoverageIndex":
        """Index for ``ruleset``, recomputing bitmaps only for rules not already indexed."""
        if dataset.n_rows != self.n_rows:
            raise DataError("coverage index and dataset disagree on row count")
        known = dict(zip(self.rules, self.rule_bits))
        bits = tuple(known[r] if r in known else dataset.rule_bits(r) for r in ruleset.rules)
        return CoverageIndex.from_rule_bits(self.n_rows, ruleset.rules, bits)


def build_coverage(dataset: Dataset, ruleset: RuleSet) -> CoverageIndex:
    bits = tuple(dataset.rule_bits(r) for r in ruleset.rules)
    return CoverageIndex.from_rule_bits(dataset.n_rows, ruleset.rules, bits)
