"""Simulated-annealing MAP search over multi-value rule sets.

Each step samples a misclassified training row. An uncovered positive
asks for more coverage (add a value, remove a condition, add a rule);
a covered negative asks for less (add a condition, remove a rule). One
action kind is drawn at random and every neighbor it produces flips the
sampled row to the correct side. A neighbor is then picked at random
(exploration) or as the best-scoring one (exploitation) and accepted
with the usual Metropolis probability under a geometric cooling schedule.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from enum import Enum
from typing import IO, Iterable, NamedTuple, Sequence

import numpy as np

from .core import (
    Condition,
    CoverageIndex,
    Dataset,
    Rule,
    RuleSet,
    build_coverage,
    canonical_ruleset,
    iter_bits,
)
from .errors import ConfigError, InvariantError, SchemaMismatchError
from .posterior import (
    Hyperparams,
    PosteriorScore,
    PriorHyperparams,
    Scorer,
    log_prior,
    score,
)

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class SAConfig:
    n_iter: int = 5000
    T0: float = 100.0
    explore_prob: float = 0.2
    max_rule_len: int = 20
    max_rules: int = 10
    neighbor_cap: int = 200
    seed: int = 0
    restarts: int = 3

    def __post_init__(self):
        for name in ("n_iter", "max_rule_len", "max_rules", "neighbor_cap", "restarts"):
            value = getattr(self, name)
            if not isinstance(value, (int, np.integer)) or isinstance(value, bool) or value < 1:
                raise ConfigError(f"{name} must be a positive integer, got {value!r}")
        if not isinstance(self.seed, (int, np.integer)) or isinstance(self.seed, bool):
            raise ConfigError(f"seed must be an integer, got {self.seed!r}")
        if not (isinstance(self.T0, (int, float)) and math.isfinite(self.T0) and self.T0 > 1):
            raise ConfigError(f"T0 must be a finite real > 1, got {self.T0!r}")
        if not (isinstance(self.explore_prob, (int, float)) and 0 <= self.explore_prob <= 1):
            raise ConfigError(f"explore_prob must lie in [0, 1], got {self.explore_prob!r}")


class ActionKind(str, Enum):
    ADD_VALUE = "AddValue"
    REMOVE_CONDITION = "RemoveCondition"
    ADD_RULE = "AddRule"
    ADD_CONDITION = "AddCondition"
    REMOVE_RULE = "RemoveRule"

    @property
    def increases_coverage(self) -> bool:
        return self in INCREASING


INCREASING = (ActionKind.ADD_VALUE, ActionKind.REMOVE_CONDITION, ActionKind.ADD_RULE)
DECREASING = (ActionKind.ADD_CONDITION, ActionKind.REMOVE_RULE)


@dataclass(frozen=True)
class Action:
    """One edit. ``rule`` is the rule touched (None for AddRule); ``condition``
    is the condition added, removed, or extended; ``value`` the value added."""

    kind: ActionKind
    rule: Rule | None = None
    condition: Condition | None = None
    value: int | None = None


@dataclass
class SAState:
    current: RuleSet
    coverage: CoverageIndex
    score: PosteriorScore
    best: tuple[RuleSet, PosteriorScore]
    step: int = 0


class TraceRecord(NamedTuple):
    chain: int
    step: int
    temperature: float
    current: float
    best: float
    action: str
    accepted: bool


class SearchResult(NamedTuple):
    ruleset: RuleSet
    score: PosteriorScore
    trace: list[TraceRecord]


TRACE_HEADER = "chain\tstep\tT\tcurrent_total\tbest_total\taction\taccepted"


def write_trace(records: Iterable[TraceRecord], fh: IO[str]) -> None:
    fh.write(TRACE_HEADER + "\n")
    for r in records:
        fh.write(f"{r.chain}\t{r.step}\t{r.temperature!r}\t{r.current!r}\t{r.best!r}"
                 f"\t{r.action}\t{int(r.accepted)}\n")


# ---------------------------------------------------------------------------
# schedule and acceptance
# ---------------------------------------------------------------------------

def temperature(t: int, cfg: SAConfig) -> float:
    if not 0 <= t <= cfg.n_iter:
        raise ValueError(f"step {t} outside [0, {cfg.n_iter}]")
    return cfg.T0 ** (1.0 - t / cfg.n_iter)


def accept(current: float, proposed: float, T: float, rng: np.random.Generator) -> bool:
    if T <= 0:
        raise ValueError("temperature must be positive")
    delta = proposed - current
    if delta >= 0:
        return True
    return bool(rng.random() < math.exp(delta / T))


# ---------------------------------------------------------------------------
# proposals
# ---------------------------------------------------------------------------

def sample_misclassified(state: SAState, dataset: Dataset,
                         rng: np.random.Generator) -> tuple[int, int] | None:
    """Uniformly pick a misclassified row; returns (row, label) or None when
    every row is classified correctly."""
    wrong = state.coverage.aggregate ^ dataset.positive_bits
    count = wrong.bit_count()
    if count == 0:
        return None
    k = int(rng.integers(count))
    if count > 64:
        row = int(np.flatnonzero(_unpack(wrong, dataset.n_rows))[k])
    else:
        for i, row in enumerate(iter_bits(wrong)):
            if i == k:
                break
    return row, int(dataset.labels[row])


def _unpack(bits: int, n: int) -> np.ndarray:
    raw = np.frombuffer(bits.to_bytes((n + 7) // 8, "little"), dtype=np.uint8)
    return np.unpackbits(raw, bitorder="little", count=n)


def _excluding_conditions(rule: Rule, row: Sequence[int]) -> list[Condition]:
    return [c for c in rule.conditions if row[c.feature] not in c.values]


def _add_value(R: RuleSet, row, sizes, cfg) -> list[tuple[Action, RuleSet]]:
    out = []
    for rule in R.rules:
        failing = _excluding_conditions(rule, row)
        if len(failing) != 1 or rule.length + 1 > cfg.max_rule_len:
            continue
        c = failing[0]
        v = int(row[c.feature])
        if v < 0:
            continue
        if len(c.values) + 1 == sizes[c.feature]:
            new_rule = rule.without(c)
            if not new_rule.conditions:
                continue
        else:
            new_rule = rule.with_condition(c.with_value(v))
        out.append((Action(ActionKind.ADD_VALUE, rule, c, v), R.replace(rule, new_rule)))
    return out


def _remove_condition(R: RuleSet, row, sizes, cfg) -> list[tuple[Action, RuleSet]]:
    out = []
    for rule in R.rules:
        failing = _excluding_conditions(rule, row)
        if len(failing) != 1 or len(rule.conditions) == 1:
            continue
        c = failing[0]
        out.append((Action(ActionKind.REMOVE_CONDITION, rule, c), R.replace(rule, rule.without(c))))
    return out


def _add_rule(R: RuleSet, row, sizes, cfg) -> list[tuple[Action, RuleSet]]:
    if len(R) >= cfg.max_rules:
        return []
    out = []
    for j, size in enumerate(sizes):
        if size < 2 or row[j] < 0:
            continue
        c = Condition(j, (int(row[j]),))
        out.append((Action(ActionKind.ADD_RULE, None, c), R.add(Rule((c,)))))
    return out


def _covering_rules(R: RuleSet, row) -> list[Rule]:
    return [r for r in R.rules if all(row[c.feature] in c.values for c in r.conditions)]


def _add_condition(R: RuleSet, row, sizes, cfg) -> list[tuple[Action, RuleSet]]:
    covering = _covering_rules(R, row)
    if len(covering) != 1:
        return []
    rule = covering[0]
    used = set(rule.features)
    room = cfg.max_rule_len - rule.length
    out = []
    for c in rule.conditions:
        # conjoining f in V\{x} with an existing f in S narrows S to S\{x}
        if len(c.values) > 1:
            narrowed = Condition(c.feature, [v for v in c.values if v != row[c.feature]])
            out.append((Action(ActionKind.ADD_CONDITION, rule, narrowed),
                        R.replace(rule, rule.with_condition(narrowed))))
    for j, size in enumerate(sizes):
        if j in used or size < 2:
            continue
        x = int(row[j])
        others = [v for v in range(size) if v != x]
        value_sets = [(v,) for v in others]
        if size > 2:
            value_sets.append(tuple(others))
        for vals in value_sets:
            if len(vals) > room:
                continue
            c = Condition(j, vals)
            out.append((Action(ActionKind.ADD_CONDITION, rule, c), R.replace(rule, rule.with_condition(c))))
    return out


def _remove_rule(R: RuleSet, row, sizes, cfg) -> list[tuple[Action, RuleSet]]:
    covering = _covering_rules(R, row)
    if len(covering) != 1:
        return []
    rule = covering[0]
    return [(Action(ActionKind.REMOVE_RULE, rule), R.remove(rule))]


_GENERATORS = {
    ActionKind.ADD_VALUE: _add_value,
    ActionKind.REMOVE_CONDITION: _remove_condition,
    ActionKind.ADD_RULE: _add_rule,
    ActionKind.ADD_CONDITION: _add_condition,
    ActionKind.REMOVE_RULE: _remove_rule,
}


def candidates_for(kind: ActionKind, ruleset: RuleSet, row: Sequence[int],
                   sizes: Sequence[int], cfg: SAConfig) -> list[tuple[Action, RuleSet]]:
    """All neighbors of ``kind`` that flip ``row`` to the other side, uncapped."""
    return _GENERATORS[kind](ruleset, row, sizes, cfg)


def _cap(cands: list, cap: int, rng: np.random.Generator) -> list:
    if len(cands) <= cap:
        return cands
    keep = np.sort(rng.choice(len(cands), size=cap, replace=False))
    return [cands[i] for i in keep]


def propose_neighbors(state: SAState, dataset: Dataset, example: int, polarity: int,
                      cfg: SAConfig, rng: np.random.Generator) -> list[tuple[Action, RuleSet]]:
    """Neighbors correcting row ``example``; empty when no action kind applies.

    Kinds are tried in a uniformly random order, which is the same as
    redrawing uniformly until a kind with candidates comes up.
    """
    kinds = INCREASING if polarity == 1 else DECREASING
    row = dataset.rows[example].tolist()
    sizes = dataset.schema.sizes
    for i in rng.permutation(len(kinds)):
        cands = candidates_for(kinds[i], state.current, row, sizes, cfg)
        if cands:
            return _cap(cands, cfg.neighbor_cap, rng)
    return []


def simplifying_neighbors(state: SAState, dataset: Dataset, prior: PriorHyperparams,
                          cfg: SAConfig, rng: np.random.Generator) -> list[tuple[Action, RuleSet]]:
    """Prior-improving moves used when nothing is misclassified."""
    R = state.current
    schema = dataset.schema
    by_kind = {
        ActionKind.REMOVE_RULE: [(Action(ActionKind.REMOVE_RULE, r), R.remove(r)) for r in R.rules],
        ActionKind.REMOVE_CONDITION: [
            (Action(ActionKind.REMOVE_CONDITION, r, c), R.replace(r, r.without(c)))
            for r in R.rules if len(r.conditions) > 1 for c in r.conditions
        ],
    }
    base = log_prior(R, schema, prior)
    kinds = list(by_kind)
    for i in rng.permutation(len(kinds)):
        cands = [(a, n) for a, n in by_kind[kinds[i]]
                 if log_prior(n, schema, prior) > base]
        if cands:
            return _cap(cands, cfg.neighbor_cap, rng)
    return []


def select_neighbor(candidates: Sequence[tuple[Action, RuleSet]], scorer: Scorer,
                    rng: np.random.Generator, cfg: SAConfig) -> tuple[Action, RuleSet, PosteriorScore]:
    if not candidates:
        raise ValueError("no candidates to select from")
    if rng.random() < cfg.explore_prob:
        action, rs = candidates[int(rng.integers(len(candidates)))]
        return action, rs, scorer(rs)
    best = None
    for action, rs in candidates:
        s = scorer(rs)
        if (best is None or s.total > best[2].total
                or (s.total == best[2].total and rs.key < best[1].key)):
            best = (action, rs, s)
    return best


# ---------------------------------------------------------------------------
# driver
# ---------------------------------------------------------------------------

def _check_state(state: SAState, dataset: Dataset, hps: Hyperparams, cfg: SAConfig) -> None:
    R = state.current
    if len(R) > cfg.max_rules or any(r.length > cfg.max_rule_len for r in R):
        raise InvariantError(f"step {state.step}: state exceeds the search bounds")
    try:
        canon = canonical_ruleset(R, dataset.schema)
    except SchemaMismatchError as e:
        raise InvariantError(f"step {state.step}: {e}") from None
    if canon != R:
        raise InvariantError(f"step {state.step}: state is not in canonical form")
    fresh_cov = build_coverage(dataset, R)
    if fresh_cov != state.coverage:
        raise InvariantError(f"step {state.step}: incremental coverage diverged from rebuild")
    fresh = score(R, dataset, fresh_cov, hps)
    if fresh != state.score:
        raise InvariantError(f"step {state.step}: cached score {state.score} != rebuilt {fresh}")


def _better(a: tuple[RuleSet, PosteriorScore], b: tuple[RuleSet, PosteriorScore]) -> bool:
    """Is ``a`` strictly preferred over ``b`` (higher score, then canonical order)?"""
    if a[1].total != b[1].total:
        return a[1].total > b[1].total
    return a[0].key < b[0].key


def make_state(dataset: Dataset, scorer: Scorer, ruleset: RuleSet | None = None) -> SAState:
    ruleset = RuleSet() if ruleset is None else ruleset
    s = scorer(ruleset)
    return SAState(ruleset, build_coverage(dataset, ruleset), s, (ruleset, s))


def run_chain(dataset: Dataset, scorer: Scorer, cfg: SAConfig, rng: np.random.Generator,
              chain: int = 0, check_invariants: bool = False) -> SearchResult:
    state = make_state(dataset, scorer)
    trace: list[TraceRecord] = []

    for t in range(cfg.n_iter):
        state.step = t
        T = temperature(t, cfg)
        picked = sample_misclassified(state, dataset, rng)
        if picked is None:
            cands = simplifying_neighbors(state, dataset, scorer.hps.prior, cfg, rng)
            label = "kick:"
        else:
            cands = propose_neighbors(state, dataset, picked[0], picked[1], cfg, rng)
            label = ""
        if not cands:
            trace.append(TraceRecord(chain, t, T, state.score.total, state.best[1].total, "none", False))
            continue
        action, proposal, p_score = select_neighbor(cands, scorer, rng, cfg)
        accepted = accept(state.score.total, p_score.total, T, rng)
        if accepted:
            state.current = proposal
            state.coverage = state.coverage.update(dataset, proposal)
            state.score = p_score
            if check_invariants:
                _check_state(state, dataset, scorer.hps, cfg)
            if _better((proposal, p_score), state.best):
                state.best = (proposal, p_score)
        trace.append(TraceRecord(chain, t, T, state.score.total, state.best[1].total,
                                 label + action.kind.value, accepted))

    return SearchResult(state.best[0], state.best[1], trace)


def run(dataset: Dataset, hps: Hyperparams, cfg: SAConfig,
        check_invariants: bool = False) -> SearchResult:
    """Run ``cfg.restarts`` chains from the empty rule set; keep the best state seen."""
    if not isinstance(cfg, SAConfig):
        raise ConfigError("cfg must be an SAConfig")
    scorer = Scorer(dataset, hps)
    seeds = np.random.SeedSequence(int(cfg.seed)).spawn(cfg.restarts)
    best = None
    trace: list[TraceRecord] = []
    for chain, seed in enumerate(seeds):
        result = run_chain(dataset, scorer, cfg, np.random.default_rng(seed), chain,
                           check_invariants)
        trace.extend(result.trace)
        if best is None or _better((result.ruleset, result.score), (best.ruleset, best.score)):
            best = result
        log.debug("chain %d best %.4f", chain, result.score.total)
    return SearchResult(best.ruleset, best.score, trace)
