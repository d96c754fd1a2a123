import numpy as np
import pytest
from hypothesis import strategies as st

from mrs.core import Condition, Dataset, Rule, RuleSet, Schema
from mrs.evaluation import make_schema

RISK = ["Minor", "Moderate", "Major", "Extreme"]
TABLE2_CODES = ["33", "34", "35", "39", "58", "61", "63", "142", "216", "225"]
OTHER_CODES = ["1", "2", "5", "7", "12", "101"]


@pytest.fixture
def table2_schema():
    return Schema.from_vocabularies([
        ("APRDRG Risk of Mortality", RISK),
        ("procedure category", TABLE2_CODES + OTHER_CODES),
        ("gender", ["female", "male", "other"]),
    ])


@pytest.fixture
def table2_rule(table2_schema):
    proc = table2_schema.index("procedure category")
    return Rule([
        Condition(0, [RISK.index("Extreme")]),
        Condition(proc, [table2_schema.value_index(proc, c) for c in TABLE2_CODES]),
    ])


def encode(schema, **named):
    row = [0] * len(schema)
    for name, label in named.items():
        j = schema.index(name.replace("_", " "))
        row[j] = schema.value_index(j, label)
    return row


@st.composite
def rules_for(draw, sizes, allow_tautology=True):
    feats = draw(st.lists(st.integers(0, len(sizes) - 1), unique=True, min_size=1,
                          max_size=min(3, len(sizes))))
    conds = []
    for j in feats:
        hi = sizes[j] if allow_tautology else sizes[j] - 1
        if hi < 1:
            continue
        vals = draw(st.lists(st.integers(0, sizes[j] - 1), unique=True, min_size=1, max_size=hi))
        conds.append(Condition(j, vals))
    return Rule(conds)


@st.composite
def problems(draw, max_features=5, max_card=4, max_rows=24, max_rules=3, canonical=False):
    """(dataset, ruleset) pairs; ``canonical`` restricts rules to non-tautological ones."""
    min_card = 2 if canonical else 1
    sizes = draw(st.lists(st.integers(min_card, max_card), min_size=1, max_size=max_features))
    n = draw(st.integers(1, max_rows))
    seed = draw(st.integers(0, 2**32 - 1))
    rng = np.random.default_rng(seed)
    rows = np.column_stack([rng.integers(0, s, n) for s in sizes])
    labels = rng.integers(0, 2, n)
    schema = make_schema([(f"f{j}", s) for j, s in enumerate(sizes)])
    rules = draw(st.lists(rules_for(sizes, allow_tautology=not canonical), max_size=max_rules))
    rules = [r for r in rules if r.conditions]
    return Dataset(schema, rows, labels), RuleSet(rules)


# acceptance criteria report: (criterion, passed, detail), printed after the run
ACCEPTANCE_RESULTS: list[tuple[str, bool, str]] = []


def record(criterion: str, passed: bool, detail: str) -> None:
    ACCEPTANCE_RESULTS.append((criterion, bool(passed), detail))


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for name, passed, detail in ACCEPTANCE_RESULTS:
        terminalreporter.write_line(f"{'PASS' if passed else 'FAIL'}  {name}: {detail}")
