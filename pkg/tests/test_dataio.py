import json

import numpy as np
import pytest

from conftest import RISK, TABLE2_CODES
from mrs.core import MISSING_LABEL, UNSEEN, Condition, Rule, RuleSet, Schema
from mrs.dataio import (
    FeatureSpec,
    IngestionConfig,
    bin_labels,
    discretize,
    dumps_model,
    load_csv,
    load_model,
    read_features,
    read_model,
    render_if_then,
    save_model,
)
from mrs.errors import ConfigError, DataError, ModelFormatError, SchemaMismatchError


def write(tmp_path, text, name="data.csv"):
    path = tmp_path / name
    path.write_text(text, encoding="utf-8")
    return path


def sorted_quantile(values, q):
    """Linear-interpolation quantile computed from a sorted list by hand."""
    xs = sorted(values)
    pos = q * (len(xs) - 1)
    lo = int(pos)
    hi = min(lo + 1, len(xs) - 1)
    return xs[lo] + (pos - lo) * (xs[hi] - xs[lo])


class TestLoadCsv:
    def test_two_rows(self, tmp_path):
        ds = load_csv(write(tmp_path, "color,y\na,1\nb,0\n"), IngestionConfig())
        assert ds.n_rows == 2 and len(ds.schema) == 1
        assert ds.schema.features[0].vocabulary == ("a", "b")
        assert ds.labels.tolist() == [1, 0]

    def test_quartile_bins(self, tmp_path):
        values = list(range(1, 101))
        body = "".join(f"{v},{v % 2}\n" for v in values)
        cfg = IngestionConfig(feature_specs={"x": FeatureSpec("continuous", 4)})
        ds = load_csv(write(tmp_path, "x,y\n" + body), cfg)
        feat = ds.schema.features[0]
        assert feat.edges == pytest.approx([sorted_quantile(values, q) for q in (0.25, 0.5, 0.75)])
        assert feat.edges == pytest.approx([25.75, 50.5, 75.25])
        assert np.bincount(ds.rows[:, 0]).tolist() == [25, 25, 25, 25]
        assert feat.vocabulary[0] == "(-inf, 25.75]"

    def test_vocabulary_order(self, tmp_path):
        ds = load_csv(write(tmp_path, "n,c,y\n10,b,1\n2,a,0\n1,c,1\n"), IngestionConfig())
        assert ds.schema.features[0].vocabulary == ("1", "2", "10")
        assert ds.schema.features[1].vocabulary == ("a", "b", "c")

    def test_missing_as_category(self, tmp_path):
        ds = load_csv(write(tmp_path, "c,y\nb,1\n,0\na,1\n"), IngestionConfig())
        assert ds.schema.features[0].vocabulary == ("a", "b", MISSING_LABEL)
        assert ds.rows[:, 0].tolist() == [1, 2, 0]

    def test_missing_continuous_category(self, tmp_path):
        cfg = IngestionConfig(feature_specs={"x": FeatureSpec("continuous", 2)})
        ds = load_csv(write(tmp_path, "x,y\n1,1\nNA,0\n2,1\n3,0\n"), cfg)
        assert ds.schema.features[0].vocabulary[-1] == MISSING_LABEL
        assert ds.rows[1, 0] == len(ds.schema.features[0].vocabulary) - 1

    def test_drop_row_policy(self, tmp_path):
        cfg = IngestionConfig(missing_policy="drop_row")
        ds = load_csv(write(tmp_path, "c,y\na,1\n,0\nb,1\n"), cfg)
        assert ds.n_rows == 2 and MISSING_LABEL not in ds.schema.features[0].vocabulary

    def test_ignore_and_label_options(self, tmp_path):
        cfg = IngestionConfig(label_column="died", positive_label="yes",
                              feature_specs={"id": FeatureSpec("ignore")})
        ds = load_csv(write(tmp_path, "id,c,died\n1,a,yes\n2,b,no\n"), cfg)
        assert ds.schema.names == ("c",) and ds.labels.tolist() == [1, 0]

    @pytest.mark.parametrize("text, message", [
        ("c,z\na,1\n", "'y'"),
        ("c,y\na,1\nb\n", "line 3"),
        ("c,c,y\na,a,1\n", "duplicate"),
        ("c,y\n", "no data rows"),
        ("c,y\na,\n", "missing label"),
    ])
    def test_data_errors(self, tmp_path, text, message):
        with pytest.raises(DataError, match=message):
            load_csv(write(tmp_path, text), IngestionConfig())

    def test_unknown_label_value_with_strict_negative(self, tmp_path):
        cfg = IngestionConfig(negative_label="0")
        with pytest.raises(DataError, match="'maybe'"):
            load_csv(write(tmp_path, "c,y\na,1\nb,maybe\n"), cfg)

    def test_non_numeric_continuous(self, tmp_path):
        cfg = IngestionConfig(feature_specs={"x": FeatureSpec("continuous", 2)})
        with pytest.raises(DataError, match="'abc'"):
            load_csv(write(tmp_path, "x,y\n1,1\nabc,0\n"), cfg)

    def test_deterministic(self, tmp_path):
        path = write(tmp_path, "c,x,y\nb,3.5,1\na,1.0,0\nb,,1\nc,2.0,0\n")
        cfg = IngestionConfig(feature_specs={"x": FeatureSpec("continuous", 3)})
        first, second = load_csv(path, cfg), load_csv(path, cfg)
        assert first.schema.to_dict() == second.schema.to_dict()
        assert first.rows.tobytes() == second.rows.tobytes()
        assert first.labels.tobytes() == second.labels.tobytes()

    def test_encode_against_schema_maps_unseen(self, tmp_path):
        train = load_csv(write(tmp_path, "c,y\na,1\nb,0\n"), IngestionConfig())
        rows = read_features(write(tmp_path, "c\nb\nzzz\n", "new.csv"), train.schema)
        assert rows[:, 0].tolist() == [1, UNSEEN]

    def test_encode_missing_column(self, tmp_path):
        schema = Schema.from_vocabularies([("c", ["a", "b"])])
        with pytest.raises(SchemaMismatchError, match="'c'|c"):
            read_features(write(tmp_path, "d\na\n"), schema)


class TestDiscretize:
    def test_median_split(self):
        edges, bins = discretize(np.arange(1, 9), 2)
        assert edges.tolist() == [4.5]
        assert np.bincount(bins).tolist() == [4, 4]

    def test_constant(self):
        with pytest.warns(UserWarning):
            edges, bins = discretize([3.0] * 5, 4)
        assert edges.size == 0 and set(bins.tolist()) == {0}

    def test_skewed_ties_merge(self):
        values = [1, 1, 1, 1, 100]
        edges, bins = discretize(values, 4)
        oracle = sorted({sorted_quantile(values, q) for q in (0.25, 0.5, 0.75)} - {100})
        assert edges.tolist() == oracle == [1]
        assert len(set(bins.tolist())) <= 2

    def test_order_preserving(self):
        rng = np.random.default_rng(0)
        x = rng.exponential(size=500)
        _, bins = discretize(x, 7)
        order = np.argsort(x)
        assert np.all(np.diff(bins[order]) >= 0)

    def test_labels(self):
        assert bin_labels([1.5, 4]) == ["(-inf, 1.5]", "(1.5, 4]", "(4, inf)"]

    def test_rejects_one_bin(self):
        with pytest.raises(ValueError):
            discretize([1, 2], 1)


class TestConfigValidation:
    def test_bad_kind(self):
        with pytest.raises(ConfigError):
            FeatureSpec("ordinal")

    def test_bad_bins(self):
        with pytest.raises(ConfigError):
            FeatureSpec("continuous", 1)

    def test_bad_policy(self):
        with pytest.raises(ConfigError):
            IngestionConfig(missing_policy="impute")


@pytest.fixture
def table2_model(table2_schema, table2_rule):
    return RuleSet([table2_rule])


class TestModelFiles:
    def test_table2_round_trip(self, tmp_path, table2_schema, table2_model):
        path = tmp_path / "m.json"
        save_model(table2_model, table2_schema, path)
        assert load_model(path, table2_schema) == table2_model
        doc = json.loads(path.read_text())
        proc = [c for c in doc["rules"][0] if c["feature"] == "procedure category"][0]
        assert proc["values"] == TABLE2_CODES

    def test_empty_round_trip(self, tmp_path, table2_schema):
        path = tmp_path / "m.json"
        save_model(RuleSet(), table2_schema, path)
        assert load_model(path, table2_schema) == RuleSet()

    def test_embedded_schema(self, tmp_path, table2_schema, table2_model):
        path = tmp_path / "m.json"
        save_model(table2_model, table2_schema, path, target={"column": "died", "positive": "1"})
        model = read_model(path)
        assert model.schema.digest() == table2_schema.digest()
        assert model.ruleset == table2_model and model.target["column"] == "died"

    def test_tampered_label(self, tmp_path, table2_schema, table2_model):
        path = tmp_path / "m.json"
        path.write_text(dumps_model(table2_model, table2_schema).replace('"142"', '"999"'))
        with pytest.raises(ModelFormatError, match="'999'"):
            load_model(path, table2_schema)

    def test_schema_mismatch(self, tmp_path, table2_schema, table2_model):
        path = tmp_path / "m.json"
        save_model(table2_model, table2_schema, path)
        other = Schema.from_vocabularies([("APRDRG Risk of Mortality", RISK)])
        with pytest.raises(SchemaMismatchError):
            load_model(path, other)

    @pytest.mark.parametrize("text", ["{", "[]", '{"format": "mrs-model", "version": 9}'])
    def test_malformed(self, tmp_path, table2_schema, text):
        with pytest.raises(ModelFormatError):
            load_model(write(tmp_path, text, "m.json"), table2_schema)

    def test_missing_file(self, tmp_path, table2_schema):
        with pytest.raises(DataError):
            load_model(tmp_path / "absent.json", table2_schema)

    def test_canonical_bytes(self, table2_schema, table2_rule):
        shuffled = Rule(reversed(table2_rule.conditions))
        assert dumps_model(RuleSet([shuffled]), table2_schema) == \
            dumps_model(RuleSet([table2_rule]), table2_schema)


class TestRender:
    def test_table2_text(self, table2_schema, table2_model):
        text = render_if_then(table2_model, table2_schema,
                              then="the patient is predicted to die in hospital",
                              otherwise="the patient is predicted to not die in hospital")
        expected = ("if APRDRG Risk of Mortality = Extreme AND procedure category = "
                    "33 or 34 or 35 or 39 or 58 or 61 or 63 or 142 or 216 or 225, "
                    "then the patient is predicted to die in hospital, "
                    "else the patient is predicted to not die in hospital.")

        def norm(s):
            return " ".join(s.replace(",", " ").rstrip(".").split())
        assert norm(text) == norm(expected)

    def test_empty(self, table2_schema):
        assert render_if_then(RuleSet(), table2_schema).startswith("if   ⟨never⟩ then positive")

    def test_multiple_rules(self):
        schema = Schema.from_vocabularies([("a", ["x", "y"]), ("b", ["u", "v"])])
        rs = RuleSet([Rule([Condition(0, [0])]), Rule([Condition(1, [1])])])
        assert render_if_then(rs, schema).splitlines() == [
            "if   a = x", "or   b = v", "then positive", "else negative"]
