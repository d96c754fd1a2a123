"""CSV ingestion, quantile discretization and the model file format.

Model files are UTF-8 JSON::

    {
      "format": "mrs-model",
      "version": 1,
      "schema_hash": "<16 hex chars>",
      "target": {"column": "died", "positive": "1"},
      "rules": [
        [{"feature": "risk", "values": ["Extreme"]},
         {"feature": "procedure", "values": ["33", "34", "35"]}]
      ],
      "schema": {"features": [{"name": ..., "vocabulary": [...], "edges": null}, ...]}
    }

``rules`` lists each rule as its (feature name, value labels) conditions,
in canonical order. ``schema`` embeds the training schema so a model can be
applied to raw CSV rows on its own; ``schema_hash`` guards against loading
a model against an incompatible schema. ``target`` is optional.
"""

from __future__ import annotations

import csv
import json
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, NamedTuple, Sequence

import numpy as np

from .core import (
    MISSING_LABEL,
    UNSEEN,
    Condition,
    Dataset,
    Feature,
    Rule,
    RuleSet,
    Schema,
    canonical_ruleset,
)
from .errors import ConfigError, DataError, ModelFormatError, SchemaMismatchError

MODEL_FORMAT = "mrs-model"
MODEL_VERSION = 1

CATEGORICAL = "categorical"
CONTINUOUS = "continuous"
IGNORE = "ignore"


@dataclass(frozen=True)
class FeatureSpec:
    kind: str = CATEGORICAL
    n_bins: int = 10

    def __post_init__(self):
        if self.kind not in (CATEGORICAL, CONTINUOUS, IGNORE):
            raise ConfigError(f"unknown feature kind {self.kind!r}")
        if self.kind == CONTINUOUS and (not isinstance(self.n_bins, int) or self.n_bins < 2):
            raise ConfigError(f"n_bins must be an integer >= 2, got {self.n_bins!r}")


@dataclass(frozen=True)
class IngestionConfig:
    label_column: str = "y"
    positive_label: str = "1"
    # when set, label cells other than positive/negative are rejected
    negative_label: str | None = None
    feature_specs: Mapping[str, FeatureSpec] = field(default_factory=dict)
    default_spec: FeatureSpec = FeatureSpec()
    missing_policy: str = "as_category"
    delimiter: str = ","
    missing_values: tuple[str, ...] = ("", "NA", "NaN")

    def __post_init__(self):
        if self.missing_policy not in ("as_category", "drop_row"):
            raise ConfigError(f"unknown missing_policy {self.missing_policy!r}")
        if self.label_column in self.feature_specs and \
                self.feature_specs[self.label_column].kind != IGNORE:
            raise ConfigError("the label column cannot also be a feature")
        if len(self.delimiter) != 1:
            raise ConfigError("delimiter must be a single character")

    def spec_for(self, column: str) -> FeatureSpec:
        return self.feature_specs.get(column, self.default_spec)


# ---------------------------------------------------------------------------
# discretization
# ---------------------------------------------------------------------------

def discretize(values: Sequence[float], n_bins: int) -> tuple[np.ndarray, np.ndarray]:
    """Equal-frequency binning.

    Returns the interior cut points and the bin index of every value; bin
    ``i`` holds values in ``(edges[i-1], edges[i]]``. Duplicate quantiles
    are merged and cut points at or above the maximum are dropped, so
    heavily tied data can yield fewer than ``n_bins`` bins.
    """
    if n_bins < 2:
        raise ValueError("n_bins must be at least 2")
    x = np.asarray(values, dtype=float)
    finite = x[np.isfinite(x)]
    if finite.size == 0:
        raise ValueError("no finite values to discretize")
    qs = np.quantile(finite, np.arange(1, n_bins) / n_bins)
    edges = np.unique(qs)
    edges = edges[edges < finite.max()]
    if edges.size == 0:
        warnings.warn("all values identical; using a single bin")
    return edges, np.searchsorted(edges, x, side="left")


def _fmt(x: float) -> str:
    return f"{x:.10g}"


def bin_labels(edges: Sequence[float]) -> list[str]:
    bounds = [-math.inf, *edges, math.inf]
    labels = []
    for lo, hi in zip(bounds, bounds[1:]):
        right = "]" if math.isfinite(hi) else ")"
        labels.append(f"({_fmt(lo)}, {_fmt(hi)}{right}")
    return labels


# ---------------------------------------------------------------------------
# CSV ingestion
# ---------------------------------------------------------------------------

def _read_table(path, delimiter: str) -> tuple[list[str], list[list[str]]]:
    path = Path(path)
    if not path.is_file():
        raise DataError(f"no such file: {path}")
    with path.open(newline="", encoding="utf-8-sig") as fh:
        reader = csv.reader(fh, delimiter=delimiter)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path} is empty") from None
        except csv.Error as e:
            raise DataError(f"{path}: {e}") from None
        try:
            body = [row for row in reader if row]
        except csv.Error as e:
            raise DataError(f"{path}: {e}") from None
    if len(set(header)) != len(header):
        raise DataError(f"{path}: duplicate column names in header")
    for i, row in enumerate(body):
        if len(row) != len(header):
            raise DataError(f"{path}: line {i + 2} has {len(row)} fields, expected {len(header)}")
    if not body:
        raise DataError(f"{path} has a header but no data rows")
    return header, body


def _parse_labels(cells: Sequence[str], config: IngestionConfig) -> np.ndarray:
    labels = np.zeros(len(cells), dtype=np.uint8)
    for i, cell in enumerate(cells):
        if cell in config.missing_values:
            raise DataError(f"row {i + 1}: missing label in column {config.label_column!r}")
        if cell == config.positive_label:
            labels[i] = 1
        elif config.negative_label is not None and cell != config.negative_label:
            raise DataError(f"row {i + 1}: unknown label value {cell!r}")
    return labels


def _parse_float(cell: str, row: int, column: str) -> float:
    try:
        value = float(cell)
    except ValueError:
        raise DataError(f"row {row + 1}: cannot parse {cell!r} in column {column!r} as a number") from None
    if not math.isfinite(value):
        raise DataError(f"row {row + 1}: non-finite value in column {column!r}")
    return value


def _sorted_labels(labels) -> list[str]:
    try:
        return sorted(labels, key=lambda v: (float(v), v))
    except ValueError:
        return sorted(labels)


def load_csv(path, config: IngestionConfig, schema: Schema | None = None) -> Dataset:
    """Read a labeled CSV file.

    Without ``schema`` the vocabularies are learned from the file:
    categorical values sorted (numerically when every label is a number),
    continuous columns as ascending quantile bins, and the missing marker
    last. With ``schema`` the file is encoded against it instead;
    categories it does not know map to :data:`UNSEEN`.
    """
    header, body = _read_table(path, config.delimiter)
    if config.label_column not in header:
        raise DataError(f"label column {config.label_column!r} not found in {path}")
    label_idx = header.index(config.label_column)
    labels = _parse_labels([row[label_idx] for row in body], config)

    if schema is not None:
        rows = _encode(header, body, schema, config.missing_values)
        return Dataset(schema, rows, labels)

    columns = [(i, name) for i, name in enumerate(header)
               if i != label_idx and config.spec_for(name).kind != IGNORE]
    absent = sorted(set(config.feature_specs) - set(header))
    if absent:
        raise DataError(f"configured columns not found in {path}: {', '.join(absent)}")
    missing = config.missing_values
    if config.missing_policy == "drop_row":
        keep = [n for n, row in enumerate(body) if not any(row[i] in missing for i, _ in columns)]
        body = [body[n] for n in keep]
        labels = labels[keep]
        if not body:
            raise DataError("every row has a missing value")

    features: list[Feature] = []
    encoded = np.empty((len(body), len(columns)), dtype=np.int64)
    for j, (i, name) in enumerate(columns):
        spec = config.spec_for(name)
        cells = [row[i] for row in body]
        is_missing = np.array([c in missing for c in cells], dtype=bool)
        if spec.kind == CATEGORICAL:
            seen = _sorted_labels({c for c, m in zip(cells, is_missing) if not m})
            vocab = {label: k for k, label in enumerate(seen)}
            if is_missing.any():
                vocab[MISSING_LABEL] = len(vocab)
            encoded[:, j] = [vocab[MISSING_LABEL] if m else vocab[c] for c, m in zip(cells, is_missing)]
            features.append(Feature(name, tuple(vocab)))
        else:
            values = np.array([math.nan if m else _parse_float(c, n, name)
                               for n, (c, m) in enumerate(zip(cells, is_missing))])
            if is_missing.all():
                raise DataError(f"continuous column {name!r} has no values")
            edges, bins = discretize(values, spec.n_bins)
            vocab_list = bin_labels(edges)
            if is_missing.any():
                bins = np.where(is_missing, len(vocab_list), bins)
                vocab_list.append(MISSING_LABEL)
            encoded[:, j] = bins
            features.append(Feature(name, tuple(vocab_list), tuple(edges.tolist())))
    if not features:
        raise DataError("no feature columns to learn from")
    return Dataset(Schema(tuple(features)), encoded, labels)


def _encode(header: Sequence[str], body: Sequence[Sequence[str]], schema: Schema,
            missing_values: Sequence[str]) -> np.ndarray:
    positions = {name: i for i, name in enumerate(header)}
    absent = [f.name for f in schema.features if f.name not in positions]
    if absent:
        raise SchemaMismatchError(f"columns required by the model are missing: {', '.join(absent)}")
    out = np.empty((len(body), len(schema)), dtype=np.int64)
    for j, feat in enumerate(schema.features):
        i = positions[feat.name]
        lookup = {label: k for k, label in enumerate(feat.vocabulary)}
        missing_idx = lookup.get(MISSING_LABEL, UNSEEN)
        col = out[:, j]
        for n, row in enumerate(body):
            cell = row[i]
            if cell in missing_values:
                col[n] = missing_idx
            elif feat.is_continuous:
                col[n] = np.searchsorted(feat.edges, _parse_float(cell, n, feat.name), side="left")
            else:
                col[n] = lookup.get(cell, UNSEEN)
    return out


def read_features(path, schema: Schema, delimiter: str = ",",
                  missing_values: Sequence[str] = IngestionConfig.missing_values) -> np.ndarray:
    """Encode the feature columns of a (possibly unlabeled) CSV file against ``schema``."""
    header, body = _read_table(path, delimiter)
    return _encode(header, body, schema, missing_values)


# ---------------------------------------------------------------------------
# model files
# ---------------------------------------------------------------------------

class ModelFile(NamedTuple):
    schema: Schema
    ruleset: RuleSet
    target: dict | None


def model_to_dict(ruleset: RuleSet, schema: Schema, target: Mapping | None = None) -> dict:
    ruleset = canonical_ruleset(ruleset, schema)
    rules = [
        [{"feature": schema.features[c.feature].name,
          "values": [schema.features[c.feature].vocabulary[v] for v in c.values]}
         for c in rule.conditions]
        for rule in ruleset
    ]
    doc = {"format": MODEL_FORMAT, "version": MODEL_VERSION, "schema_hash": schema.digest()}
    if target is not None:
        doc["target"] = dict(target)
    doc["rules"] = rules
    doc["schema"] = schema.to_dict()
    return doc


def dumps_model(ruleset: RuleSet, schema: Schema, target: Mapping | None = None) -> str:
    return json.dumps(model_to_dict(ruleset, schema, target), indent=2, ensure_ascii=False) + "\n"


def save_model(ruleset: RuleSet, schema: Schema, path, target: Mapping | None = None) -> None:
    Path(path).write_text(dumps_model(ruleset, schema, target), encoding="utf-8")


def _rules_from_doc(doc: dict, schema: Schema) -> RuleSet:
    rules = doc.get("rules")
    if not isinstance(rules, list):
        raise ModelFormatError("model file has no 'rules' list")
    out = []
    for k, rule in enumerate(rules):
        if not isinstance(rule, list) or not rule:
            raise ModelFormatError(f"rule {k + 1} must be a non-empty list of conditions")
        conds = []
        for cond in rule:
            try:
                name, labels = cond["feature"], cond["values"]
            except (TypeError, KeyError):
                raise ModelFormatError(f"rule {k + 1}: malformed condition {cond!r}") from None
            try:
                j = schema.index(name)
            except SchemaMismatchError:
                raise ModelFormatError(f"rule {k + 1}: unknown feature {name!r}") from None
            vocab = schema.features[j].vocabulary
            bad = [v for v in labels if v not in vocab]
            if bad:
                raise ModelFormatError(
                    f"rule {k + 1}: unknown value label {bad[0]!r} for feature {name!r}")
            if not labels:
                raise ModelFormatError(f"rule {k + 1}: empty value list for feature {name!r}")
            conds.append(Condition(j, (vocab.index(v) for v in labels)))
        try:
            out.append(Rule(conds))
        except ValueError as e:
            raise ModelFormatError(f"rule {k + 1}: {e}") from None
    try:
        return canonical_ruleset(out, schema)
    except SchemaMismatchError as e:
        raise ModelFormatError(str(e)) from None


def _read_doc(path) -> dict:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise DataError(f"no such model file: {path}") from None
    except (json.JSONDecodeError, UnicodeDecodeError) as e:
        raise ModelFormatError(f"{path}: not a valid model file ({e})") from None
    if not isinstance(doc, dict) or doc.get("format") != MODEL_FORMAT:
        raise ModelFormatError(f"{path}: not an {MODEL_FORMAT} file")
    if doc.get("version") != MODEL_VERSION:
        raise ModelFormatError(f"{path}: unsupported model version {doc.get('version')!r}")
    return doc


def load_model(path, schema: Schema) -> RuleSet:
    doc = _read_doc(path)
    if doc.get("schema_hash") != schema.digest():
        raise SchemaMismatchError(
            f"{path}: schema hash {doc.get('schema_hash')!r} does not match {schema.digest()!r}")
    return _rules_from_doc(doc, schema)


def read_model(path) -> ModelFile:
    """Load a model together with the schema embedded in it."""
    doc = _read_doc(path)
    try:
        schema = Schema.from_dict(doc["schema"])
    except (KeyError, TypeError, DataError) as e:
        raise ModelFormatError(f"{path}: bad embedded schema ({e})") from None
    return ModelFile(schema, load_model(path, schema), doc.get("target"))


def render_if_then(ruleset: RuleSet, schema: Schema, then: str = "positive",
                   otherwise: str = "negative") -> str:
    """Human-readable listing: one ``if``/``or`` line per rule, then the outcome."""
    if len(ruleset) == 0:
        return f"if   ⟨never⟩ then {then}\nelse {otherwise}\n"
    lines = []
    for k, rule in enumerate(ruleset):
        parts = []
        for c in rule.conditions:
            feat = schema.features[c.feature]
            parts.append(f"{feat.name} = " + " or ".join(feat.vocabulary[v] for v in c.values))
        lines.append(("if   " if k == 0 else "or   ") + " AND ".join(parts))
    lines.append(f"then {then}")
    lines.append(f"else {otherwise}")
    return "\n".join(lines) + "\n"
