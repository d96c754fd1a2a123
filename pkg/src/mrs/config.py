"""Run configuration: one JSON document covering ingestion, priors and search.

Example::

    {
      "data": {
        "label_column": "died",
        "positive_label": "1",
        "missing_policy": "as_category",
        "features": {"age": {"type": "continuous", "n_bins": 10},
                     "record_id": {"type": "ignore"}}
      },
      "prior": {"alpha_M": 1, "beta_M": 10, "alpha_L": 1, "beta_L": 10, "theta": 1},
      "likelihood": {"alpha_pos": 100, "beta_pos": 1, "alpha_neg": 100, "beta_neg": 1},
      "search": {"n_iter": 5000, "T0": 100, "explore_prob": 0.2, "max_rule_len": 20,
                 "max_rules": 10, "neighbor_cap": 200, "seed": 0, "restarts": 3},
      "test_fraction": 0.2
    }

Every section and key is optional. Unknown keys are rejected.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass
from pathlib import Path

from .dataio import FeatureSpec, IngestionConfig
from .errors import ConfigError
from .inference import SAConfig
from .posterior import Hyperparams, LikelihoodHyperparams, PriorHyperparams

_SECTIONS = {"data", "prior", "likelihood", "search", "test_fraction"}


@dataclass(frozen=True)
class RunConfig:
    ingest: IngestionConfig = IngestionConfig()
    hyper: Hyperparams = Hyperparams()
    search: SAConfig = SAConfig()
    test_fraction: float | None = None

    def __post_init__(self):
        tf = self.test_fraction
        if tf is not None and not (isinstance(tf, (int, float)) and 0 < tf < 1):
            raise ConfigError(f"test_fraction must lie in (0, 1), got {tf!r}")


def _build(cls, data, section):
    if data is None:
        return cls()
    if not isinstance(data, dict):
        raise ConfigError(f"section {section!r} must be an object")
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(data) - names
    if unknown:
        raise ConfigError(f"unknown keys in {section!r}: {', '.join(sorted(unknown))}")
    try:
        return cls(**data)
    except TypeError as e:
        raise ConfigError(f"section {section!r}: {e}") from None


def _feature_spec(data, name) -> FeatureSpec:
    if isinstance(data, str):
        data = {"type": data}
    if not isinstance(data, dict) or set(data) - {"type", "n_bins"}:
        raise ConfigError(f"bad feature spec for {name!r}: {data!r}")
    return FeatureSpec(data.get("type", "categorical"), data.get("n_bins", 10))


def _ingest(data) -> IngestionConfig:
    if data is None:
        return IngestionConfig()
    if not isinstance(data, dict):
        raise ConfigError("section 'data' must be an object")
    data = dict(data)
    specs = {name: _feature_spec(s, name) for name, s in (data.pop("features", None) or {}).items()}
    kwargs = {"feature_specs": specs}
    if "default" in data:
        kwargs["default_spec"] = _feature_spec(data.pop("default"), "default")
    if "missing_values" in data:
        kwargs["missing_values"] = tuple(data.pop("missing_values"))
    allowed = {"label_column", "positive_label", "negative_label", "missing_policy", "delimiter"}
    unknown = set(data) - allowed
    if unknown:
        raise ConfigError(f"unknown keys in 'data': {', '.join(sorted(unknown))}")
    for key in ("label_column", "positive_label", "negative_label"):
        if key in data and data[key] is not None:
            data[key] = str(data[key])
    return IngestionConfig(**data, **kwargs)


def config_from_dict(doc: dict) -> RunConfig:
    if not isinstance(doc, dict):
        raise ConfigError("configuration must be a JSON object")
    unknown = set(doc) - _SECTIONS
    if unknown:
        raise ConfigError(f"unknown configuration sections: {', '.join(sorted(unknown))}")
    prior = dict(doc.get("prior") or {})
    if isinstance(prior.get("theta"), list):
        prior["theta"] = tuple(prior["theta"])
    return RunConfig(
        ingest=_ingest(doc.get("data")),
        hyper=Hyperparams(_build(PriorHyperparams, prior, "prior"),
                          _build(LikelihoodHyperparams, doc.get("likelihood"), "likelihood")),
        search=_build(SAConfig, doc.get("search"), "search"),
        test_fraction=doc.get("test_fraction"),
    )


def load_config(path) -> RunConfig:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigError(f"no such config file: {path}") from None
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: invalid JSON ({e})") from None
    return config_from_dict(doc)


def config_to_dict(cfg: RunConfig) -> dict:
    ing = cfg.ingest
    return {
        "data": {
            "label_column": ing.label_column,
            "positive_label": ing.positive_label,
            "negative_label": ing.negative_label,
            "missing_policy": ing.missing_policy,
            "delimiter": ing.delimiter,
            "missing_values": list(ing.missing_values),
            "default": {"type": ing.default_spec.kind, "n_bins": ing.default_spec.n_bins},
            "features": {name: {"type": s.kind, "n_bins": s.n_bins}
                         for name, s in sorted(ing.feature_specs.items())},
        },
        "prior": {k: (list(v) if isinstance(v, tuple) else v)
                  for k, v in dataclasses.asdict(cfg.hyper.prior).items()},
        "likelihood": dataclasses.asdict(cfg.hyper.likelihood),
        "search": dataclasses.asdict(cfg.search),
        "test_fraction": cfg.test_fraction,
    }
