"""Command-line front end.

Subcommands: ``train``, ``predict``, ``evaluate``, ``export``, ``gen`` and
``oracle``. Settings come from ``--config`` (JSON) and flags; flags win.
Environment variables are never consulted.

Exit codes: 0 success, 1 configuration error, 2 data error,
3 internal invariant failure.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import hashlib
import json
import logging
import sys
import time
import warnings
from pathlib import Path

from . import __version__
from .config import RunConfig, config_from_dict, config_to_dict, load_config
from .core import Condition, Rule, RuleSet, build_coverage, first_covering_rule
from .dataio import dumps_model, load_csv, read_features, read_model, render_if_then
from .errors import ConfigError, DataError, InvariantError, MRSError, SearchSpaceTooLarge
from .evaluation import evaluate, exhaustive_map, generate_planted, make_schema, split
from .inference import run, write_trace
from .posterior import score

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_INTERNAL = 0, 1, 2, 3

log = logging.getLogger("mrs")

# Default planted scenario for ``gen``: two high-cardinality code-like
# features plus eight low-cardinality ones, two ground-truth rules.
DEFAULT_PLANTED = {
    "n_rows": 2000,
    "noise_rate": 0.05,
    "label_column": "y",
    "features": [
        {"name": "procedure", "cardinality": 12},
        {"name": "diagnosis", "cardinality": 12},
        {"name": "f2", "cardinality": 2},
        {"name": "f3", "cardinality": 2},
        {"name": "f4", "cardinality": 3},
        {"name": "f5", "cardinality": 4},
        {"name": "f6", "cardinality": 2},
        {"name": "f7", "cardinality": 3},
        {"name": "f8", "cardinality": 4},
        {"name": "f9", "cardinality": 2},
    ],
    "rules": [
        [{"feature": "procedure", "values": ["0", "1", "2", "3", "4", "5"]},
         {"feature": "f2", "values": ["0"]}],
        [{"feature": "diagnosis", "values": ["0", "1", "2", "3", "4", "5"]},
         {"feature": "f5", "values": ["0", "1"]}],
    ],
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def _run_config(args) -> RunConfig:
    cfg = load_config(args.config) if getattr(args, "config", None) else RunConfig()
    search_over = {k: v for k, v in (("seed", getattr(args, "seed", None)),
                                     ("n_iter", getattr(args, "iters", None)),
                                     ("restarts", getattr(args, "restarts", None)),
                                     ("T0", getattr(args, "t0", None))) if v is not None}
    ingest_over = {k: v for k, v in (("label_column", getattr(args, "label_column", None)),
                                     ("positive_label", getattr(args, "positive_label", None)))
                   if v is not None}
    changes = {}
    if search_over:
        changes["search"] = dataclasses.replace(cfg.search, **search_over)
    if ingest_over:
        changes["ingest"] = dataclasses.replace(cfg.ingest, **ingest_over)
    if getattr(args, "test_fraction", None) is not None:
        changes["test_fraction"] = args.test_fraction
    return dataclasses.replace(cfg, **changes) if changes else cfg


def _write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8")


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_train(args) -> int:
    started = time.perf_counter()
    if args.replay:
        try:
            manifest = json.loads(Path(args.replay).read_text(encoding="utf-8"))
            cfg = config_from_dict(manifest["config"])
            data_path = manifest["inputs"]["data"]["path"]
            recorded = manifest["inputs"]["data"]["sha256"]
        except (OSError, ValueError, KeyError, TypeError) as e:
            raise ConfigError(f"cannot replay {args.replay}: {e}") from None
        if not Path(data_path).is_file():
            raise DataError(f"no such file: {data_path}")
        if sha256_file(data_path) != recorded:
            raise DataError(f"{data_path} changed since the manifest was written")
    else:
        if not args.data:
            raise ConfigError("--data is required unless --replay is given")
        cfg = _run_config(args)
        data_path = args.data
    out = Path(args.out)
    seed = cfg.search.seed

    dataset = load_csv(data_path, cfg.ingest)
    train, test = (split(dataset, cfg.test_fraction, seed) if cfg.test_fraction
                   else (dataset, None))
    result = run(train, cfg.hyper, cfg.search)

    rebuilt = score(result.ruleset, train, build_coverage(train, result.ruleset), cfg.hyper)
    if rebuilt != result.score:
        raise InvariantError("final model score does not match a fresh rebuild")

    target = {"column": cfg.ingest.label_column, "positive": cfg.ingest.positive_label}
    artifacts = {"model": out / "model.json", "report_train": out / "report_train.json",
                 "trace": out / "trace.tsv"}
    _write(artifacts["model"], dumps_model(result.ruleset, dataset.schema, target))
    train_report = evaluate(result.ruleset, train)
    _write(artifacts["report_train"], train_report.to_json())
    sys.stdout.write(train_report.table("train"))
    if test is not None:
        artifacts["report_test"] = out / "report_test.json"
        test_report = evaluate(result.ruleset, test)
        _write(artifacts["report_test"], test_report.to_json())
        sys.stdout.write(test_report.table("test"))
    artifacts["trace"].parent.mkdir(parents=True, exist_ok=True)
    with artifacts["trace"].open("w", encoding="utf-8") as fh:
        write_trace(result.trace, fh)

    manifest = {
        "library_version": __version__,
        "seed": seed,
        "config": config_to_dict(cfg),
        "inputs": {"data": {"path": str(Path(data_path).resolve()),
                            "sha256": sha256_file(data_path)}},
        "artifacts": {name: {"path": str(p), "sha256": sha256_file(p)}
                      for name, p in artifacts.items()},
        "posterior": {"log_prior": result.score.log_prior,
                      "log_likelihood": result.score.log_likelihood,
                      "total": result.score.total},
        "duration_s": round(time.perf_counter() - started, 3),
    }
    _write(out / "manifest.json", json.dumps(manifest, indent=2) + "\n")
    return EXIT_OK


def cmd_predict(args) -> int:
    model = read_model(args.model)
    rows = read_features(args.data, model.schema, delimiter=args.delimiter)
    lines = []
    for row in rows.tolist():
        k = first_covering_rule(row, model.ruleset)
        lines.append("0, rule=-" if k is None else f"1, rule={k + 1}")
    text = "\n".join(lines) + "\n"
    if args.out:
        _write(Path(args.out), text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_evaluate(args) -> int:
    model = read_model(args.model)
    if args.config:
        ingest = load_config(args.config).ingest
    else:
        target = model.target or {}
        ingest = RunConfig().ingest
        ingest = dataclasses.replace(
            ingest, label_column=target.get("column", ingest.label_column),
            positive_label=target.get("positive", ingest.positive_label))
    if args.label_column or args.positive_label:
        ingest = dataclasses.replace(
            ingest, label_column=args.label_column or ingest.label_column,
            positive_label=args.positive_label or ingest.positive_label)
    dataset = load_csv(args.data, ingest, schema=model.schema)
    report = evaluate(model.ruleset, dataset)
    sys.stdout.write(report.table())
    if args.out:
        _write(Path(args.out), report.to_json())
    return EXIT_OK


def cmd_export(args) -> int:
    model = read_model(args.model)
    text = render_if_then(model.ruleset, model.schema, args.then, args.otherwise)
    if args.out:
        _write(Path(args.out), text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def _planted_from_doc(doc: dict):
    try:
        spec = [(f["name"], f["values"] if "values" in f else int(f["cardinality"]))
                for f in doc["features"]]
        schema = make_schema(spec)
        rules = []
        for rule in doc["rules"]:
            conds = []
            for c in rule:
                j = schema.index(c["feature"])
                conds.append(Condition(j, (schema.value_index(j, str(v)) for v in c["values"])))
            rules.append(Rule(conds))
    except (KeyError, TypeError, ValueError) as e:
        raise ConfigError(f"bad planted-model description: {e}") from None
    return schema, RuleSet(rules)


def cmd_gen(args) -> int:
    doc = dict(DEFAULT_PLANTED)
    if args.config:
        try:
            doc.update(json.loads(Path(args.config).read_text(encoding="utf-8")))
        except (OSError, json.JSONDecodeError) as e:
            raise ConfigError(f"{args.config}: {e}") from None
    if args.rows is not None:
        doc["n_rows"] = args.rows
    if args.noise is not None:
        doc["noise_rate"] = args.noise
    schema, planted = _planted_from_doc(doc)
    try:
        dataset = generate_planted(int(doc["n_rows"]), schema, planted,
                                   float(doc["noise_rate"]), args.seed)
    except ValueError as e:
        raise ConfigError(str(e)) from None
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with out.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow([*schema.names, doc["label_column"]])
        for row, y in zip(dataset.rows.tolist(), dataset.labels.tolist()):
            writer.writerow([schema.features[j].vocabulary[v] for j, v in enumerate(row)] + [y])
    if args.model:
        _write(Path(args.model), dumps_model(planted, schema, {"column": doc["label_column"],
                                                               "positive": "1"}))
    return EXIT_OK


def cmd_oracle(args) -> int:
    cfg = _run_config(args)
    dataset = load_csv(args.data, cfg.ingest)
    max_rules = args.max_rules or cfg.search.max_rules
    max_len = args.max_rule_len or cfg.search.max_rule_len
    try:
        ruleset, best = exhaustive_map(dataset, cfg.hyper, max_rules, max_len)
    except SearchSpaceTooLarge as e:
        raise ConfigError(str(e)) from None
    sys.stdout.write(render_if_then(ruleset, dataset.schema))
    sys.stdout.write(f"log_posterior={best.total!r} log_prior={best.log_prior!r} "
                     f"log_likelihood={best.log_likelihood!r}\n")
    if args.out:
        _write(Path(args.out), dumps_model(ruleset, dataset.schema, {
            "column": cfg.ingest.label_column, "positive": cfg.ingest.positive_label}))
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="mrs", description=__doc__.split("\n\n")[0])
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def label_flags(p):
        p.add_argument("--label-column")
        p.add_argument("--positive-label")

    def search_flags(p):
        p.add_argument("--seed", type=int)
        p.add_argument("--iters", type=int)
        p.add_argument("--restarts", type=int)
        p.add_argument("--t0", type=float)

    p = sub.add_parser("train", help="learn a rule set from a labeled CSV file")
    p.add_argument("--data")
    p.add_argument("--config")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--test-fraction", type=float)
    p.add_argument("--replay", help="re-run the training recorded in a manifest")
    search_flags(p)
    label_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", help="classify rows and name the first matching rule")
    p.add_argument("--data", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--out")
    p.add_argument("--delimiter", default=",")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("evaluate", help="report F1 and model size on labeled data")
    p.add_argument("--data", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--config")
    p.add_argument("--out", help="write the report as JSON")
    label_flags(p)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("export", help="print the model as an if/then listing")
    p.add_argument("--model", required=True)
    p.add_argument("--out")
    p.add_argument("--then", default="positive")
    p.add_argument("--else", dest="otherwise", default="negative")
    p.set_defaults(func=cmd_export)

    p = sub.add_parser("gen", help="write a synthetic dataset labeled by a planted rule set")
    p.add_argument("--out", required=True)
    p.add_argument("--config", help="JSON planted-model description")
    p.add_argument("--model", help="also write the planted rule set as a model file")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--rows", type=int)
    p.add_argument("--noise", type=float)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("oracle", help="exhaustive MAP search on a small problem")
    p.add_argument("--data", required=True)
    p.add_argument("--config")
    p.add_argument("--out")
    p.add_argument("--max-rules", type=int)
    p.add_argument("--max-rule-len", type=int)
    label_flags(p)
    p.set_defaults(func=cmd_oracle)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("default")
            return args.func(args)
    except ConfigError as e:
        print(f"mrs: configuration error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as e:
        print(f"mrs: data error: {e}", file=sys.stderr)
        return EXIT_DATA
    except InvariantError as e:
        print(f"mrs: internal invariant failure: {e}", file=sys.stderr)
        return EXIT_INTERNAL
    except MRSError as e:
        print(f"mrs: {e}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
