"""Multi-value rule sets: interpretable OR-of-ANDs classifiers whose conditions
admit several values per feature, learned by simulated-annealing MAP search."""

from .core import (
    Condition,
    CoverageIndex,
    Dataset,
    Feature,
    Rule,
    RuleSet,
    Schema,
    build_coverage,
    canonical_ruleset,
    classify,
    condition_satisfied,
    expand_single_value,
    rule_covers,
)
from .dataio import FeatureSpec, IngestionConfig, load_csv, load_model, read_model, save_model
from .evaluation import ModelReport, evaluate, exhaustive_map, generate_planted, split
from .inference import SAConfig, run
from .posterior import (
    ConfusionCounts,
    Hyperparams,
    LikelihoodHyperparams,
    PosteriorScore,
    PriorHyperparams,
    log_likelihood,
    log_prior,
    score,
)

__version__ = "0.1.0"
