"""Active collaborative filtering: pick the rating query worth asking.

Two generative rating models (a multiple-cause vector-quantized model
and a latent-class mixture) drive expected-value-of-information query
selection, with precomputable bound tables that prune most candidate
targets, prototype nets that shrink the query pool, a staged-replay
evaluation harness, and an HTTP session service for live use.
"""

from .bounds import (
    BoundTables,
    attitude_shift_bound,
    attitude_shift_table,
    build_mean_change_lp,
    load_bound_tables,
    mean_change_bound_iterative,
    mean_change_bound_lp,
    precompute_bound_tables,
    prune_targets,
    save_bound_tables,
)
from .data import (
    RatingsDataset,
    ReplayMask,
    SplitSpec,
    density_filter,
    generate_synthetic,
    load_csv,
    make_split,
    remap_items,
    save_csv,
    separated_ground_truth,
)
from .engines import McvqEngine, NaiveBayesEngine, engine_for
from .evaluation import (
    ExperimentConfig,
    LossRecord,
    PruningRecord,
    RunData,
    model_loss,
    prepare_synthetic_runs,
    run_prototype_experiment,
    run_pruning_experiment,
    run_query_experiment,
)
from .mcvq import McvqModel, UserState, fresh_state, rating_posterior, update_attitudes
from .naive_bayes import NaiveBayesModel, NbUserState, nb_fresh_state, nb_rating_posterior
from .prototypes import PrototypeSet, beta_for_fraction, select_prototypes
from .strategies import (
    QueryDecision,
    StrategyConfig,
    evoi,
    recommend,
    select_query,
    unobserved_items,
)
from .training import (
    TrainConfig,
    align_mcvq,
    align_naive_bayes,
    fit_mcvq,
    fit_naive_bayes,
)

__version__ = "0.1.0"

__all__ = [
    "BoundTables",
    "ExperimentConfig",
    "LossRecord",
    "McvqEngine",
    "McvqModel",
    "NaiveBayesEngine",
    "NaiveBayesModel",
    "NbUserState",
    "PrototypeSet",
    "PruningRecord",
    "QueryDecision",
    "RatingsDataset",
    "ReplayMask",
    "RunData",
    "SplitSpec",
    "StrategyConfig",
    "TrainConfig",
    "UserState",
    "align_mcvq",
    "align_naive_bayes",
    "attitude_shift_bound",
    "attitude_shift_table",
    "beta_for_fraction",
    "build_mean_change_lp",
    "density_filter",
    "engine_for",
    "evoi",
    "fit_mcvq",
    "fit_naive_bayes",
    "fresh_state",
    "generate_synthetic",
    "load_bound_tables",
    "load_csv",
    "make_split",
    "mean_change_bound_iterative",
    "mean_change_bound_lp",
    "model_loss",
    "nb_fresh_state",
    "nb_rating_posterior",
    "precompute_bound_tables",
    "prepare_synthetic_runs",
    "prune_targets",
    "rating_posterior",
    "recommend",
    "remap_items",
    "run_prototype_experiment",
    "run_pruning_experiment",
    "run_query_experiment",
    "save_bound_tables",
    "save_csv",
    "select_prototypes",
    "select_query",
    "separated_ground_truth",
    "unobserved_items",
    "update_attitudes",
]
