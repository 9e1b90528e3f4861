from .config import (
    DEFAULT_BETA_GRID,
    DEFAULT_LAMBDA_GRID,
    DataConfig,
    ExperimentConfig,
    SweepGrid,
    config_fingerprint,
    config_from_dict,
    config_to_dict,
    load_experiment_config,
)
from .runner import (
    AggregateResult,
    RunManifest,
    SweepResult,
    aggregate,
    load_datasets,
    run_experiment,
    sweep,
    sweep_grid,
)
from .trainer import (
    RunResult,
    StepRecord,
    TrainingLoop,
    eval_logits,
    prepare_run,
    select_model_iid,
    train_run,
)

__all__ = [
    "AggregateResult",
    "DataConfig",
    "DEFAULT_BETA_GRID",
    "DEFAULT_LAMBDA_GRID",
    "ExperimentConfig",
    "RunManifest",
    "RunResult",
    "StepRecord",
    "SweepGrid",
    "SweepResult",
    "TrainingLoop",
    "aggregate",
    "config_fingerprint",
    "config_from_dict",
    "config_to_dict",
    "eval_logits",
    "load_datasets",
    "load_experiment_config",
    "prepare_run",
    "run_experiment",
    "select_model_iid",
    "sweep",
    "sweep_grid",
    "train_run",
]
