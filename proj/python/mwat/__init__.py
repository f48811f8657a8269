"""Module-wise adversarial training toolkit for a toy driving pipeline.

The heavy lifting lives in the C++ core; this package re-exports the bound
operations: dataset generation, training, attacks, evaluation and the
closed-loop simulator.
"""

from ._core import (
    AttackConfig,
    Checkpoint,
    ContractError,
    Dataset,
    DimensionError,
    DwaaState,
    NumericError,
    __version__,
    apply_corruption,
    attack_config,
    evaluate_loss,
    evaluate_whitebox,
    finetune,
    generate_dataset,
    load_checkpoint,
    load_dataset,
    mean_plan_error,
    pretrain,
    project,
    run_closed_loop,
    save_checkpoint,
    save_dataset,
    seeded_random,
    universal_noise,
)

__all__ = [
    "AttackConfig",
    "Checkpoint",
    "ContractError",
    "Dataset",
    "DimensionError",
    "DwaaState",
    "NumericError",
    "__version__",
    "apply_corruption",
    "attack_config",
    "evaluate_loss",
    "evaluate_whitebox",
    "finetune",
    "generate_dataset",
    "load_checkpoint",
    "load_dataset",
    "mean_plan_error",
    "pretrain",
    "project",
    "run_closed_loop",
    "save_checkpoint",
    "save_dataset",
    "seeded_random",
    "universal_noise",
]
