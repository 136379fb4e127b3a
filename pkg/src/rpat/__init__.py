"""Desk-scale adversarial-training laboratory with a perception regularizer.

The package trains small numpy classifiers under white-box attacks,
augments the adversarial objective with a curvature penalty on the model's
internal perception along perturbation segments, and ships the numerical
instruments (directional curvature, Jacobian drift, Lipschitz bounds) to
measure what that penalty does.
"""

from .attack import Budget, clip_domain, fgsm, pgd, project, random_perturb
from .data import (
    AugmentConfig,
    Dataset,
    LabeledExample,
    augment,
    export_csv,
    generate_synthetic,
    load_csv,
    load_idx,
    split_dataset,
    write_idx,
)
from .errors import (
    ConfigError,
    ContractError,
    IdxFormatError,
    NumericError,
)
from .evaluate import (
    EvalReport,
    clean_accuracy,
    evaluate_model,
    mean_score,
    nrr,
    perception_mse_gap,
    robust_accuracy,
    split_success_failure,
)
from .loss import (
    InterpolationTriple,
    LossConfig,
    LossResult,
    RpatConfig,
    batch_loss,
    cross_entropy,
    divergence,
    interpolate,
    perception_residuals,
    rpat_loss,
    sample_alpha,
    trades_loss,
)
from .model import (
    ArchitectureDescriptor,
    Model,
    ModelParams,
    PerceptionProxy,
    grad_input,
    grad_params,
    load_checkpoint,
    predict,
    save_checkpoint,
    softmax,
)
from .runner import (
    ExperimentConfig,
    ablate,
    analyze_perception,
    config_from_dict,
    load_config,
    reproduce_tables,
    run_experiment_config,
)
from .train import (
    CheckpointRecord,
    TrainConfig,
    lr_at,
    run_experiment,
    select_best,
    sgd_step,
    train_epoch,
)
from .verify import (
    CurvatureReport,
    compare_models,
    directional_curvature,
    jacobian,
    jacobian_drift,
    lipschitz_upper_bound,
    spectral_norm,
)

__version__ = "0.1.0"

__all__ = [
    "ArchitectureDescriptor",
    "AugmentConfig",
    "Budget",
    "CheckpointRecord",
    "ConfigError",
    "ContractError",
    "CurvatureReport",
    "Dataset",
    "EvalReport",
    "ExperimentConfig",
    "IdxFormatError",
    "InterpolationTriple",
    "LabeledExample",
    "LossConfig",
    "LossResult",
    "Model",
    "ModelParams",
    "NumericError",
    "PerceptionProxy",
    "RpatConfig",
    "TrainConfig",
    "ablate",
    "analyze_perception",
    "augment",
    "batch_loss",
    "clean_accuracy",
    "clip_domain",
    "compare_models",
    "config_from_dict",
    "cross_entropy",
    "directional_curvature",
    "divergence",
    "evaluate_model",
    "export_csv",
    "fgsm",
    "generate_synthetic",
    "grad_input",
    "grad_params",
    "interpolate",
    "jacobian",
    "jacobian_drift",
    "lipschitz_upper_bound",
    "load_checkpoint",
    "load_config",
    "load_csv",
    "load_idx",
    "lr_at",
    "mean_score",
    "nrr",
    "perception_mse_gap",
    "perception_residuals",
    "pgd",
    "predict",
    "project",
    "random_perturb",
    "reproduce_tables",
    "robust_accuracy",
    "rpat_loss",
    "run_experiment",
    "run_experiment_config",
    "sample_alpha",
    "save_checkpoint",
    "select_best",
    "sgd_step",
    "softmax",
    "spectral_norm",
    "split_dataset",
    "split_success_failure",
    "trades_loss",
    "train_epoch",
    "write_idx",
]
