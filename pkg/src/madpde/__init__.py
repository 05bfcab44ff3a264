"""Latent-conditioned physics-informed decoders for parametric PDE families."""

__version__ = "0.1.0"

from .evaluation import (
    ErrorReport,
    empirical_manifold_gap,
    iterations_to_threshold,
    mean_and_ci,
    pca_project,
    relative_l2,
)
from .experiment import ConfigError, ExperimentConfig, load_config, parse_config
from .network import NetworkConfig, NetworkWeights, forward, forward_with_jets, init_weights
from .persist import CheckpointMissing, ChecksumError, PersistError, VersionError, load, save
from .training import (
    LatentBank,
    PretrainedModel,
    RunTrace,
    TrainConfig,
    TrainingDiverged,
    TrainingError,
    finetune,
    from_scratch,
    latent_init,
    mc_physics_loss,
    pretrain,
    reptile_pretrain,
    transfer_learning,
)

__all__ = [
    "ErrorReport", "empirical_manifold_gap", "iterations_to_threshold",
    "mean_and_ci", "pca_project", "relative_l2",
    "ConfigError", "ExperimentConfig", "load_config", "parse_config",
    "NetworkConfig", "NetworkWeights", "forward", "forward_with_jets",
    "init_weights",
    "CheckpointMissing", "ChecksumError", "PersistError", "VersionError",
    "load", "save",
    "LatentBank", "PretrainedModel", "RunTrace", "TrainConfig",
    "TrainingDiverged", "TrainingError", "finetune", "from_scratch",
    "latent_init", "mc_physics_loss", "pretrain", "reptile_pretrain",
    "transfer_learning",
]
