"""Federated backdoor attacks and the DeepSight defense on a numpy MLP."""
from .attacks import AttackConfig, adversarial_round, scaling_factor
from .clustering import density_cluster, ensemble_cluster
from .data import FederationSpec, GroupSpec, TriggerSpec, make_federation, make_triggers, poison
from .defense import DefenseConfig, clip, clipping_bound, deepsight_aggregate
from .features import ddif, extract_features, neups, threshold_exceedings, update_energy
from .harness import ExperimentConfig, load_config, reference_config, run_experiment
from .nn import ModelParams, ParamUpdate, TrainConfig, fedavg, train_local

__version__ = "0.1.0"

__all__ = [
    "AttackConfig", "DefenseConfig", "ExperimentConfig", "FederationSpec", "GroupSpec",
    "ModelParams", "ParamUpdate", "TrainConfig", "TriggerSpec", "adversarial_round", "clip",
    "clipping_bound", "ddif", "deepsight_aggregate", "density_cluster", "ensemble_cluster",
    "extract_features", "fedavg", "load_config", "make_federation", "make_triggers", "neups",
    "poison", "reference_config", "run_experiment", "scaling_factor", "threshold_exceedings",
    "train_local", "update_energy",
]
