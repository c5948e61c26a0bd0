"""Imbalanced multi-view clustering with partial optimal-transport labels."""

from .datagen import GenSpec, MultiViewDataset, generate, imbalance_ratio
from .estimator import PotMultiviewClustering
from .labeling import MassSchedule, PseudoLabels, assign_pot_labels, \
    lambda_at, mix_predictions
from .metrics import ClusterMetrics, accuracy, evaluate, nmi, purity
from .pipeline import ExperimentConfig, ExperimentReport, run_experiment
from .transport import PotConfig, TransportPlan, pot_uot_scaling, sinkhorn, \
    uot_sinkhorn

__version__ = "0.1.0"

__all__ = [
    "ClusterMetrics",
    "ExperimentConfig",
    "ExperimentReport",
    "GenSpec",
    "MassSchedule",
    "MultiViewDataset",
    "PotConfig",
    "PotMultiviewClustering",
    "PseudoLabels",
    "TransportPlan",
    "accuracy",
    "assign_pot_labels",
    "evaluate",
    "generate",
    "imbalance_ratio",
    "lambda_at",
    "mix_predictions",
    "nmi",
    "pot_uot_scaling",
    "purity",
    "run_experiment",
    "sinkhorn",
    "uot_sinkhorn",
]
