"""connectogen: structural brain network synthesis from DTI volumes.

Pipeline: volume -> regional feature matrix -> conditional latent diffusion ->
90x90 connectivity network -> graph classification and statistical comparison.
"""

__version__ = "0.1.0"

from .data import (
    ConnectivityMatrix,
    CohortSplit,
    DtiVolume,
    Label,
    SubjectRecord,
    generate_synthetic_cohort,
    normalize_connectivity,
    split_cohort,
)
from .diffusion import NoiseSchedule, ddpm_sample, q_sample
from .fenet import FeatureMatrix, fenet_forward
from .pipeline import PipelineConfig, PipelineModel, build_pipeline
from .training import TrainConfig, fe_loss, train_loop

__all__ = [
    "ConnectivityMatrix",
    "CohortSplit",
    "DtiVolume",
    "FeatureMatrix",
    "Label",
    "NoiseSchedule",
    "PipelineConfig",
    "PipelineModel",
    "SubjectRecord",
    "TrainConfig",
    "build_pipeline",
    "ddpm_sample",
    "fe_loss",
    "fenet_forward",
    "generate_synthetic_cohort",
    "normalize_connectivity",
    "q_sample",
    "split_cohort",
    "train_loop",
]
