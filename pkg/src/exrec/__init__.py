"""Exercise recommendation engine with expert-in-the-loop active learning."""

from .model import ModelConfig, WindowSample, forward, predict_topk, train, finetune
from .uncertainty import (DirichletParams, MarginalDistribution, fit_dirichlet,
                          fit_threshold, marginal_distance, marginal_pdf,
                          mc_marginal, threshold)
from .evaluate import ExperimentConfig, holdout_run, loocv_run, topk_accuracy

__version__ = "0.1.0"

__all__ = [
    "ModelConfig", "WindowSample", "forward", "predict_topk", "train", "finetune",
    "DirichletParams", "MarginalDistribution", "fit_dirichlet", "fit_threshold",
    "marginal_distance", "marginal_pdf", "mc_marginal", "threshold",
    "ExperimentConfig", "holdout_run", "loocv_run", "topk_accuracy",
    "__version__",
]
