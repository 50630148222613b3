"""Deconfounded recommendation with a substitute confounder inferred from exposures."""
from .causal import JacobianReport, OlsVarianceReport, cate_of_exposure, network_jacobian, ols_variance_study
from .datagen import CausalDataset, SimConfig, rating_distribution_kl, simulate_dataset, simulate_semisynthetic
from .evaluation import ModelConfig, confounding_sweep, evaluate_unbiased, fit_stack, noise_sensitivity_study, split_users
from .exposure import ExposureVae, extract_confounders, train_exposure
from .metrics import ndcg_at_k, recall_at_k
from .numkit import Rng
from .outcome import OutcomeNet, predict_ratings, recommend_topk, train_outcome
from .storage import __version__

__all__ = [
    "CausalDataset",
    "ExposureVae",
    "JacobianReport",
    "ModelConfig",
    "OlsVarianceReport",
    "OutcomeNet",
    "Rng",
    "SimConfig",
    "__version__",
    "cate_of_exposure",
    "confounding_sweep",
    "evaluate_unbiased",
    "extract_confounders",
    "fit_stack",
    "ndcg_at_k",
    "network_jacobian",
    "noise_sensitivity_study",
    "ols_variance_study",
    "predict_ratings",
    "rating_distribution_kl",
    "recall_at_k",
    "recommend_topk",
    "simulate_dataset",
    "simulate_semisynthetic",
    "split_users",
    "train_exposure",
    "train_outcome",
]
