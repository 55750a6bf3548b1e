"""Sparse group factor analysis (regularised horseshoe) and ARD group factor analysis, fitted with NUTS."""

from .analysis import (
    ChainFactorSummary,
    RobustFactorSet,
    covariance_explained,
    factor_contributions,
    match_factors,
    project_to_data,
    recovery_score,
    subgroup_tests,
    summarize_chains,
)
from .dataset import MultiViewDataset
from .model import (
    GFAModel,
    HyperParams,
    ModelFamily,
    ModelSpec,
    ParamVector,
    build_layout,
    forward_sample,
    grad_log_joint,
    log_joint_gfa,
    log_joint_sparse_gfa,
)
from .sampler import PosteriorDraws, SamplerConfig, diagnostics, run_chains
from .synthgen import GroundTruth, SyntheticScenario, generate

__version__ = "0.1.0"

__all__ = [
    "ChainFactorSummary",
    "GFAModel",
    "GroundTruth",
    "HyperParams",
    "ModelFamily",
    "ModelSpec",
    "MultiViewDataset",
    "ParamVector",
    "PosteriorDraws",
    "RobustFactorSet",
    "SamplerConfig",
    "SyntheticScenario",
    "build_layout",
    "covariance_explained",
    "diagnostics",
    "factor_contributions",
    "forward_sample",
    "generate",
    "grad_log_joint",
    "log_joint_gfa",
    "log_joint_sparse_gfa",
    "match_factors",
    "project_to_data",
    "recovery_score",
    "run_chains",
    "subgroup_tests",
    "summarize_chains",
]
