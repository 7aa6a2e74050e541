"""Offline guarded safe RL: guardians, estimated dynamics, constrained
policy search, and ground-truth verification on a synthetic clinical CMDP."""

from .artifacts import (
    load_env,
    load_guardian,
    load_model,
    load_policy,
    save_env,
    save_guardian,
    save_model,
    save_policy,
)
from .core import (
    CmdpSpec,
    ConfigError,
    DataError,
    DegenerateBandwidthError,
    GuardedRlError,
    InfeasibleFitError,
    InfeasibleTrainingError,
    InvalidInputError,
    ModelError,
    OfflineDataset,
    OutOfSupportError,
    Standardization,
    Trajectory,
    TransitionSample,
    UnderDeterminedError,
    discounted_return,
    geometric_sum,
    horizon_tail_bound,
    mc_value,
)
from .dataio import read_dataset_csv, write_dataset_csv
from .guardian import (
    ConstantGuardian,
    GuardianVerdict,
    KdeGuardian,
    KnnGuardian,
    MonomialBasis,
    PsosClassifier,
    ZScaler,
    empirical_coverage,
    fit_kde_guardian,
    fit_knn_guardian,
    fit_psos,
    psos_eval,
    required_sample_size,
)
from .metrics import (
    AcpResult,
    EvalConfig,
    MetricsReport,
    acp,
    aggregate_reports,
    air,
    build_report,
    mcr,
    mortality_estimate,
    ood_visit_rate,
    resolve_epsilon,
)
from .models import (
    CostRules,
    KdeConditionalDensity,
    KnnTransitionModel,
    RewardRule,
    fit_kde_density,
    fit_knn_model,
    make_cost_rules,
    make_reward_rule,
)
from .policy import GaussianPolicy, fit_behavior_cloning
from .rng import spawn
from .synthetic import (
    BehaviorPolicy,
    GenerationConfig,
    SyntheticClinicalCmdp,
    generate_dataset,
    true_support_contains,
    true_value,
)
from .training import (
    GuardedEcmdp,
    TrainConfig,
    TrainResult,
    ValueEstimates,
    estimate_constraint_values,
    rollout_guarded,
    train_guarded,
    train_penalty,
    verify_chance_proxy,
)

__version__ = "0.1.0"

__all__ = [
    "AcpResult",
    "BehaviorPolicy",
    "CmdpSpec",
    "ConfigError",
    "ConstantGuardian",
    "CostRules",
    "DataError",
    "DegenerateBandwidthError",
    "EvalConfig",
    "GaussianPolicy",
    "GenerationConfig",
    "GuardedEcmdp",
    "GuardedRlError",
    "GuardianVerdict",
    "InfeasibleFitError",
    "InfeasibleTrainingError",
    "InvalidInputError",
    "KdeConditionalDensity",
    "KdeGuardian",
    "KnnGuardian",
    "KnnTransitionModel",
    "MetricsReport",
    "ModelError",
    "MonomialBasis",
    "OfflineDataset",
    "OutOfSupportError",
    "PsosClassifier",
    "RewardRule",
    "Standardization",
    "SyntheticClinicalCmdp",
    "TrainConfig",
    "TrainResult",
    "Trajectory",
    "TransitionSample",
    "UnderDeterminedError",
    "ValueEstimates",
    "ZScaler",
    "acp",
    "aggregate_reports",
    "air",
    "build_report",
    "discounted_return",
    "empirical_coverage",
    "estimate_constraint_values",
    "fit_behavior_cloning",
    "fit_kde_density",
    "fit_kde_guardian",
    "fit_knn_guardian",
    "fit_knn_model",
    "fit_psos",
    "generate_dataset",
    "geometric_sum",
    "horizon_tail_bound",
    "load_env",
    "load_guardian",
    "load_model",
    "load_policy",
    "make_cost_rules",
    "make_reward_rule",
    "mc_value",
    "mcr",
    "mortality_estimate",
    "ood_visit_rate",
    "psos_eval",
    "read_dataset_csv",
    "required_sample_size",
    "resolve_epsilon",
    "rollout_guarded",
    "save_env",
    "save_guardian",
    "save_model",
    "save_policy",
    "spawn",
    "train_guarded",
    "train_penalty",
    "true_support_contains",
    "true_value",
    "verify_chance_proxy",
    "write_dataset_csv",
]
