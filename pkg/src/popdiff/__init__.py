"""Synthetic population generation with a denoising diffusion model.

Learns the joint distribution of categorical attributes from a small sample,
draws new records by ancestral sampling, and evaluates the result for
distributional similarity (SRMSE), feasibility (precision / structural
zeros), and diversity (recall / sampling zeros).
"""

__version__ = "0.1.0"

from .diffusion import (
    DiffusionConfig,
    DivergenceError,
    NoiseSchedule,
    ancestral_sample,
    linear_schedule,
    loss_simple,
    posterior_mean,
    q_sample,
)
from .metrics import (
    CategoricalDistribution,
    CurvePoint,
    EvalReport,
    bivariate_distribution,
    evaluate_populations,
    f1,
    marginal_distribution,
    precision,
    recall,
    sampling_zero_count,
    sampling_zero_curve,
    srmse,
    unique_combinations,
)
from .network import NetworkConfig, NetworkParams, init_params, predict_noise, time_embedding
from .schema import (
    AttributeSchema,
    Population,
    SchemaError,
    UndecodableSample,
    build_schema,
    decode_batch,
    decode_matrix,
    encode_population,
    encode_record,
    load_population_csv,
    save_population_csv,
)
from .toy import (
    ToyJointSpec,
    brute_force_metrics,
    default_toy_joint,
    exact_bivariate,
    exact_bivariates,
    exact_marginals,
    sample_toy_population,
)
from .training import (
    OptimizerState,
    TrainConfig,
    adamw_step,
    cosine_lr,
    run_training,
    save_loss_history,
)
from .checkpoint import Checkpoint, CheckpointError, load_checkpoint, save_checkpoint

__all__ = [
    "__version__",
    # schema
    "AttributeSchema", "Population", "SchemaError", "UndecodableSample",
    "build_schema", "encode_record", "encode_population", "decode_matrix",
    "decode_batch", "load_population_csv", "save_population_csv",
    # network
    "NetworkConfig", "NetworkParams", "init_params", "time_embedding", "predict_noise",
    # diffusion
    "DiffusionConfig", "NoiseSchedule", "DivergenceError", "linear_schedule",
    "q_sample", "loss_simple", "posterior_mean", "ancestral_sample",
    # training
    "TrainConfig", "OptimizerState", "cosine_lr", "adamw_step", "run_training",
    "save_loss_history",
    # metrics
    "CategoricalDistribution", "EvalReport", "CurvePoint", "marginal_distribution",
    "bivariate_distribution", "srmse", "precision", "recall", "f1",
    "unique_combinations", "sampling_zero_count", "sampling_zero_curve",
    "evaluate_populations",
    # toy oracle
    "ToyJointSpec", "default_toy_joint", "sample_toy_population", "exact_marginals",
    "exact_bivariate", "exact_bivariates", "brute_force_metrics",
    # persistence
    "Checkpoint", "CheckpointError", "save_checkpoint", "load_checkpoint",
]
