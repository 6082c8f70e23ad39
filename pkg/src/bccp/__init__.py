"""Online class-specific conformal prediction from bandit feedback."""

from .conformal import (
    ExpertBank,
    PredictionSet,
    QuantileBank,
    aggregate_quantile,
    expert_step,
    expert_weights,
    predict_set,
    quantile_step,
)
from .core_math import (
    InvalidInputError,
    ProbVector,
    ScoreSpec,
    ScoreVector,
    check_loss,
    check_subgradient,
    score_all,
    softmax_transform,
    split_conformal_threshold,
)
from .datastream import GaussianMixtureSpec, batch_iterator, file_stream, gm_posterior, gm_sample
from .metrics import CoverageAccumulator, RunSummary, oracle_tau_star
from .model import ModelParameters, bandit_ce_gradient, bandit_ce_loss, batch_update, forward, init_params, sgd_step
from .policy import DeltaEstimate, PolicySpec, delta_from_feedback, delta_weights, policy_probs, sample_arm
from .runner import RunConfig, RunHandle, parse_config, replicate, run_online, sweep_eta2

__version__ = "0.1.0"
