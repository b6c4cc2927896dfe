"""Multi-weighted step-up and step-down FDR procedures with optimal weights."""

from .functionals import StepCurve, cap_I, cap_J, continuous_I, empirical_G, i_lambda_minus, i_lambda_plus
from .models import HypothesisConfig, ModelSample, UnconditionalConfig, sample_conditional, sample_unconditional
from .procedures import (
    RejectionOutcome,
    lsu,
    lsu_star,
    sd_algorithm_b2,
    sd_multiweight,
    su_algorithm_b1,
    su_multiweight,
    weighted_lsu,
)
from .weights import (
    ThresholdCollection,
    WeightMatrix,
    correct_sd,
    correct_su,
    optimal_weight_matrix,
    optimal_weights_gaussian,
    uniform_h1_weights,
)

__version__ = "0.1.0"

__all__ = [
    "HypothesisConfig",
    "ModelSample",
    "RejectionOutcome",
    "StepCurve",
    "ThresholdCollection",
    "UnconditionalConfig",
    "WeightMatrix",
    "cap_I",
    "cap_J",
    "continuous_I",
    "correct_sd",
    "correct_su",
    "empirical_G",
    "i_lambda_minus",
    "i_lambda_plus",
    "lsu",
    "lsu_star",
    "optimal_weight_matrix",
    "optimal_weights_gaussian",
    "sample_conditional",
    "sample_unconditional",
    "sd_algorithm_b2",
    "sd_multiweight",
    "su_algorithm_b1",
    "su_multiweight",
    "uniform_h1_weights",
    "weighted_lsu",
]
