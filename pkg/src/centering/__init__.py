"""Centered binary Restricted/Deep Boltzmann Machines and autoencoders.

Training with offset-centered energies, exact evaluation by enumeration for
small models, AIS for larger ones, and a small experiment harness.
"""

from centering.datasets import (
    Dataset,
    flip_dataset,
    generate_bars_stripes,
    generate_shifting_bar,
    ll_upper_bound,
)
from centering.rbm import (
    BatchStats,
    RbmParams,
    energy,
    init_params,
    prob_h_given_x,
    prob_x_given_h,
    reparameterize,
)
from centering.gradients import (
    GradientEstimate,
    centered_gradient,
    centered_ll_gradient,
    compute_batch_stats,
    enhanced_gradient,
)
from centering.exact import (
    CapacityError,
    exact_model_stats,
    fisher_matrix,
    gradient_angle,
    log_likelihood_exact,
    log_partition,
    natural_gradient,
)
from centering.policy import OffsetPolicy, format_policy, parse_policy

__all__ = [
    "BatchStats",
    "CapacityError",
    "Dataset",
    "GradientEstimate",
    "OffsetPolicy",
    "RbmParams",
    "centered_gradient",
    "centered_ll_gradient",
    "compute_batch_stats",
    "energy",
    "enhanced_gradient",
    "exact_model_stats",
    "fisher_matrix",
    "flip_dataset",
    "format_policy",
    "generate_bars_stripes",
    "generate_shifting_bar",
    "gradient_angle",
    "init_params",
    "ll_upper_bound",
    "log_likelihood_exact",
    "log_partition",
    "natural_gradient",
    "parse_policy",
    "prob_h_given_x",
    "prob_x_given_h",
    "reparameterize",
]

__version__ = "0.1.0"
