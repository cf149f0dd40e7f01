"""Locally private estimation of quadratic forms, linear queries and pairwise statistics."""

from .harness import ExperimentConfig, generate_dataset, mse_report, reduction_experiment, run_trials
from .kernels import (
    gini_diversity_fact,
    jl_reduce,
    kendall_fact,
    lipschitz_bst_fact,
    prefix_tree_fact,
    resolve_workload,
    sign_comparison_fact,
    strict_sign_fact,
)
from .protocols import (
    NonInteractiveQuadraticForm,
    ProtocolEstimate,
    ThreeRoundQuadraticForm,
    linear_query_protocol,
    lq_from_qf_reduction,
    projection_mechanism,
    quadratic_form_pipeline,
)
from .randomizers import PrivacyBudget, clip, derive_rng, laplace, randomized_response, vrand
from .statistics import (
    ContinuousPairwiseProtocol,
    auc_protocol,
    gini_mean_difference_setup,
    kendall_tau_protocol,
    run_pairwise_protocol,
)
from .workload import Dataset, Factorization, Histogram, WorkloadMatrix, histogram_of, quadratic_form_exact

__version__ = "0.1.0"
