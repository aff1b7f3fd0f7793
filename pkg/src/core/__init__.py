# Package initialization
"""
核心模块
"""
__version__ = "1.0.0"

from .kernels import (
    KernelSpec,
    FactorizationError,
    eval_kernel,
    gram,
    cross_gram,
    project_kernel,
    stable_cholesky,
    kernel_from_dict,
    kernel_to_dict,
)
from .gp_conjugate import GaussianLaw, GpFit, posterior_at_design, predict, credible_interval
from .chain import McmcChain
from .dataset import Dataset, parse_dataset, write_dataset
from .spike_gp import SpikeGpConfig, SpikeGpState, marginal_log_likelihood, mcmc_step, run_chain, inclusion_probability
from .gbart import (
    Leaf,
    Branch,
    BartPrior,
    GbartRunConfig,
    GbartState,
    sample_tree_prior,
    prior_all_empty_probability,
    forest_predict,
    gibbs_sweep,
    fit_gbart,
    is_all_empty,
)
from .summaries import (
    ProjectionSummary,
    CartSummary,
    ConvergenceError,
    linear_projection,
    kl_projection_logistic,
    cart_residual_fit,
)
from .experiments import DgpSpec, ExperimentResult, generate, mse, run_experiment
from .cli_io import RunConfig, dispatch
from .utils import load_config, save_config, format_time

__all__ = [
    'KernelSpec', 'FactorizationError', 'eval_kernel', 'gram', 'cross_gram', 'project_kernel',
    'stable_cholesky', 'kernel_from_dict', 'kernel_to_dict',
    'GaussianLaw', 'GpFit', 'posterior_at_design', 'predict', 'credible_interval',
    'McmcChain', 'Dataset', 'parse_dataset', 'write_dataset',
    'SpikeGpConfig', 'SpikeGpState', 'marginal_log_likelihood', 'mcmc_step', 'run_chain', 'inclusion_probability',
    'Leaf', 'Branch', 'BartPrior', 'GbartRunConfig', 'GbartState', 'sample_tree_prior',
    'prior_all_empty_probability', 'forest_predict', 'gibbs_sweep', 'fit_gbart', 'is_all_empty',
    'ProjectionSummary', 'CartSummary', 'ConvergenceError', 'linear_projection', 'kl_projection_logistic',
    'cart_residual_fit',
    'DgpSpec', 'ExperimentResult', 'generate', 'mse', 'run_experiment',
    'RunConfig', 'dispatch',
    'load_config', 'save_config', 'format_time',
]
