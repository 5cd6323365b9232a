"""Circular belief propagation for pairwise Markov random fields."""

from .convergence import EdgeMatrix, build_A, find_safe_uniform, induced_norms, spectral_radius
from .exact import ExactMarginals, exact_gaussian, exact_marginals_batch, exact_marginals_binary
from .gaussian import (
    GaussianInputs,
    GaussianModel,
    fit_gaussian,
    heldout_kl,
    kl_cost,
    run_gaussian_cbp,
    sample_gaussian_inputs,
    sample_gaussian_suite,
)
from .learning import FitOptions, UnsupOptions, fit_supervised, fit_unsupervised, grad_supervised, loss_mse, score
from .model import (
    CbpParams,
    IsingModel,
    TrainingSet,
    UndirectedGraph,
    build_ising,
    complete_graph,
    gen_erdos_renyi,
    grid_graph,
    random_tree,
    sample_inputs,
    sample_spin_glass,
)
from .propagation import RunOptions, RunReport, run_batch, run_bp, run_cbp, run_mean_field, run_reweighted

__all__ = [
    "CbpParams",
    "EdgeMatrix",
    "ExactMarginals",
    "FitOptions",
    "GaussianInputs",
    "GaussianModel",
    "IsingModel",
    "RunOptions",
    "RunReport",
    "TrainingSet",
    "UndirectedGraph",
    "UnsupOptions",
    "build_A",
    "build_ising",
    "complete_graph",
    "exact_gaussian",
    "exact_marginals_batch",
    "exact_marginals_binary",
    "find_safe_uniform",
    "fit_gaussian",
    "fit_supervised",
    "fit_unsupervised",
    "gen_erdos_renyi",
    "grad_supervised",
    "grid_graph",
    "heldout_kl",
    "induced_norms",
    "kl_cost",
    "loss_mse",
    "random_tree",
    "run_batch",
    "run_bp",
    "run_cbp",
    "run_gaussian_cbp",
    "run_mean_field",
    "run_reweighted",
    "sample_gaussian_inputs",
    "sample_gaussian_suite",
    "sample_inputs",
    "sample_spin_glass",
    "score",
    "spectral_radius",
]
