"""Variational nearest-neighbor Gaussian processes."""
from ._accel import USE_NUMBA
from .baselines import (SVGP, SWSGP, ExactPosterior, exact_gp_posterior, fit_exact_gp,
                        gaussian_kl, kl_subset, log_marginal_likelihood, svgp_elbo,
                        svgp_kl_exact, swsgp_objective)
from .data import Dataset, Standardizer, load_csv, sample_gp, split
from .errors import ArgumentError, IngestionError, NumericalError, UnsupportedError, VNNGPError
from .kernel import KernelParams, cross_matrix
from .likelihood import LikelihoodParams, expected_log_lik, predictive_nll
from .model import (VNNGP, ConditionalMoments, ElboBreakdown, VariationalState,
                    conditional_moments, kl_fullrank, kl_meanfield_term, kl_meanfield_total,
                    precision_factor, q_f_marginal)
from .neighbors import NeighborIndex, Ordering, build_data_nn, build_inducing_nn
from .state import load_model, save_model
from .training import Adam, TrainConfig, fd_gradient, train

__version__ = "0.1.0"
