"""Sparse GP regression with learned quadrature over deep-layer integrals."""

from .autodiff import (
    FDCheckResult,
    NonFiniteGradient,
    fd_check,
    gradient,
    load_parameter_vector,
    parameter_vector,
)
from .checkpoint import load_checkpoint, save_checkpoint
from .data import (
    Dataset,
    DataSplit,
    EmptyDataset,
    NonFiniteValue,
    ParseError,
    SplitSpec,
    Standardizer,
    ingest_csv,
    make_synthetic,
    split,
)
from .gp_layer import GPUnit, MarginalGaussian, kl_to_prior, predict_marginal, trace_penalty
from .kernels import KernelBlocks, MaternKernel, NotPositiveDefinite, assemble_blocks, robust_cholesky
from .metrics import EvalReport, crps_mixture, evaluate, nll, point_prediction
from .models import (
    ModelConfig,
    PredictiveMixture,
    SparseGPModel,
    forward_dgp_sampled,
    forward_dspp,
    forward_lmc,
    forward_svgp,
    predictive_mixture,
    wire_topology,
)
from .objectives import (
    ObjectiveValue,
    batch_objective,
    elbo_dsvi,
    elbo_svgp,
    exact_log_marginal,
    objective_bpdgp,
    objective_dspp,
    objective_ppgpr,
)
from .quadrature import QuadratureRule, gauss_hermite_nodes, make_rule, sigma_points
from .training import AdamState, TrainConfig, TrainResult, adam_step, init_model, kmeans_init, train

__version__ = "0.1.0"
