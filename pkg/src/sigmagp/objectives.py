"""Training objectives. All are maximized.

Each returns an ObjectiveValue with

    total = n_scale * data_term - beta_reg * kl_term

where data_term is the sum of per-point terms over the minibatch,
n_scale = n_total / batch_size restores the full-data scale, and kl_term is
the sum of inducing-point KL divergences over every GP unit in the model,
never minibatch-scaled. Averaging the estimator over all equally sized
minibatches reproduces the full-batch value exactly.

Per-point data terms, with (mean_d, var_d) the latent output marginals in
target space and s2_d the observation noise variance:

    svgp   sum_d [ log N(y_d | mean_d, s2_d) - var_d / (2 s2_d) ]
    ppgpr  sum_d log N(y_d | mean_d, var_d + s2_d)
    dgp    mean over hidden samples of the svgp term at each sample
    dspp   log of the quadrature mixture density of y (noise included)
    bpdgp  log of the sampled mixture density of y (a biased estimate of
           the predictive density; kept as the baseline it is)
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
from torch import Tensor

from .gp_layer import kl_to_prior
from .kernels import DTYPE
from .models import (
    LOG2PI,
    SparseGPModel,
    forward_dgp_sampled,
    forward_dspp,
    gaussian_log_density,
    output_marginals,
    sampled_pathways,
    _layer_marginals,
)


@dataclass
class ObjectiveValue:
    total: Tensor  # scalar, differentiable
    data_term: Tensor  # sum over the batch
    kl_term: Tensor  # raw KL sum, no beta or batch scaling
    n_scale: float

    def detached(self) -> tuple[float, float, float]:
        return (
            float(self.total.detach()),
            float(self.data_term.detach()),
            float(self.kl_term.detach()),
        )


def model_kl(model: SparseGPModel) -> Tensor:
    units = [u for layer in model.hidden_layers for u in layer]
    units += list(model.out_layer)
    return torch.stack([kl_to_prior(u) for u in units]).sum()


def _as_targets(y: Tensor, output_dim: int) -> Tensor:
    if y.dim() == 1:
        y = y.unsqueeze(-1)
    if y.shape[-1] != output_dim:
        raise ValueError(f"targets have dim {y.shape[-1]}, model expects {output_dim}")
    return y


def _assemble(
    model: SparseGPModel, data: Tensor, n_total: int, batch: int, beta_reg: float
) -> ObjectiveValue:
    if n_total < batch:
        raise ValueError(f"n_total {n_total} smaller than batch {batch}")
    n_scale = n_total / batch
    kl = model_kl(model)
    return ObjectiveValue(
        total=n_scale * data - beta_reg * kl,
        data_term=data,
        kl_term=kl,
        n_scale=n_scale,
    )


def _single_layer_latents(model: SparseGPModel, x: Tensor) -> tuple[Tensor, Tensor]:
    mu, var = _layer_marginals(model.out_layer, x)  # (B, W')
    return model.mix_latent(mu, var)


def elbo_svgp(
    model: SparseGPModel, x: Tensor, y: Tensor, n_total: int, beta_reg: float = 1.0
) -> ObjectiveValue:
    """Variational bound for single-layer models: Gaussian likelihood at the
    marginal mean, minus the variance correction var/(2 s2)."""
    if model.config.num_layers != 1:
        raise ValueError("elbo_svgp applies to single-layer models")
    y = _as_targets(y, model.config.output_dim)
    mean, var = _single_layer_latents(model, x)
    s2 = model.obs_variance()
    point = gaussian_log_density(y, mean, s2) - 0.5 * var / s2
    return _assemble(model, point.sum(), n_total, x.shape[0], beta_reg)


def objective_ppgpr(
    model: SparseGPModel, x: Tensor, y: Tensor, n_total: int, beta_reg: float = 1.0
) -> ObjectiveValue:
    """Predictive objective for single-layer models: score y under the
    marginal predictive N(mean, var + s2) instead of bounding it."""
    if model.config.num_layers != 1:
        raise ValueError("objective_ppgpr applies to single-layer models")
    y = _as_targets(y, model.config.output_dim)
    mean, var = _single_layer_latents(model, x)
    point = gaussian_log_density(y, mean, var + model.obs_variance())
    return _assemble(model, point.sum(), n_total, x.shape[0], beta_reg)


def elbo_dsvi(
    model: SparseGPModel,
    x: Tensor,
    y: Tensor,
    n_total: int,
    num_samples: int | None = None,
    generator: torch.Generator | None = None,
    eps: list[Tensor] | None = None,
    beta_reg: float = 1.0,
) -> ObjectiveValue:
    """Deep-GP bound: hidden layers reparameterized-sampled, the output
    layer integrated in closed form (the svgp per-point term, averaged over
    samples)."""
    if model.config.num_layers < 2:
        raise ValueError("elbo_dsvi applies to deep models")
    y = _as_targets(y, model.config.output_dim)
    n = num_samples or model.config.mc_samples
    _, feats = sampled_pathways(model, x, n, generator=generator, eps=eps)
    mu_f, var_f = output_marginals(model, feats)  # (n, B, W')
    mean, var = model.mix_latent(mu_f, var_f)  # (n, B, D)
    s2 = model.obs_variance()
    point = gaussian_log_density(y.unsqueeze(0), mean, s2) - 0.5 * var / s2
    data = point.sum(dim=-1).mean(dim=0).sum()
    return _assemble(model, data, n_total, x.shape[0], beta_reg)


def objective_dspp(
    model: SparseGPModel, x: Tensor, y: Tensor, n_total: int, beta_reg: float = 1.0
) -> ObjectiveValue:
    """Log predictive density of the quadrature mixture, summed over the
    batch. The forward pass is deterministic."""
    y = _as_targets(y, model.config.output_dim)
    mixture = forward_dspp(model, x)
    return _assemble(model, mixture.log_density(y).sum(), n_total, x.shape[0], beta_reg)


def objective_bpdgp(
    model: SparseGPModel,
    x: Tensor,
    y: Tensor,
    n_total: int,
    num_samples: int | None = None,
    generator: torch.Generator | None = None,
    eps: list[Tensor] | None = None,
    beta_reg: float = 1.0,
) -> ObjectiveValue:
    y = _as_targets(y, model.config.output_dim)
    n = num_samples or model.config.mc_samples
    mixture = forward_dgp_sampled(model, x, n, generator=generator, eps=eps)
    return _assemble(model, mixture.log_density(y).sum(), n_total, x.shape[0], beta_reg)


def batch_objective(
    model: SparseGPModel,
    x: Tensor,
    y: Tensor,
    n_total: int,
    beta_reg: float = 1.0,
    generator: torch.Generator | None = None,
) -> ObjectiveValue:
    """Family dispatch used by the training loop."""
    family = model.config.family
    if family == "svgp":
        return elbo_svgp(model, x, y, n_total, beta_reg)
    if family == "ppgpr":
        return objective_ppgpr(model, x, y, n_total, beta_reg)
    if family == "dgp":
        return elbo_dsvi(model, x, y, n_total, generator=generator, beta_reg=beta_reg)
    if family == "dspp":
        return objective_dspp(model, x, y, n_total, beta_reg)
    return objective_bpdgp(model, x, y, n_total, generator=generator, beta_reg=beta_reg)


def exact_log_marginal(
    kernel, mean_fn, obs_variance: Tensor | float, x: Tensor, y: Tensor
) -> Tensor:
    """Dense single-output GP evidence log N(y | mean(x), K_NN + s2 I).

    O(N^3); a reference quantity for bound checks, not a training path.
    """
    if y.dim() == 2:
        y = y.squeeze(-1)
    n = x.shape[0]
    k = kernel(x, x)
    k = 0.5 * (k + k.transpose(-1, -2))
    s2 = torch.as_tensor(obs_variance, dtype=DTYPE)
    cov = k + s2 * torch.eye(n, dtype=DTYPE)
    chol = torch.linalg.cholesky(cov)
    resid = (y - mean_fn(x)).unsqueeze(-1)
    alpha = torch.linalg.solve_triangular(chol, resid, upper=False)
    return (
        -0.5 * alpha.square().sum()
        - chol.diagonal().log().sum()
        - 0.5 * n * LOG2PI
    )
