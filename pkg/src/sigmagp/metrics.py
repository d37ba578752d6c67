"""Evaluation metrics over predictive mixtures.

All metrics operate on the original target scale: callers de-standardize
the mixture (PredictiveMixture.affine) before scoring. NLL for multivariate
targets is the joint negative log density divided by the number of output
dims, so values are comparable across target dimensionalities.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
from torch import Tensor

from .data import EmptyDataset
from .models import PredictiveMixture, SparseGPModel, predictive_mixture

_SQRT_2PI = math.sqrt(2.0 * math.pi)


def _as_2d(y: Tensor) -> Tensor:
    return y if y.dim() == 2 else y.unsqueeze(-1)


def nll(mixture: PredictiveMixture, y: Tensor) -> float:
    """Mean negative log density per point, per output dim."""
    y = _as_2d(y)
    dims = y.shape[-1]
    return float((-mixture.log_density(y).mean() / dims).detach())


def point_prediction(mixture: PredictiveMixture) -> Tensor:
    """Mixture mean, shape (B, D)."""
    return mixture.mean()


def _crps_normal_kernel(diff: Tensor, var: Tensor) -> Tensor:
    """E|Z - diff| for Z ~ N(0, var), elementwise.

    = diff (2 Phi(diff / sd) - 1) + 2 sd phi(diff / sd)
    """
    sd = var.sqrt()
    z = diff / sd
    pdf = torch.exp(-0.5 * z.square()) / _SQRT_2PI
    return diff * (2.0 * torch.special.ndtr(z) - 1.0) + 2.0 * sd * pdf


def crps_pointwise(mixture: PredictiveMixture, y: Tensor) -> Tensor:
    """Closed-form CRPS of a Gaussian mixture per point and dim, (B, D).

    CRPS(F, y) = sum_s w_s A(y - mu_s, v_s)
                 - 0.5 sum_s sum_t w_s w_t A(mu_s - mu_t, v_s + v_t)

    with A the expected absolute deviation kernel above. The pairwise term
    is O(C^2) in the component count, fine at quadrature scale.
    """
    y = _as_2d(y)
    w = mixture.weights  # (C,)
    mu, var = mixture.means, mixture.variances  # (C, B, D)
    first = (w.reshape(-1, 1, 1) * _crps_normal_kernel(y.unsqueeze(0) - mu, var)).sum(0)
    cross_diff = mu.unsqueeze(1) - mu.unsqueeze(0)  # (C, C, B, D)
    cross_var = var.unsqueeze(1) + var.unsqueeze(0)
    ww = (w.reshape(-1, 1) * w.reshape(1, -1)).reshape(
        w.shape[0], w.shape[0], 1, 1
    )
    second = 0.5 * (ww * _crps_normal_kernel(cross_diff, cross_var)).sum(dim=(0, 1))
    return first - second


def crps_mixture(mixture: PredictiveMixture, y: Tensor) -> float:
    """Mean CRPS over points and output dims."""
    return float(crps_pointwise(mixture, y).mean().detach())


@dataclass
class EvalReport:
    nll: float
    rmse: float
    mrmse: float
    crps: float
    n_test: int

    def to_dict(self) -> dict:
        return {
            "nll": self.nll,
            "rmse": self.rmse,
            "mrmse": self.mrmse,
            "crps": self.crps,
            "n_test": self.n_test,
        }


def score_mixture(mixture: PredictiveMixture, y: Tensor) -> EvalReport:
    """All metrics for a mixture already on the target's original scale."""
    y = _as_2d(y)
    if y.shape[0] == 0:
        raise EmptyDataset("cannot evaluate on an empty test set")
    err = (point_prediction(mixture) - y).detach()
    rmse_per_dim = err.square().mean(dim=0).sqrt()
    return EvalReport(
        nll=nll(mixture, y),
        rmse=float(err.square().mean().sqrt()),
        mrmse=float(rmse_per_dim.mean()),
        crps=crps_mixture(mixture, y),
        n_test=y.shape[0],
    )


def evaluate(
    model: SparseGPModel,
    x_std: Tensor,
    y_raw: Tensor,
    y_shift: Tensor,
    y_scale: Tensor,
    num_samples: int = 32,
    generator: torch.Generator | None = None,
) -> EvalReport:
    """Predict at standardized inputs, de-standardize the mixture, and score
    it against raw targets. Sampled families (dgp, bpdgp) draw num_samples
    pathways from `generator`."""
    with torch.no_grad():
        mixture = predictive_mixture(
            model, x_std, num_samples=num_samples, generator=generator
        )
        return score_mixture(mixture.affine(y_shift, y_scale), y_raw)
