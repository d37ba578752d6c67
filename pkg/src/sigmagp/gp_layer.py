"""A single sparse variational GP with inducing points.

The variational posterior over the M inducing values u is N(m, S) in the
unwhitened parameterization. For a batch of inputs the marginal posterior of
the function value at x_i is

    mu_i      = mean(x_i) + k_i^T Kmm^{-1} m
    sigma_i^2 = k(x_i, x_i) - k_i^T Kmm^{-1} k_i + k_i^T Kmm^{-1} S Kmm^{-1} k_i

with k_i the vector of cross-covariances against the inducing locations.
All solves go through triangular factors of one robust Cholesky of Kmm.

A unit's inputs are "locations" that may carry more coordinates than either
the kernel or the mean function consumes: deep-model topologies route
hidden features to the kernel and (features, raw input) combinations to the
mean. kernel_idx and mean_idx select each one's view of a location, and the
inducing points are full locations, so the prior mean at the inducing
points (which the KL needs) is always well defined.

S is either diagonal (stored as log variances) or a full covariance stored
via the packed lower triangle of its Cholesky factor with a log diagonal.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
from torch import Tensor, nn

from .kernels import DTYPE, MaternKernel, robust_cholesky

# Marginal variances are clamped here before use in any likelihood or
# sampling expression.
MIN_VARIANCE = 1e-10

S_REPRS = ("diag", "chol")


class ConstantMean(nn.Module):
    def __init__(self, value: float = 0.0):
        super().__init__()
        self.value = nn.Parameter(torch.tensor(float(value), dtype=DTYPE))

    def forward(self, x: Tensor) -> Tensor:
        return self.value.expand(x.shape[0])


class LinearMean(nn.Module):
    """Affine mean w^T x + b. Used for hidden layers of deep models."""

    def __init__(self, input_dim: int):
        super().__init__()
        self.weight = nn.Parameter(torch.zeros(input_dim, dtype=DTYPE))
        self.bias = nn.Parameter(torch.tensor(0.0, dtype=DTYPE))

    def forward(self, x: Tensor) -> Tensor:
        return x @ self.weight + self.bias


@dataclass
class MarginalGaussian:
    """Per-point posterior marginals, both shape (B,)."""

    mean: Tensor
    var: Tensor


def _tril_size(m: int) -> int:
    return m * (m + 1) // 2


def _full_range(idx, dim: int) -> bool:
    return idx == tuple(range(dim))


class GPUnit(nn.Module):
    """One sparse GP: kernel, inducing locations, variational N(m, S), mean fn.

    location_dim is the width of the inputs the unit is fed; kernel_idx and
    mean_idx (default: all coordinates) select what the kernel and the mean
    function see.

    s_repr "diag" stores S = diag(exp(raw_s_diag)) with raw_s_diag the log
    variances, initialized so S = 1e-2 I. s_repr "chol" stores the packed
    lower triangle of the Cholesky factor of S with exp applied to the
    diagonal entries, initialized so the factor is 0.1 I (S = 1e-2 I again).
    """

    def __init__(
        self,
        location_dim: int,
        num_inducing: int,
        mean_fn: nn.Module,
        s_repr: str = "diag",
        smoothness: float = 2.5,
        kernel_idx: tuple[int, ...] | None = None,
        mean_idx: tuple[int, ...] | None = None,
    ):
        super().__init__()
        if s_repr not in S_REPRS:
            raise ValueError(f"s_repr must be one of {S_REPRS}, got {s_repr!r}")
        if num_inducing < 1:
            raise ValueError("num_inducing must be >= 1")
        self.location_dim = location_dim
        self.kernel_idx = tuple(kernel_idx) if kernel_idx is not None else tuple(range(location_dim))
        self.mean_idx = tuple(mean_idx) if mean_idx is not None else tuple(range(location_dim))
        for idx in (self.kernel_idx, self.mean_idx):
            if any(i < 0 or i >= location_dim for i in idx):
                raise ValueError(f"index {idx} outside location space of dim {location_dim}")
        self.num_inducing = num_inducing
        self.s_repr = s_repr
        self.kernel = MaternKernel(len(self.kernel_idx), smoothness=smoothness)
        self.mean_fn = mean_fn
        self.inducing = nn.Parameter(torch.zeros(num_inducing, location_dim, dtype=DTYPE))
        self.var_mean = nn.Parameter(torch.zeros(num_inducing, dtype=DTYPE))
        if s_repr == "diag":
            self.raw_s_diag = nn.Parameter(
                torch.full((num_inducing,), math.log(1e-2), dtype=DTYPE)
            )
        else:
            packed = torch.zeros(_tril_size(num_inducing), dtype=DTYPE)
            idx = torch.arange(num_inducing)
            packed[idx * (idx + 1) // 2 + idx] = math.log(0.1)
            self.raw_s_tril = nn.Parameter(packed)

    def kernel_view(self, loc: Tensor) -> Tensor:
        if _full_range(self.kernel_idx, self.location_dim):
            return loc
        return loc[..., list(self.kernel_idx)]

    def mean_view(self, loc: Tensor) -> Tensor:
        if _full_range(self.mean_idx, self.location_dim):
            return loc
        return loc[..., list(self.mean_idx)]

    def s_chol(self) -> Tensor:
        """Lower Cholesky factor of S, shape (M, M)."""
        m = self.num_inducing
        if self.s_repr == "diag":
            return torch.diag((0.5 * self.raw_s_diag).exp())
        tril = torch.zeros(m, m, dtype=DTYPE)
        rows, cols = torch.tril_indices(m, m)
        tril[rows, cols] = self.raw_s_tril
        diag = torch.arange(m)
        tril[diag, diag] = tril.diagonal().exp()
        return tril

    def s_matrix(self) -> Tensor:
        ls = self.s_chol()
        return ls @ ls.transpose(-1, -2)

    def kmm_chol(self) -> Tensor:
        z = self.kernel_view(self.inducing)
        kmm = self.kernel(z, z)
        kmm = 0.5 * (kmm + kmm.transpose(-1, -2))
        chol, _ = robust_cholesky(kmm)
        return chol


def predict_marginal(
    unit: GPUnit, x: Tensor, mean_x: Tensor | None = None
) -> MarginalGaussian:
    """Posterior marginals at the rows of x (full locations).

    mean_x, when given, replaces the unit's own mean view of x.
    """
    lk = unit.kmm_chol()
    knm = unit.kernel(unit.kernel_view(x), unit.kernel_view(unit.inducing))  # (B, M)
    # a = Lk^{-1} Kmn, shape (M, B)
    a = torch.linalg.solve_triangular(lk, knm.transpose(-1, -2), upper=False)
    alpha = torch.linalg.solve_triangular(lk, unit.var_mean.unsqueeze(-1), upper=False)
    mean_in = unit.mean_view(x) if mean_x is None else mean_x
    mean = unit.mean_fn(mean_in) + a.transpose(-1, -2) @ alpha.squeeze(-1)
    # v = Kmm^{-1} Kmn, shape (M, B)
    v = torch.linalg.solve_triangular(lk.transpose(-1, -2), a, upper=True)
    ktilde = unit.kernel.diagonal(x) - a.square().sum(dim=-2)
    if unit.s_repr == "diag":
        s_diag = unit.raw_s_diag.exp()
        quad = (s_diag.unsqueeze(-1) * v.square()).sum(dim=-2)
    else:
        quad = (unit.s_chol().transpose(-1, -2) @ v).square().sum(dim=-2)
    var = (ktilde + quad).clamp_min(MIN_VARIANCE)
    return MarginalGaussian(mean=mean, var=var)


def kl_to_prior(unit: GPUnit) -> Tensor:
    """KL(N(m, S) || N(mean(Z), Kmm)), a scalar.

    = 0.5 [ tr(Kmm^{-1} S) + d^T Kmm^{-1} d - M + logdet Kmm - logdet S ]

    with d = m - mean(Z). Clamped at zero: roundoff can push the exact-zero
    case (S = Kmm, m = mean) slightly negative.
    """
    lk = unit.kmm_chol()
    ls = unit.s_chol()
    m = unit.num_inducing
    # tr(Kmm^{-1} S) = ||Lk^{-1} Ls||_F^2
    w = torch.linalg.solve_triangular(lk, ls, upper=False)
    trace = w.square().sum()
    d = unit.var_mean - unit.mean_fn(unit.mean_view(unit.inducing))
    dw = torch.linalg.solve_triangular(lk, d.unsqueeze(-1), upper=False)
    maha = dw.square().sum()
    logdet_k = 2.0 * lk.diagonal().log().sum()
    logdet_s = 2.0 * ls.diagonal().log().sum()
    kl = 0.5 * (trace + maha - m + logdet_k - logdet_s)
    return kl.clamp_min(0.0)


def trace_penalty(unit: GPUnit, x: Tensor) -> Tensor:
    """sum_i clamp(k(x_i,x_i) - k_i^T Kmm^{-1} k_i, 0). Diagnostic only."""
    lk = unit.kmm_chol()
    knm = unit.kernel(unit.kernel_view(x), unit.kernel_view(unit.inducing))
    a = torch.linalg.solve_triangular(lk, knm.transpose(-1, -2), upper=False)
    ktilde = unit.kernel.diagonal(x) - a.square().sum(dim=-2)
    return ktilde.clamp_min(0.0).sum()
