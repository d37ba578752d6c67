"""Matern kernels with per-dimension lengthscales, block assembly, and a
jitter-escalating Cholesky.

Everything here is torch, double precision. Positive hyperparameters
(lengthscales, outputscale) are stored as logs so that unconstrained
optimization keeps them positive by construction.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
from torch import Tensor, nn

DTYPE = torch.float64

SMOOTHNESS_CHOICES = (0.5, 1.5, 2.5)

# Squared distances are clamped here before the sqrt. Any true squared
# distance below this is numerically zero, and the clamp keeps the sqrt
# gradient finite (identically zero) for coincident points.
_MIN_SQDIST = 1e-36


class NotPositiveDefinite(RuntimeError):
    """Factorization failed even after the jitter escalation ran out."""


def _as_matrix(x: Tensor) -> Tensor:
    if x.dim() == 1:
        return x.unsqueeze(0)
    if x.dim() != 2:
        raise ValueError(f"expected 1-D or 2-D input, got shape {tuple(x.shape)}")
    return x


class MaternKernel(nn.Module):
    """Stationary Matern kernel with independent lengthscale per input dim.

    smoothness selects the half-integer member: 0.5 (exponential), 1.5, or
    2.5. The correlation at scaled distance r is

        0.5: exp(-r)
        1.5: (1 + sqrt(3) r) exp(-sqrt(3) r)
        2.5: (1 + sqrt(5) r + 5 r^2 / 3) exp(-sqrt(5) r)

    multiplied by the outputscale (a variance, not a standard deviation).
    """

    def __init__(
        self,
        input_dim: int,
        smoothness: float = 2.5,
        lengthscale: float = 1.0,
        outputscale: float = 1.0,
    ):
        super().__init__()
        if input_dim < 1:
            raise ValueError(f"input_dim must be >= 1, got {input_dim}")
        if smoothness not in SMOOTHNESS_CHOICES:
            raise ValueError(
                f"smoothness must be one of {SMOOTHNESS_CHOICES}, got {smoothness}"
            )
        if lengthscale <= 0 or outputscale <= 0:
            raise ValueError("lengthscale and outputscale must be positive")
        self.input_dim = input_dim
        self.smoothness = smoothness
        self.raw_lengthscales = nn.Parameter(
            torch.full((input_dim,), math.log(lengthscale), dtype=DTYPE)
        )
        self.raw_outputscale = nn.Parameter(
            torch.tensor(math.log(outputscale), dtype=DTYPE)
        )

    @property
    def lengthscales(self) -> Tensor:
        return self.raw_lengthscales.exp()

    @property
    def outputscale(self) -> Tensor:
        return self.raw_outputscale.exp()

    def scaled_distance(self, x: Tensor, z: Tensor) -> Tensor:
        """Pairwise ||(x - z) / ell||, shape (N, M)."""
        x = _as_matrix(x) / self.lengthscales
        z = _as_matrix(z) / self.lengthscales
        diff = x.unsqueeze(-2) - z.unsqueeze(-3)
        sq = diff.square().sum(-1).clamp_min(_MIN_SQDIST)
        return sq.sqrt()

    def forward(self, x: Tensor, z: Tensor) -> Tensor:
        """Cross-covariance matrix, shape (N, M)."""
        if _as_matrix(x).shape[-1] != self.input_dim:
            raise ValueError(
                f"kernel expects inputs of dim {self.input_dim}, "
                f"got {_as_matrix(x).shape[-1]}"
            )
        if _as_matrix(z).shape[-1] != self.input_dim:
            raise ValueError(
                f"kernel expects inputs of dim {self.input_dim}, "
                f"got {_as_matrix(z).shape[-1]}"
            )
        r = self.scaled_distance(x, z)
        if self.smoothness == 0.5:
            corr = torch.exp(-r)
        elif self.smoothness == 1.5:
            a = math.sqrt(3.0) * r
            corr = (1.0 + a) * torch.exp(-a)
        else:
            a = math.sqrt(5.0) * r
            corr = (1.0 + a + a.square() / 3.0) * torch.exp(-a)
        return self.outputscale * corr

    def diagonal(self, x: Tensor) -> Tensor:
        """k(x_i, x_i) for each row, shape (N,)."""
        n = _as_matrix(x).shape[0]
        return self.outputscale.expand(n).clone()


def kernel_eval(kernel: MaternKernel, x: Tensor, z: Tensor) -> Tensor:
    """Scalar k(x, z) for two single points (1-D tensors)."""
    if x.dim() != 1 or z.dim() != 1:
        raise ValueError("kernel_eval takes single points as 1-D tensors")
    return kernel(x.unsqueeze(0), z.unsqueeze(0)).squeeze()


@dataclass
class KernelBlocks:
    """Covariance blocks shared by the sparse-GP formulas.

    kmm is symmetrized exactly ((K + K^T) / 2) so that factorization never
    sees asymmetry at roundoff level.
    """

    kmm: Tensor  # (M, M)
    knm: Tensor  # (N, M)
    kdiag: Tensor  # (N,)


def assemble_blocks(kernel: MaternKernel, x: Tensor, z: Tensor) -> KernelBlocks:
    kmm = kernel(z, z)
    kmm = 0.5 * (kmm + kmm.transpose(-1, -2))
    return KernelBlocks(kmm=kmm, knm=kernel(x, z), kdiag=kernel.diagonal(x))


# Jitter escalation: scales applied to mean(diag) in order until the
# factorization succeeds. Zero first so well-conditioned matrices are
# factored unperturbed.
_JITTER_SCALES = (0.0, 1e-8, 1e-7, 1e-6, 1e-5, 1e-4)


def robust_cholesky(a: Tensor) -> tuple[Tensor, float]:
    """Lower Cholesky factor of a symmetric PSD matrix, with escalating jitter.

    Returns (L, jitter) where jitter is the diagonal perturbation that was
    actually added (0.0 when none was needed). Raises NotPositiveDefinite if
    the largest allowed jitter, 1e-4 * mean(diag), still fails.
    """
    if a.dim() != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {tuple(a.shape)}")
    if not torch.isfinite(a).all():
        raise NotPositiveDefinite("matrix contains non-finite entries")
    diag_mean = float(a.diagonal().mean().detach())
    eye = torch.eye(a.shape[0], dtype=a.dtype, device=a.device)
    for scale in _JITTER_SCALES:
        jitter = scale * diag_mean
        chol, info = torch.linalg.cholesky_ex(a + jitter * eye)
        if int(info) == 0 and torch.isfinite(chol).all():
            return chol, jitter
    raise NotPositiveDefinite(
        f"Cholesky failed at maximum jitter {_JITTER_SCALES[-1] * diag_mean:.3e} "
        f"(matrix size {a.shape[0]})"
    )
