"""Quadrature rules over the hidden-layer Gaussians.

Fixed Gauss-Hermite ("gh", probabilists' convention: nodes and weights
integrate exactly against N(0,1) up to polynomial degree 2S-1) and three
learnable families:

    qr1: free node table, one node per (site, hidden dim), S*W reals, plus
         S^W joint weight logits over the full product grid.
    qr2: like qr1 but the node table is constrained antisymmetric in the
         site index, xi_w^{(s)} = -xi_w^{(S+1-s)}, halving the free nodes.
    qr3: aligned sites. S nodes per hidden dim but only S weight logits;
         component s uses row s of the node table in every hidden dim, so
         the mixture has S components instead of S^W.

Weights are parameterized through softmax over logits, so they are positive
and sum to one for any logit values. All rules are initialized at the
Gauss-Hermite rule; qr3 additionally adds N(0, 0.1^2) jitter to its node
table so the hidden dims do not start with identical columns.
"""

from __future__ import annotations

import itertools
import math

import numpy as np
import torch
from torch import Tensor, nn

from .kernels import DTYPE

RULE_KINDS = ("gh", "qr1", "qr2", "qr3")

MAX_SITES = 30


def gauss_hermite_nodes(num_sites: int) -> tuple[Tensor, Tensor]:
    """Probabilists' Gauss-Hermite nodes and normalized weights, both (S,).

    Nodes ascend; weights are positive and sum to one exactly up to
    float rounding (the hermite_e weights are divided by their sum, which
    equals sqrt(2 pi)).
    """
    if not 1 <= num_sites <= MAX_SITES:
        raise ValueError(f"num_sites must be in [1, {MAX_SITES}], got {num_sites}")
    nodes, weights = np.polynomial.hermite_e.hermegauss(num_sites)
    weights = weights / weights.sum()
    return (
        torch.as_tensor(nodes, dtype=DTYPE),
        torch.as_tensor(weights, dtype=DTYPE),
    )


def reflect_half_nodes(free: Tensor, num_sites: int) -> Tensor:
    """Expand the free half of an antisymmetric node table to all S rows.

    free has ceil(S/2) rows; row s of the result is free[s] for the first
    half, an exact zero row in the middle when S is odd, and -free reversed
    for the last half. Rows pair as s <-> S+1-s with opposite signs.
    """
    half = num_sites // 2
    top = free[:half]
    parts = [top]
    if num_sites % 2 == 1:
        parts.append(torch.zeros(1, free.shape[1], dtype=free.dtype))
    parts.append(-top.flip(0))
    return torch.cat(parts, dim=0)


def _product_grid(num_sites: int, width: int) -> Tensor:
    """All W-tuples of site indices, shape (S^W, W), lexicographic."""
    tuples = list(itertools.product(range(num_sites), repeat=width))
    return torch.tensor(tuples, dtype=torch.long)


class QuadratureRule(nn.Module):
    """One layer's rule: a node table (S, W) and mixture weight logits.

    components() flattens the rule into C mixture components, each a weight
    and a W-vector offset in standard-normal space:

        gh / qr1 / qr2: C = S^W, offsets range over the product grid and
            component weights are softmax(logits) (for gh, the fixed
            products of 1-D weights).
        qr3: C = S, component s is row s of the node table with weight
            softmax(logits)_s.
    """

    def __init__(
        self,
        kind: str,
        num_sites: int,
        width: int,
        generator: torch.Generator | None = None,
    ):
        super().__init__()
        if kind not in RULE_KINDS:
            raise ValueError(f"kind must be one of {RULE_KINDS}, got {kind!r}")
        if width < 1:
            raise ValueError("width must be >= 1")
        self.kind = kind
        self.num_sites = num_sites
        self.width = width

        nodes, weights = gauss_hermite_nodes(num_sites)
        table = nodes.unsqueeze(-1).repeat(1, width)  # (S, W)
        if kind == "qr3":
            jitter = torch.randn(table.shape, dtype=DTYPE, generator=generator)
            self.nodes = nn.Parameter(table + 0.1 * jitter)
            self.weight_logits = nn.Parameter(weights.log())
        elif kind == "qr1":
            self.nodes = nn.Parameter(table)
            self.weight_logits = nn.Parameter(self._grid_log_weights(weights))
        elif kind == "qr2":
            # ceil(S/2) rows; for odd S the antisymmetry pins the middle row
            # at zero, so the last free row never enters the table.
            free = table[: (num_sites + 1) // 2].clone()
            self.free_nodes = nn.Parameter(free)
            self.weight_logits = nn.Parameter(self._grid_log_weights(weights))
        else:
            self.register_buffer("gh_nodes", nodes)
            self.register_buffer("gh_log_weights", weights.log())
        self.register_buffer("site_grid", _product_grid(num_sites, width))

    def _grid_log_weights(self, weights: Tensor) -> Tensor:
        grid = _product_grid(self.num_sites, self.width)
        return weights.log()[grid].sum(dim=-1)

    def node_table(self) -> Tensor:
        """Current per-site, per-dim nodes, shape (S, W)."""
        if self.kind == "gh":
            return self.gh_nodes.unsqueeze(-1).expand(self.num_sites, self.width)
        if self.kind == "qr2":
            return reflect_half_nodes(self.free_nodes, self.num_sites)
        return self.nodes

    def component_log_weights(self) -> Tensor:
        if self.kind == "gh":
            logw = self.gh_log_weights[self.site_grid].sum(dim=-1)
            return logw - logw.logsumexp(0)
        return torch.log_softmax(self.weight_logits, dim=0)

    def components(self) -> tuple[Tensor, Tensor]:
        """(log_weights (C,), offsets (C, W)) for the flattened mixture."""
        table = self.node_table()
        logw = self.component_log_weights()
        if self.kind == "qr3":
            return logw, table
        w_idx = torch.arange(self.width)
        offsets = table[self.site_grid, w_idx.unsqueeze(0)]
        return logw, offsets

    @property
    def num_components(self) -> int:
        return self.num_sites if self.kind == "qr3" else self.num_sites**self.width


def sigma_points(
    rule: QuadratureRule, mean: Tensor, std: Tensor
) -> tuple[Tensor, Tensor]:
    """Mixture locations mean + offset * std for one Gaussian layer state.

    mean and std may be (W,) for a single point or (B, W) batched; returns
    (weights (C,), points (C, W) or (C, B, W)).
    """
    if mean.shape != std.shape:
        raise ValueError("mean and std must have matching shapes")
    if mean.shape[-1] != rule.width:
        raise ValueError(
            f"rule width {rule.width} does not match state width {mean.shape[-1]}"
        )
    logw, offsets = rule.components()
    if mean.dim() == 1:
        points = mean.unsqueeze(0) + offsets * std.unsqueeze(0)
    else:
        points = mean.unsqueeze(0) + offsets.unsqueeze(1) * std.unsqueeze(0)
    return logw.exp(), points


def make_rule(
    kind: str,
    num_sites: int,
    width: int,
    seed: int | None = None,
) -> QuadratureRule:
    generator = None
    if seed is not None:
        generator = torch.Generator().manual_seed(seed)
    return QuadratureRule(kind, num_sites, width, generator=generator)
