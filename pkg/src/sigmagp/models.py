"""Model families built from sparse GP layers.

Five families share one container:

    svgp    single-layer variational GP, ELBO training
    ppgpr   single-layer, predictive objective
    dgp     deep GP (2-3 layers), hidden layers sampled, ELBO training
    dspp    deep model whose hidden-layer integrals are finite quadrature
            mixtures; deterministic forward pass, predictive objective
    bpdgp   dspp-style predictive objective but hidden layers Monte Carlo
            sampled (a biased baseline)

Every forward pass produces a PredictiveMixture: C weighted Gaussian
components per test point. For svgp/ppgpr C = 1; for dspp C is the number of
quadrature components; for sampled families C is the number of samples with
equal weights.

Three-layer models support four wirings of the second hidden layer, chosen
by `topology`: with g the first-layer features and x the raw input,

    1: kernel g,        mean g
    2: kernel g,        mean x
    3: kernel g,        mean [g, x]
    4: kernel [g, x],   mean [g, x]

The output layer always consumes the last hidden layer's features alone.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass

import torch
from torch import Tensor, nn

from .gp_layer import ConstantMean, GPUnit, LinearMean, predict_marginal
from .kernels import DTYPE, SMOOTHNESS_CHOICES
from .quadrature import RULE_KINDS, QuadratureRule

FAMILIES = ("svgp", "ppgpr", "dgp", "dspp", "bpdgp")
TOPOLOGIES = (1, 2, 3, 4)

_DEEP_FAMILIES = ("dgp", "dspp", "bpdgp")
_DIAG_S_FAMILIES = ("dspp", "ppgpr", "bpdgp")

LOG2PI = math.log(2.0 * math.pi)


def gaussian_log_density(y: Tensor, mean: Tensor, var: Tensor) -> Tensor:
    """Elementwise log N(y | mean, var); shapes broadcast."""
    return -0.5 * (LOG2PI + var.log() + (y - mean).square() / var)


@dataclass
class ModelConfig:
    family: str
    input_dim: int
    output_dim: int = 1
    num_layers: int = 1
    hidden_width: int = 3
    num_inducing: int = 32
    quadrature: str = "qr3"
    num_sites: int = 10
    mc_samples: int = 10
    topology: int = 1
    smoothness: float = 2.5
    s_repr: str = ""  # "" picks the family default
    lmc: bool = False

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"family must be one of {FAMILIES}, got {self.family!r}")
        if self.input_dim < 1 or self.output_dim < 1:
            raise ValueError("input_dim and output_dim must be >= 1")
        if self.family in _DEEP_FAMILIES:
            if self.num_layers not in (2, 3):
                raise ValueError(f"{self.family} needs 2 or 3 layers, got {self.num_layers}")
        elif self.num_layers != 1:
            raise ValueError(f"{self.family} is single-layer, got {self.num_layers}")
        if self.topology not in TOPOLOGIES:
            raise ValueError(f"topology must be in {TOPOLOGIES}, got {self.topology}")
        if self.topology != 1 and self.num_layers != 3:
            raise ValueError("topologies 2-4 apply only to 3-layer models")
        if self.quadrature not in RULE_KINDS:
            raise ValueError(f"quadrature must be one of {RULE_KINDS}")
        if self.num_sites < 1 or self.mc_samples < 1:
            raise ValueError("num_sites and mc_samples must be >= 1")
        if self.hidden_width < 1 or self.num_inducing < 1:
            raise ValueError("hidden_width and num_inducing must be >= 1")
        if self.smoothness not in SMOOTHNESS_CHOICES:
            raise ValueError(f"smoothness must be one of {SMOOTHNESS_CHOICES}")
        if self.s_repr not in ("", "diag", "chol"):
            raise ValueError("s_repr must be '', 'diag', or 'chol'")
        if not self.lmc and self.output_dim != 1:
            raise ValueError("output_dim > 1 requires lmc=True")

    @property
    def resolved_s_repr(self) -> str:
        if self.s_repr:
            return self.s_repr
        return "diag" if self.family in _DIAG_S_FAMILIES else "chol"

    @property
    def output_width(self) -> int:
        # LMC uses as many output GPs as target dims (square mixing matrix).
        return self.output_dim if self.lmc else 1

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)


@dataclass(frozen=True)
class LayerWiring:
    """How one layer reads its location space: total width plus the
    coordinate subsets its kernel and mean function consume."""

    location_dim: int
    kernel_idx: tuple[int, ...]
    mean_idx: tuple[int, ...]


def _identity_wiring(dim: int) -> LayerWiring:
    idx = tuple(range(dim))
    return LayerWiring(dim, idx, idx)


def _topology_wiring(topology: int, width: int, input_dim: int) -> LayerWiring:
    """Second-hidden-layer wiring. For topology 1 the location is the
    feature vector alone; otherwise it is [g, x]."""
    g_idx = tuple(range(width))
    x_idx = tuple(range(width, width + input_dim))
    both = g_idx + x_idx
    if topology == 1:
        return _identity_wiring(width)
    if topology == 2:
        return LayerWiring(width + input_dim, g_idx, x_idx)
    if topology == 3:
        return LayerWiring(width + input_dim, g_idx, both)
    return LayerWiring(width + input_dim, both, both)


def hidden_wirings(config: ModelConfig) -> list[LayerWiring]:
    if config.num_layers == 1:
        return []
    wirings = [_identity_wiring(config.input_dim)]
    if config.num_layers == 3:
        wirings.append(
            _topology_wiring(config.topology, config.hidden_width, config.input_dim)
        )
    return wirings


def output_kernel_dim(config: ModelConfig) -> int:
    return config.input_dim if config.num_layers == 1 else config.hidden_width


def layer_location(topology: int, g: Tensor, x: Tensor) -> Tensor:
    """Location tensor for a second hidden layer: the features alone for
    topology 1, [g, x] otherwise. g may carry extra leading pathway dims;
    x is broadcast to match."""
    if topology not in TOPOLOGIES:
        raise ValueError(f"topology must be in {TOPOLOGIES}, got {topology}")
    if topology == 1:
        return g
    while x.dim() < g.dim():
        x = x.unsqueeze(0)
    x = x.expand(*g.shape[:-1], x.shape[-1])
    return torch.cat([g, x], dim=-1)


def wire_topology(topology: int, g: Tensor, x: Tensor) -> tuple[Tensor, Tensor]:
    """Route (features g, raw input x) to (kernel input, mean input)."""
    loc = layer_location(topology, g, x)
    wiring = _topology_wiring(topology, g.shape[-1], x.shape[-1])
    return loc[..., list(wiring.kernel_idx)], loc[..., list(wiring.mean_idx)]


@dataclass
class PredictiveMixture:
    """Mixture of C diagonal Gaussians per test point.

    log_weights (C,), means and variances (C, B, D). Weights are shared
    across the batch; each component is an independent Gaussian per output
    dim (within a component, dims are uncorrelated).
    """

    log_weights: Tensor
    means: Tensor
    variances: Tensor

    def __post_init__(self):
        if self.means.shape != self.variances.shape:
            raise ValueError("means and variances must share a shape")
        if self.log_weights.shape[0] != self.means.shape[0]:
            raise ValueError("weight count must match component count")

    @property
    def num_components(self) -> int:
        return self.means.shape[0]

    @property
    def weights(self) -> Tensor:
        return self.log_weights.exp()

    def log_density(self, y: Tensor) -> Tensor:
        """Joint log density per batch point, shape (B,). y is (B, D)."""
        comp = gaussian_log_density(y.unsqueeze(0), self.means, self.variances)
        comp = comp.sum(dim=-1)  # (C, B)
        return torch.logsumexp(self.log_weights.unsqueeze(-1) + comp, dim=0)

    def mean(self) -> Tensor:
        """Mixture mean per point, shape (B, D)."""
        w = self.weights.reshape(-1, 1, 1)
        return (w * self.means).sum(dim=0)

    def affine(self, shift: Tensor, scale: Tensor) -> "PredictiveMixture":
        """The mixture of scale * Y + shift; shift/scale are (D,)."""
        return PredictiveMixture(
            log_weights=self.log_weights,
            means=self.means * scale + shift,
            variances=self.variances * scale.square(),
        )

    def marginal_dim(self, d: int) -> "PredictiveMixture":
        return PredictiveMixture(
            log_weights=self.log_weights,
            means=self.means[:, :, d : d + 1],
            variances=self.variances[:, :, d : d + 1],
        )


class SparseGPModel(nn.Module):
    """Container for all families: hidden GP layers, output GP layer,
    per-layer quadrature rules (dspp only), observation noise, and the
    optional LMC mixing matrix.

    Construction draws the random pieces (hidden mean weights, inducing
    locations, qr3 node jitter) from `generator`, so a seed fixes the model
    bit for bit. Inducing locations start standard normal; training replaces
    the first layer's with k-means centroids and propagates them deeper.
    """

    def __init__(
        self,
        config: ModelConfig,
        generator: torch.Generator | None = None,
        y_mean: float | Tensor = 0.0,
    ):
        super().__init__()
        if generator is None:
            generator = torch.Generator().manual_seed(0)
        self.config = config
        s_repr = config.resolved_s_repr

        def draw(*shape):
            return torch.randn(*shape, dtype=DTYPE, generator=generator)

        hidden = []
        for wiring in hidden_wirings(config):
            units = []
            for _ in range(config.hidden_width):
                mean_dim = len(wiring.mean_idx)
                mean_fn = LinearMean(mean_dim)
                with torch.no_grad():
                    mean_fn.weight.copy_(draw(mean_dim) / math.sqrt(mean_dim))
                unit = GPUnit(
                    wiring.location_dim,
                    config.num_inducing,
                    mean_fn,
                    s_repr=s_repr,
                    smoothness=config.smoothness,
                    kernel_idx=wiring.kernel_idx,
                    mean_idx=wiring.mean_idx,
                )
                with torch.no_grad():
                    unit.inducing.copy_(draw(config.num_inducing, wiring.location_dim))
                units.append(unit)
            hidden.append(nn.ModuleList(units))
        self.hidden_layers = nn.ModuleList(hidden)

        rules = []
        if config.family == "dspp":
            for _ in hidden_wirings(config):
                rules.append(
                    QuadratureRule(
                        config.quadrature,
                        config.num_sites,
                        config.hidden_width,
                        generator=generator,
                    )
                )
        self.rules = nn.ModuleList(rules)

        y_mean = torch.as_tensor(y_mean, dtype=DTYPE).reshape(-1)
        if y_mean.numel() == 1:
            y_mean = y_mean.expand(config.output_width)
        out_dim = output_kernel_dim(config)
        out_units = []
        for w in range(config.output_width):
            unit = GPUnit(
                out_dim,
                config.num_inducing,
                ConstantMean(float(y_mean[w])),
                s_repr=s_repr,
                smoothness=config.smoothness,
            )
            with torch.no_grad():
                unit.inducing.copy_(draw(config.num_inducing, out_dim))
            out_units.append(unit)
        self.out_layer = nn.ModuleList(out_units)

        self.raw_obs_noise = nn.Parameter(
            torch.full((config.output_dim,), math.log(0.5), dtype=DTYPE)
        )
        if config.lmc:
            self.lmc_mix = nn.Parameter(
                torch.eye(config.output_width, config.output_dim, dtype=DTYPE)
            )

    def obs_variance(self) -> Tensor:
        return (2.0 * self.raw_obs_noise).exp()

    def mix_latent(self, mu_f: Tensor, var_f: Tensor) -> tuple[Tensor, Tensor]:
        """Map output-GP marginals (..., W') to target-space latent
        marginals (..., D). Without LMC this is the identity (W' = D = 1);
        with it, mean_d = sum_w mu_w A_wd and var_d = sum_w var_w A_wd^2.
        """
        if not self.config.lmc:
            return mu_f, var_f
        a = self.lmc_mix
        return mu_f @ a, var_f @ a.square()


def _layer_marginals(units: nn.ModuleList, loc: Tensor) -> tuple[Tensor, Tensor]:
    """Stack per-unit marginals over a flat batch: (R, width) means, vars."""
    means, variances = [], []
    for unit in units:
        mg = predict_marginal(unit, loc)
        means.append(mg.mean)
        variances.append(mg.var)
    return torch.stack(means, dim=-1), torch.stack(variances, dim=-1)


def _pathway_marginals(units: nn.ModuleList, loc: Tensor) -> tuple[Tensor, Tensor]:
    """_layer_marginals over locations with extra leading pathway dims."""
    lead = loc.shape[:-1]
    mu, var = _layer_marginals(units, loc.reshape(-1, loc.shape[-1]))
    return mu.reshape(*lead, -1), var.reshape(*lead, -1)


def dspp_pathways(model: SparseGPModel, x: Tensor) -> tuple[Tensor, Tensor]:
    """Propagate quadrature pathways through the hidden layers.

    Returns (log_weights (C,), features (C, B, W_last)). For grid rules
    (gh/qr1/qr2) successive layers multiply: C is the product of per-layer
    component counts and weights multiply. For qr3 the layers stay aligned:
    site s of each layer extends pathway s, C = S throughout, and the
    pathway weight is the renormalized product of the per-layer site
    weights.
    """
    cfg = model.config
    if cfg.family != "dspp":
        raise ValueError(f"dspp_pathways needs a dspp model, got {cfg.family}")
    aligned = cfg.quadrature == "qr3"
    feats: Tensor | None = None
    log_w: Tensor | None = None
    for li, units in enumerate(model.hidden_layers):
        lw, offsets = model.rules[li].components()  # (C_l,), (C_l, W_l)
        if feats is None:
            mu, var = _layer_marginals(units, x)  # (B, W)
            std = var.sqrt()
            feats = mu.unsqueeze(0) + offsets.unsqueeze(1) * std.unsqueeze(0)
            log_w = lw
        else:
            loc = layer_location(cfg.topology, feats, x)
            mu, var = _pathway_marginals(units, loc)  # (C, B, W_l)
            std = var.sqrt()
            if aligned:
                feats = mu + offsets.unsqueeze(1) * std
                log_w = log_w + lw
            else:
                feats = mu.unsqueeze(1) + offsets.unsqueeze(0).unsqueeze(2) * std.unsqueeze(1)
                feats = feats.reshape(-1, feats.shape[2], feats.shape[3])
                log_w = (log_w.unsqueeze(1) + lw.unsqueeze(0)).reshape(-1)
    if aligned and len(model.hidden_layers) > 1:
        log_w = log_w - log_w.logsumexp(dim=0)
    return log_w, feats


def sampled_pathways(
    model: SparseGPModel,
    x: Tensor,
    num_samples: int,
    generator: torch.Generator | None = None,
    eps: list[Tensor] | None = None,
) -> tuple[Tensor, Tensor]:
    """Monte Carlo pathways for dgp/bpdgp: reparameterized hidden draws.

    Returns (log_weights (n,), features (n, B, W_last)) with uniform
    weights. eps overrides the standard-normal draws (one tensor per hidden
    layer, shape (n, B, W_l)) for deterministic tests.
    """
    cfg = model.config
    feats: Tensor | None = None
    for li, units in enumerate(model.hidden_layers):
        if feats is None:
            mu, var = _layer_marginals(units, x)  # (B, W)
            mu = mu.unsqueeze(0).expand(num_samples, *mu.shape)
            var = var.unsqueeze(0).expand(num_samples, *var.shape)
        else:
            loc = layer_location(cfg.topology, feats, x)
            mu, var = _pathway_marginals(units, loc)
        if eps is not None:
            e = eps[li]
            if e.shape != mu.shape:
                raise ValueError(
                    f"eps[{li}] must have shape {tuple(mu.shape)}, got {tuple(e.shape)}"
                )
        else:
            e = torch.randn(mu.shape, dtype=DTYPE, generator=generator)
        feats = mu + e * var.sqrt()
    log_w = torch.full((num_samples,), -math.log(num_samples), dtype=DTYPE)
    return log_w, feats


def output_marginals(model: SparseGPModel, feats: Tensor) -> tuple[Tensor, Tensor]:
    """Output-layer marginals over pathway features (..., W_last)."""
    return _pathway_marginals(model.out_layer, feats)


def observation_mixture(
    model: SparseGPModel, log_w: Tensor, mu_f: Tensor, var_f: Tensor
) -> PredictiveMixture:
    """Predictive mixture over y: latent marginals mixed (LMC) plus noise."""
    mean, var = model.mix_latent(mu_f, var_f)
    return PredictiveMixture(log_w, mean, var + model.obs_variance())


def forward_svgp(model: SparseGPModel, x: Tensor) -> PredictiveMixture:
    """Single-layer predictive density: one Gaussian component per point."""
    if model.config.num_layers != 1:
        raise ValueError("forward_svgp applies to single-layer models")
    mu, var = _layer_marginals(model.out_layer, x)  # (B, W')
    log_w = torch.zeros(1, dtype=DTYPE)
    return observation_mixture(model, log_w, mu.unsqueeze(0), var.unsqueeze(0))


def forward_dspp(model: SparseGPModel, x: Tensor) -> PredictiveMixture:
    log_w, feats = dspp_pathways(model, x)
    mu_f, var_f = output_marginals(model, feats)
    return observation_mixture(model, log_w, mu_f, var_f)


def forward_dgp_sampled(
    model: SparseGPModel,
    x: Tensor,
    num_samples: int,
    generator: torch.Generator | None = None,
    eps: list[Tensor] | None = None,
) -> PredictiveMixture:
    log_w, feats = sampled_pathways(model, x, num_samples, generator, eps)
    mu_f, var_f = output_marginals(model, feats)
    return observation_mixture(model, log_w, mu_f, var_f)


def forward_lmc(model: SparseGPModel, x: Tensor, **kwargs) -> PredictiveMixture:
    """Multi-output predictive mixture; requires an LMC head."""
    if not model.config.lmc:
        raise ValueError("forward_lmc requires a model built with lmc=True")
    return predictive_mixture(model, x, **kwargs)


def predictive_mixture(
    model: SparseGPModel,
    x: Tensor,
    num_samples: int = 32,
    generator: torch.Generator | None = None,
) -> PredictiveMixture:
    """Family dispatch used by evaluation; sampled families draw
    num_samples pathways from `generator`."""
    family = model.config.family
    if family in ("svgp", "ppgpr"):
        return forward_svgp(model, x)
    if family == "dspp":
        return forward_dspp(model, x)
    return forward_dgp_sampled(model, x, num_samples, generator=generator)
