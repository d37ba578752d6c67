"""Shared helpers for the test suite: randomized desk-scale components with
every parameter moved off its initialization value, so tests never pass by
accident of a zero."""

import numpy as np
import torch

from sigmagp.gp_layer import ConstantMean, GPUnit
from sigmagp.kernels import DTYPE
from sigmagp.models import ModelConfig, SparseGPModel
from sigmagp.autodiff import load_parameter_vector, parameter_vector


def randomize(model: torch.nn.Module, seed: int, scale: float = 0.3) -> None:
    """Perturb every parameter by N(0, scale^2) noise, deterministically."""
    rng = np.random.default_rng(seed)
    vec = parameter_vector(model)
    load_parameter_vector(model, vec + scale * rng.standard_normal(vec.shape))


def random_unit(
    seed: int,
    location_dim: int = 2,
    num_inducing: int = 4,
    s_repr: str = "chol",
    mean_fn=None,
    **kwargs,
) -> GPUnit:
    """A GPUnit with spread-out inducing points and perturbed parameters."""
    generator = torch.Generator().manual_seed(seed)
    unit = GPUnit(
        location_dim,
        num_inducing,
        mean_fn if mean_fn is not None else ConstantMean(0.0),
        s_repr=s_repr,
        **kwargs,
    )
    with torch.no_grad():
        unit.inducing.copy_(
            torch.randn(num_inducing, location_dim, dtype=DTYPE, generator=generator)
        )
    randomize(unit, seed + 1)
    return unit


def random_model(config: ModelConfig, seed: int) -> SparseGPModel:
    """A model with randomized inducing locations and perturbed parameters."""
    model = SparseGPModel(config, generator=torch.Generator().manual_seed(seed))
    randomize(model, seed + 1, scale=0.2)
    return model


def random_xy(seed: int, n: int, input_dim: int, output_dim: int = 1):
    generator = torch.Generator().manual_seed(seed)
    x = torch.randn(n, input_dim, dtype=DTYPE, generator=generator)
    y = torch.randn(n, output_dim, dtype=DTYPE, generator=generator)
    return x, y
