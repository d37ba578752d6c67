"""Flat parameter views, analytic gradients, and a finite-difference check.

Parameters are addressed in the stable order given by named_parameters();
names never depend on tensor values, so a (name, shape) table identifies a
model's parameter schema. Gradients come from reverse-mode accumulation; the
finite-difference path below is an independent oracle that only ever calls
the objective as a black box.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
import torch
from torch import nn


class NonFiniteGradient(RuntimeError):
    """An objective value or gradient entry came out NaN or infinite."""

    def __init__(self, param_name: str):
        super().__init__(f"non-finite gradient in {param_name}")
        self.param_name = param_name


def parameter_entries(model: nn.Module) -> list[tuple[str, torch.nn.Parameter]]:
    return list(model.named_parameters())


def parameter_schema(model: nn.Module) -> list[tuple[str, tuple[int, ...]]]:
    return [(name, tuple(p.shape)) for name, p in parameter_entries(model)]


def parameter_vector(model: nn.Module) -> np.ndarray:
    """All trainable parameters flattened to one float64 vector."""
    parts = [p.detach().numpy().ravel() for _, p in parameter_entries(model)]
    if not parts:
        return np.zeros(0)
    return np.concatenate(parts)


def load_parameter_vector(model: nn.Module, vec: np.ndarray) -> None:
    """Inverse of parameter_vector; sizes must match exactly."""
    offset = 0
    with torch.no_grad():
        for _, p in parameter_entries(model):
            n = p.numel()
            chunk = vec[offset : offset + n]
            if chunk.shape[0] != n:
                raise ValueError("parameter vector too short for model")
            p.copy_(torch.as_tensor(chunk.reshape(p.shape), dtype=p.dtype))
            offset += n
    if offset != vec.shape[0]:
        raise ValueError(f"parameter vector has {vec.shape[0]} entries, model has {offset}")


def scalar_name(model: nn.Module, flat_index: int) -> str:
    """Human-readable name of one flat-vector entry, e.g. 'kernel.raw_lengthscales[2]'."""
    offset = 0
    for name, p in parameter_entries(model):
        n = p.numel()
        if flat_index < offset + n:
            if n == 1:
                return name
            return f"{name}[{flat_index - offset}]"
        offset += n
    raise IndexError(f"flat index {flat_index} out of range ({offset} parameters)")


def gradient(
    value_fn: Callable[[], torch.Tensor], model: nn.Module
) -> tuple[float, np.ndarray]:
    """Evaluate value_fn once and return (value, flat gradient).

    Parameters the value does not touch get zero entries. Raises
    NonFiniteGradient if the value or any gradient entry is non-finite.
    """
    value = value_fn()
    if not torch.isfinite(value):
        raise NonFiniteGradient("<objective value>")
    entries = parameter_entries(model)
    grads = torch.autograd.grad(
        value, [p for _, p in entries], allow_unused=True
    )
    parts = []
    for (name, p), g in zip(entries, grads):
        if g is None:
            parts.append(np.zeros(p.numel()))
            continue
        if not torch.isfinite(g).all():
            raise NonFiniteGradient(name)
        parts.append(g.detach().numpy().ravel())
    return float(value.detach()), np.concatenate(parts)


def fd_gradient(
    value_fn: Callable[[], torch.Tensor],
    model: nn.Module,
    indices: np.ndarray | None = None,
    step_scale: float = 1e-5,
) -> np.ndarray:
    """Central-difference gradient, one entry per requested flat index.

    Steps are h = step_scale * (1 + |theta_i|). value_fn must be
    deterministic (stochastic objectives should re-seed internally) so both
    sides of each difference see the same randomness. The model is restored
    afterwards.
    """
    theta = parameter_vector(model)
    if indices is None:
        indices = np.arange(theta.shape[0])
    out = np.zeros(len(indices))
    try:
        with torch.no_grad():
            for j, i in enumerate(indices):
                h = step_scale * (1.0 + abs(theta[i]))
                bumped = theta.copy()
                bumped[i] = theta[i] + h
                load_parameter_vector(model, bumped)
                up = float(value_fn())
                bumped[i] = theta[i] - h
                load_parameter_vector(model, bumped)
                down = float(value_fn())
                out[j] = (up - down) / (2.0 * h)
    finally:
        load_parameter_vector(model, theta)
    return out


@dataclass
class FDCheckResult:
    max_rel_error: float
    worst_name: str
    analytic: np.ndarray
    numeric: np.ndarray
    indices: np.ndarray

    def __str__(self) -> str:
        return f"max rel error {self.max_rel_error:.3e} at {self.worst_name}"


def fd_check(
    value_fn: Callable[[], torch.Tensor],
    model: nn.Module,
    indices: np.ndarray | None = None,
    step_scale: float = 1e-5,
    floor: float = 1e-3,
    analytic: np.ndarray | None = None,
) -> FDCheckResult:
    """Compare analytic and central-difference gradients entrywise.

    Relative error is |a - f| / max(|a|, |f|, floor); the floor turns the
    comparison absolute for near-zero partials, where the difference
    quotient itself carries roundoff of about 1e-9. `analytic` overrides the
    reverse-mode gradient (used to confirm the check catches corrupt
    adjoints).
    """
    if analytic is None:
        _, analytic = gradient(value_fn, model)
    if indices is None:
        indices = np.arange(analytic.shape[0])
    indices = np.asarray(indices)
    a = analytic[indices]
    f = fd_gradient(value_fn, model, indices, step_scale)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(f)), floor)
    rel = np.abs(a - f) / denom
    worst = int(np.argmax(rel)) if len(rel) else 0
    return FDCheckResult(
        max_rel_error=float(rel[worst]) if len(rel) else 0.0,
        worst_name=scalar_name(model, int(indices[worst])) if len(rel) else "<none>",
        analytic=a,
        numeric=f,
        indices=indices,
    )
