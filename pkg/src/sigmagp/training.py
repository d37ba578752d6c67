"""Training loop: hand-rolled Adam over flat parameter vectors, k-means
inducing initialization, and a warmup/restart scheme.

All randomness (restart inits, minibatch shuffles, sampled objectives) is
derived from TrainConfig.seed, so a run is reproducible bit for bit on a
fixed thread count.

Restarts: every restart trains through the warmup epochs; the one with the
best (largest) average data term in its last warmup epoch continues through
the remaining epochs. A NonFiniteGradient during warmup removes that restart
from the pool; during the final phase it aborts the run.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field, replace

import numpy as np
import torch

from .autodiff import NonFiniteGradient, gradient, load_parameter_vector, parameter_vector
from .kernels import DTYPE
from .models import ModelConfig, SparseGPModel, layer_location
from .objectives import batch_objective


@dataclass
class TrainConfig:
    epochs: int = 100
    batch_size: int = 256
    learning_rate: float = 0.01
    beta_reg: float = 1.0
    num_restarts: int = 3
    warmup_epochs: int | None = None  # None: ceil(0.1 * epochs)
    seed: int = 0
    decay_milestones: tuple[float, ...] = (0.5, 0.75)
    decay_factor: float = 0.1
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8

    def __post_init__(self):
        if self.epochs < 0 or self.batch_size < 1 or self.num_restarts < 1:
            raise ValueError("epochs >= 0, batch_size >= 1, num_restarts >= 1")
        if self.learning_rate <= 0 or self.decay_factor <= 0:
            raise ValueError("learning_rate and decay_factor must be positive")

    @property
    def resolved_warmup(self) -> int:
        if self.warmup_epochs is not None:
            return min(self.warmup_epochs, self.epochs)
        return min(math.ceil(0.1 * self.epochs), self.epochs)

    def to_dict(self) -> dict:
        d = dict(self.__dict__)
        d["decay_milestones"] = list(self.decay_milestones)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        if "decay_milestones" in d:
            d["decay_milestones"] = tuple(d["decay_milestones"])
        return cls(**d)


def learning_rate_at(config: TrainConfig, epoch: int) -> float:
    """Step decay: the rate drops by decay_factor at each milestone
    (fraction of total epochs, floor to an epoch index)."""
    lr = config.learning_rate
    for frac in config.decay_milestones:
        if epoch >= int(frac * config.epochs):
            lr *= config.decay_factor
    return lr


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0

    @classmethod
    def zeros(cls, n: int) -> "AdamState":
        return cls(m=np.zeros(n), v=np.zeros(n), t=0)


def adam_step(
    theta: np.ndarray,
    grad: np.ndarray,
    state: AdamState,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> np.ndarray:
    """One descent step on the given gradient; mutates state, returns the
    new parameter vector."""
    state.t += 1
    state.m = beta1 * state.m + (1.0 - beta1) * grad
    state.v = beta2 * state.v + (1.0 - beta2) * grad * grad
    m_hat = state.m / (1.0 - beta1**state.t)
    v_hat = state.v / (1.0 - beta2**state.t)
    return theta - lr * m_hat / (np.sqrt(v_hat) + eps)


def kmeans_init(x: np.ndarray, k: int, seed: int) -> np.ndarray:
    """k-means++ seeding plus 10 Lloyd iterations, on a subsample of at most
    min(10 * k * d, 20000) points. Empty clusters keep their centroid."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise ValueError("kmeans_init expects (N, d) inputs")
    n, d = x.shape
    if n < k:
        raise ValueError(f"need at least {k} points to place {k} centroids, got {n}")
    rng = np.random.default_rng(seed)
    cap = min(n, max(k, 10 * k * d), 20000)
    sub = x[rng.choice(n, size=cap, replace=False)] if cap < n else x

    centers = np.empty((k, d))
    centers[0] = sub[rng.integers(len(sub))]
    d2 = ((sub - centers[0]) ** 2).sum(axis=1)
    for j in range(1, k):
        total = d2.sum()
        if total > 0:
            probs = d2 / total
            idx = rng.choice(len(sub), p=probs)
        else:
            idx = rng.integers(len(sub))
        centers[j] = sub[idx]
        d2 = np.minimum(d2, ((sub - centers[j]) ** 2).sum(axis=1))

    for _ in range(10):
        dists = ((sub[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
        assign = dists.argmin(axis=1)
        for j in range(k):
            members = sub[assign == j]
            if len(members):
                centers[j] = members.mean(axis=0)
    return centers


def init_model(
    config: ModelConfig, x: torch.Tensor, y: torch.Tensor, seed: int
) -> SparseGPModel:
    """Build a model with data-dependent initialization: first-layer
    inducing locations from k-means on the inputs, deeper layers at the
    image of those centroids under the initial mean functions, the output
    constant mean at the target mean."""
    y2 = y if y.dim() == 2 else y.unsqueeze(-1)
    model = SparseGPModel(
        config,
        generator=torch.Generator().manual_seed(seed),
        y_mean=y2.mean(dim=0),
    )
    z = torch.as_tensor(
        kmeans_init(x.detach().numpy(), config.num_inducing, seed), dtype=DTYPE
    )
    with torch.no_grad():
        feats = None
        for units in model.hidden_layers:
            loc = z if feats is None else layer_location(config.topology, feats, z)
            for unit in units:
                unit.inducing.copy_(loc)
            # with m = 0 at init, the posterior mean is the mean function
            feats = torch.stack(
                [u.mean_fn(u.mean_view(loc)) for u in units], dim=-1
            )
        out_in = z if feats is None else feats
        for unit in model.out_layer:
            unit.inducing.copy_(out_in)
    return model


@dataclass
class _RestartState:
    index: int
    model: SparseGPModel
    theta: np.ndarray
    adam: AdamState
    shuffler: np.random.Generator
    sampler: torch.Generator
    last_data_term: float = -math.inf
    failed: bool = False


@dataclass
class TrainResult:
    model: SparseGPModel
    history: list[dict] = field(default_factory=list)
    selected_restart: int = 0


def _run_epoch(
    state: _RestartState,
    x: torch.Tensor,
    y: torch.Tensor,
    config: TrainConfig,
    epoch: int,
    phase: str,
) -> dict:
    n = x.shape[0]
    lr = learning_rate_at(config, epoch)
    perm = state.shuffler.permutation(n)
    start_time = time.perf_counter()
    totals = []
    data_terms = []
    kl_terms = []
    for lo in range(0, n, config.batch_size):
        idx = torch.as_tensor(perm[lo : lo + config.batch_size])
        value = batch_objective(
            state.model, x[idx], y[idx], n, config.beta_reg, generator=state.sampler
        )
        _, grad = gradient(lambda: value.total, state.model)
        state.theta = adam_step(
            state.theta,
            -grad,
            state.adam,
            lr,
            config.adam_beta1,
            config.adam_beta2,
            config.adam_eps,
        )
        if not np.isfinite(state.theta).all():
            raise NonFiniteGradient("<parameter vector>")
        load_parameter_vector(state.model, state.theta)
        total, data, kl = value.detached()
        totals.append(total)
        data_terms.append(data)
        kl_terms.append(kl)
    record = {
        "restart": state.index,
        "epoch": epoch,
        "phase": phase,
        "objective": float(np.mean(totals)),
        "data_term": float(np.mean(data_terms)),
        "kl_term": float(np.mean(kl_terms)),
        "lr": lr,
        "seconds": time.perf_counter() - start_time,
    }
    state.last_data_term = record["data_term"]
    return record


def train(
    model_config: ModelConfig,
    x: torch.Tensor,
    y: torch.Tensor,
    config: TrainConfig,
    log_fn=None,
    post_init=None,
) -> TrainResult:
    """Fit a model. post_init(model, restart_index), when given, runs right
    after each restart's initialization (test hook)."""
    x = torch.as_tensor(x, dtype=DTYPE)
    y = torch.as_tensor(y, dtype=DTYPE)
    if y.dim() == 1:
        y = y.unsqueeze(-1)
    if x.shape[0] != y.shape[0]:
        raise ValueError("x and y disagree on the number of points")

    def build(r: int) -> _RestartState:
        init_seed = config.seed * 10007 + r
        model = init_model(model_config, x, y, init_seed)
        if post_init is not None:
            post_init(model, r)
        theta = parameter_vector(model)
        return _RestartState(
            index=r,
            model=model,
            theta=theta,
            adam=AdamState.zeros(len(theta)),
            shuffler=np.random.default_rng([config.seed, r, 17]),
            sampler=torch.Generator().manual_seed(init_seed + 999983),
        )

    history: list[dict] = []

    def log(record: dict):
        history.append(record)
        if log_fn is not None:
            log_fn(record)

    if config.epochs == 0:
        return TrainResult(model=build(0).model, history=[], selected_restart=0)

    warmup = config.resolved_warmup
    restarts = [build(r) for r in range(config.num_restarts)]
    for state in restarts:
        try:
            for epoch in range(warmup):
                log(_run_epoch(state, x, y, config, epoch, "warmup"))
        except NonFiniteGradient as err:
            state.failed = True
            log(
                {
                    "restart": state.index,
                    "phase": "aborted",
                    "reason": str(err),
                }
            )

    alive = [s for s in restarts if not s.failed]
    if not alive:
        raise RuntimeError("all restarts aborted with non-finite gradients")
    winner = max(alive, key=lambda s: s.last_data_term)
    for epoch in range(warmup, config.epochs):
        log(_run_epoch(winner, x, y, config, epoch, "final"))
    return TrainResult(
        model=winner.model, history=history, selected_restart=winner.index
    )
