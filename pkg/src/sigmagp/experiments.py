"""Reusable experiment drivers: objective/gradient timing and the
heteroscedastic synthetic comparison across model families.

Both are consumed by the CLI, the scripts, and the acceptance suite, so the
configurations live here rather than being retyped.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np
import torch

from .autodiff import gradient
from .data import DataSplit, SplitSpec, make_synthetic, split
from .kernels import DTYPE
from .metrics import EvalReport, evaluate
from .models import ModelConfig
from .objectives import batch_objective
from .training import TrainConfig, init_model, train


def time_objective_gradient(
    config: ModelConfig,
    batch_size: int,
    repeats: int = 3,
    seed: int = 0,
) -> float:
    """Median wall time of one objective evaluation plus gradient, seconds.

    Runs on synthetic standard-normal inputs with a freshly initialized
    model; one untimed warmup call precedes the timed repeats.
    """
    generator = torch.Generator().manual_seed(seed)
    x = torch.randn(max(batch_size * 2, config.num_inducing + 1), config.input_dim,
                    dtype=DTYPE, generator=generator)
    y = torch.randn(x.shape[0], config.output_dim, dtype=DTYPE, generator=generator)
    model = init_model(config, x, y, seed)
    xb, yb = x[:batch_size], y[:batch_size]
    sampler = torch.Generator().manual_seed(seed + 1)

    def run() -> float:
        value = batch_objective(model, xb, yb, x.shape[0], 1.0, generator=sampler)
        gradient(lambda: value.total, model)
        return float(value.total.detach())

    run()
    times = []
    for _ in range(repeats):
        start = time.perf_counter()
        run()
        times.append(time.perf_counter() - start)
    return float(np.median(times))


@dataclass
class FamilyRun:
    family: str
    seed: int
    report: EvalReport
    seconds: float


def benchmark_configs(
    input_dim: int, num_inducing: int = 32, hidden_width: int = 3
) -> dict[str, ModelConfig]:
    """The family lineup used for the synthetic ordering experiment."""
    base = dict(input_dim=input_dim, num_inducing=num_inducing)
    deep = dict(base, num_layers=2, hidden_width=hidden_width)
    return {
        "svgp": ModelConfig(family="svgp", **base),
        "ppgpr": ModelConfig(family="ppgpr", **base),
        "dgp": ModelConfig(family="dgp", mc_samples=10, **deep),
        "dspp": ModelConfig(family="dspp", quadrature="qr3", num_sites=10, **deep),
        "bpdgp": ModelConfig(family="bpdgp", mc_samples=32, **deep),
    }


BETA_DEFAULTS = {
    "svgp": 1.0,
    "ppgpr": 0.05,
    "dgp": 0.3,
    "dspp": 0.05,
    "bpdgp": 0.05,
}


def fit_and_score(
    family: str,
    data: DataSplit,
    seed: int,
    epochs: int = 40,
    batch_size: int = 256,
    num_inducing: int = 32,
    beta_reg: float | None = None,
    num_restarts: int = 1,
) -> FamilyRun:
    if data.y_train.shape[1] != 1:
        raise ValueError("the family comparison runs on univariate targets")
    config = benchmark_configs(data.x_train.shape[1], num_inducing)[family]
    train_config = TrainConfig(
        epochs=epochs,
        batch_size=batch_size,
        beta_reg=BETA_DEFAULTS[family] if beta_reg is None else beta_reg,
        num_restarts=num_restarts,
        seed=seed,
    )
    start = time.perf_counter()
    result = train(config, data.x_train, data.y_train, train_config)
    report = evaluate(
        result.model,
        data.x_test,
        data.y_test_raw,
        data.y_shift,
        data.y_scale,
        num_samples=32,
        generator=torch.Generator().manual_seed(seed + 71),
    )
    return FamilyRun(
        family=family,
        seed=seed,
        report=report,
        seconds=time.perf_counter() - start,
    )


def heteroscedastic_comparison(
    families: tuple[str, ...] = ("svgp", "dgp", "dspp", "bpdgp"),
    seeds: tuple[int, ...] = (0, 1, 2),
    n_points: int = 2000,
    epochs: int = 40,
    log=None,
) -> dict[str, list[FamilyRun]]:
    """Train each family on the 1-D heteroscedastic sine data and score the
    test split; one run per seed (the seed drives data, split, and
    training)."""
    runs: dict[str, list[FamilyRun]] = {f: [] for f in families}
    for seed in seeds:
        dataset = make_synthetic("sin", n=n_points, seed=seed)
        data = split(dataset, SplitSpec(seed=seed))
        for family in families:
            run = fit_and_score(family, data, seed, epochs=epochs)
            runs[family].append(run)
            if log is not None:
                log(
                    f"{family:6s} seed {seed}: test nll {run.report.nll:+.4f} "
                    f"rmse {run.report.rmse:.4f} crps {run.report.crps:.4f} "
                    f"({run.seconds:.1f}s)"
                )
    return runs


def mean_nll(runs: list[FamilyRun]) -> float:
    return float(np.mean([r.report.nll for r in runs]))
