"""Datasets: CSV ingestion, standardization, seeded splits, synthetic
generators.

Splits follow a fixed 15:3:2 train:test:validation ratio (in twentieths,
remainders going to train). Standardization statistics come from the train
rows only; input or output columns whose train-split sample std falls below
1e-10 are dropped everywhere before standardizing.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np
import torch

from .kernels import DTYPE


class ParseError(ValueError):
    """A CSV cell failed to parse; carries 1-based line and column."""

    def __init__(self, message: str, line: int, column: int):
        super().__init__(f"{message} (line {line}, column {column})")
        self.line = line
        self.column = column


class NonFiniteValue(ParseError):
    """A CSV cell parsed to NaN or infinity."""


class EmptyDataset(ValueError):
    """No usable rows (or an empty split where rows are required)."""


@dataclass
class Dataset:
    x: np.ndarray  # (N, d_x)
    y: np.ndarray  # (N, d_y)
    x_names: list[str]
    y_names: list[str]
    name: str = "dataset"

    def __post_init__(self):
        if self.x.ndim != 2 or self.y.ndim != 2:
            raise ValueError("x and y must be 2-D arrays")
        if self.x.shape[0] != self.y.shape[0]:
            raise ValueError("x and y disagree on the number of rows")

    @property
    def n(self) -> int:
        return self.x.shape[0]


def ingest_csv(path: str, target_columns: list[str], name: str | None = None) -> Dataset:
    """Read a headed CSV into a Dataset; target_columns become y, the rest x.

    Every cell must parse to a finite float. Errors carry the 1-based line
    number (header is line 1) and column index.
    """
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise EmptyDataset(f"{path} has no header row") from None
        header = [h.strip() for h in header]
        missing = [c for c in target_columns if c not in header]
        if missing:
            raise ValueError(
                f"target columns {missing} not in header {header}"
            )
        rows: list[list[float]] = []
        for line_no, row in enumerate(reader, start=2):
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            if len(row) != len(header):
                raise ParseError(
                    f"expected {len(header)} fields, got {len(row)}", line_no, 1
                )
            values = []
            for col, cell in enumerate(row, start=1):
                try:
                    v = float(cell)
                except ValueError:
                    raise ParseError(f"cannot parse {cell!r} as a number", line_no, col) from None
                if not math.isfinite(v):
                    raise NonFiniteValue(f"non-finite value {cell!r}", line_no, col)
                values.append(v)
            rows.append(values)
    if not rows:
        raise EmptyDataset(f"{path} has no data rows")
    data = np.asarray(rows, dtype=np.float64)
    y_idx = [header.index(c) for c in target_columns]
    x_idx = [i for i in range(len(header)) if i not in y_idx]
    if not x_idx:
        raise ValueError("no input columns left after removing targets")
    return Dataset(
        x=data[:, x_idx],
        y=data[:, y_idx],
        x_names=[header[i] for i in x_idx],
        y_names=[header[i] for i in y_idx],
        name=name or path,
    )


@dataclass
class Standardizer:
    """Per-column affine maps fit on train rows. Scales are sample stds
    (ddof=1); columns this small should have been dropped upstream, so
    scales are never zero."""

    x_shift: np.ndarray
    x_scale: np.ndarray
    y_shift: np.ndarray
    y_scale: np.ndarray

    @classmethod
    def fit(cls, x: np.ndarray, y: np.ndarray) -> "Standardizer":
        if x.shape[0] < 2:
            raise EmptyDataset("need at least 2 train rows to standardize")
        return cls(
            x_shift=x.mean(axis=0),
            x_scale=x.std(axis=0, ddof=1),
            y_shift=y.mean(axis=0),
            y_scale=y.std(axis=0, ddof=1),
        )

    def transform_x(self, x: np.ndarray) -> np.ndarray:
        return (x - self.x_shift) / self.x_scale

    def transform_y(self, y: np.ndarray) -> np.ndarray:
        return (y - self.y_shift) / self.y_scale

    def inverse_y(self, y: np.ndarray) -> np.ndarray:
        return y * self.y_scale + self.y_shift

    def to_dict(self) -> dict:
        return {
            "x_shift": self.x_shift.tolist(),
            "x_scale": self.x_scale.tolist(),
            "y_shift": self.y_shift.tolist(),
            "y_scale": self.y_scale.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Standardizer":
        return cls(**{k: np.asarray(v, dtype=np.float64) for k, v in d.items()})


@dataclass
class SplitSpec:
    seed: int = 0
    index: int = 0

    def to_dict(self) -> dict:
        return {"seed": self.seed, "index": self.index}

    @classmethod
    def from_dict(cls, d: dict) -> "SplitSpec":
        return cls(**d)


@dataclass
class DataSplit:
    """Standardized tensors ready for training and raw-scale eval targets."""

    x_train: torch.Tensor
    y_train: torch.Tensor
    x_val: torch.Tensor
    y_val_raw: torch.Tensor
    x_test: torch.Tensor
    y_test_raw: torch.Tensor
    standardizer: Standardizer
    x_names: list[str] = field(default_factory=list)
    y_names: list[str] = field(default_factory=list)
    dropped: list[str] = field(default_factory=list)

    @property
    def y_shift(self) -> torch.Tensor:
        return torch.as_tensor(self.standardizer.y_shift, dtype=DTYPE)

    @property
    def y_scale(self) -> torch.Tensor:
        return torch.as_tensor(self.standardizer.y_scale, dtype=DTYPE)


def split_indices(n: int, spec: SplitSpec) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(train, test, val) row indices of the seeded 15:3:2 split of n rows."""
    n_test = (3 * n) // 20
    n_val = (2 * n) // 20
    n_train = n - n_test - n_val
    if n_train < 2 or n_test < 1:
        raise EmptyDataset(f"{n} rows is too few for a 15:3:2 split")
    perm = np.random.default_rng([spec.seed, spec.index]).permutation(n)
    return (
        perm[:n_train],
        perm[n_train : n_train + n_test],
        perm[n_train + n_test :],
    )


def split(dataset: Dataset, spec: SplitSpec) -> DataSplit:
    """Shuffle with a seeded permutation, carve 15:3:2, drop near-constant
    columns by train stats, standardize both spaces with train stats."""
    tr, te, va = split_indices(dataset.n, spec)

    keep_x = dataset.x[tr].std(axis=0, ddof=1) >= 1e-10
    keep_y = dataset.y[tr].std(axis=0, ddof=1) >= 1e-10
    if not keep_x.any():
        raise EmptyDataset("all input columns are constant on the train split")
    if not keep_y.any():
        raise EmptyDataset("all output columns are constant on the train split")
    dropped = [nm for nm, k in zip(dataset.x_names, keep_x) if not k]
    dropped += [nm for nm, k in zip(dataset.y_names, keep_y) if not k]
    x = dataset.x[:, keep_x]
    y = dataset.y[:, keep_y]

    standardizer = Standardizer.fit(x[tr], y[tr])

    def tensor(a: np.ndarray) -> torch.Tensor:
        return torch.as_tensor(a, dtype=DTYPE)

    return DataSplit(
        x_train=tensor(standardizer.transform_x(x[tr])),
        y_train=tensor(standardizer.transform_y(y[tr])),
        x_val=tensor(standardizer.transform_x(x[va])),
        y_val_raw=tensor(y[va]),
        x_test=tensor(standardizer.transform_x(x[te])),
        y_test_raw=tensor(y[te]),
        standardizer=standardizer,
        x_names=[nm for nm, k in zip(dataset.x_names, keep_x) if k],
        y_names=[nm for nm, k in zip(dataset.y_names, keep_y) if k],
        dropped=dropped,
    )


def synthetic_sin(n: int = 2000, seed: int = 0) -> Dataset:
    """1-D regression with input-dependent noise: the mean is a sine plus a
    slow trend, the noise std swings between 0.05 and about 0.75."""
    rng = np.random.default_rng(seed)
    x = rng.uniform(-3.0, 3.0, size=(n, 1))
    f = np.sin(2.0 * x[:, 0]) + 0.25 * x[:, 0]
    noise_std = 0.05 + 0.7 * (0.5 * (1.0 + np.sin(3.0 * x[:, 0] + 0.5)))
    y = f + noise_std * rng.standard_normal(n)
    return Dataset(
        x=x, y=y[:, None], x_names=["x0"], y_names=["y"], name="sin"
    )


def synthetic_blobs(n: int = 2000, seed: int = 0) -> Dataset:
    """Two input clusters with very different noise levels."""
    rng = np.random.default_rng(seed)
    side = rng.integers(0, 2, size=n)
    x = rng.normal(loc=np.where(side == 0, -2.0, 2.0), scale=0.5, size=n)
    f = np.tanh(x)
    noise_std = np.where(side == 0, 0.05, 0.5)
    y = f + noise_std * rng.standard_normal(n)
    return Dataset(
        x=x[:, None], y=y[:, None], x_names=["x0"], y_names=["y"], name="blobs"
    )


def synthetic_linear(
    n: int = 2000, seed: int = 0, input_dim: int = 3, output_dim: int = 2
) -> Dataset:
    """Multivariate linear-Gaussian data for multi-output smoke tests."""
    rng = np.random.default_rng(seed)
    w = rng.normal(size=(input_dim, output_dim))
    b = rng.normal(size=output_dim)
    x = rng.normal(size=(n, input_dim))
    noise = 0.1 + 0.4 * rng.random(output_dim)
    y = x @ w + b + noise * rng.standard_normal((n, output_dim))
    return Dataset(
        x=x,
        y=y,
        x_names=[f"x{i}" for i in range(input_dim)],
        y_names=[f"y{j}" for j in range(output_dim)],
        name="linear",
    )


SYNTHETIC_DATASETS = {
    "sin": synthetic_sin,
    "blobs": synthetic_blobs,
    "linear": synthetic_linear,
}


def make_synthetic(name: str, n: int, seed: int) -> Dataset:
    if name not in SYNTHETIC_DATASETS:
        raise ValueError(
            f"unknown synthetic dataset {name!r}; choose from {sorted(SYNTHETIC_DATASETS)}"
        )
    return SYNTHETIC_DATASETS[name](n=n, seed=seed)
