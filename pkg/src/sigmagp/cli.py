"""Command-line interface.

Subcommands:

    train            fit a model on a CSV or synthetic dataset, write a
                     checkpoint and a JSONL training log
    eval             score a checkpoint on its dataset's test split and
                     optionally append to a results CSV
    grad-check       finite-difference audit of a freshly initialized model
    dump-quadrature  export a dspp checkpoint's mixture components as CSV
    bench            time objective+gradient evaluations over size grids

Config files are JSON: {"schema_version": 1, "model": {...}, "train": {...}}
with keys matching ModelConfig and TrainConfig fields. Flags override file
values. Exit codes: 0 success, 1 runtime failure, 2 usage, 3 failed check.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys

import torch

from .autodiff import fd_check
from .checkpoint import load_checkpoint, save_checkpoint
from .data import (
    Dataset,
    SplitSpec,
    Standardizer,
    ingest_csv,
    make_synthetic,
    split,
    split_indices,
)
from .experiments import time_objective_gradient
from .kernels import DTYPE
from .metrics import evaluate
from .models import ModelConfig
from .objectives import batch_objective
from .training import TrainConfig, init_model, train

RESULT_COLUMNS = [
    "dataset", "family", "split_index", "seed",
    "n_test", "nll", "rmse", "mrmse", "crps",
]


def _add_dataset_args(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--data", help="CSV file with a header row")
    parser.add_argument("--targets", help="comma-separated target column names (CSV input)")
    parser.add_argument("--synthetic", help="synthetic dataset name (sin, blobs, linear)")
    parser.add_argument("--n", type=int, default=2000, help="synthetic sample count")
    parser.add_argument("--data-seed", type=int, default=0, help="synthetic generator seed")


def _load_dataset(args) -> Dataset:
    if bool(args.data) == bool(args.synthetic):
        raise ValueError("pass exactly one of --data or --synthetic")
    if args.data:
        if not args.targets:
            raise ValueError("--targets is required with --data")
        targets = [t.strip() for t in args.targets.split(",") if t.strip()]
        return ingest_csv(args.data, targets)
    return make_synthetic(args.synthetic, n=args.n, seed=args.data_seed)


def _load_config_file(path: str | None) -> tuple[dict, dict]:
    if path is None:
        return {}, {}
    with open(path) as fh:
        cfg = json.load(fh)
    if cfg.get("schema_version") != 1:
        raise ValueError("config file must declare \"schema_version\": 1")
    return dict(cfg.get("model", {})), dict(cfg.get("train", {}))


_MODEL_OVERRIDES = [
    ("family", "family"),
    ("layers", "num_layers"),
    ("width", "hidden_width"),
    ("inducing", "num_inducing"),
    ("quadrature", "quadrature"),
    ("sites", "num_sites"),
    ("mc_samples", "mc_samples"),
    ("topology", "topology"),
    ("smoothness", "smoothness"),
    ("s_repr", "s_repr"),
]

_TRAIN_OVERRIDES = [
    ("epochs", "epochs"),
    ("batch_size", "batch_size"),
    ("learning_rate", "learning_rate"),
    ("beta_reg", "beta_reg"),
    ("restarts", "num_restarts"),
    ("warmup", "warmup_epochs"),
    ("seed", "seed"),
]


def cmd_train(args) -> int:
    torch.set_num_threads(args.threads)
    dataset = _load_dataset(args)
    spec = SplitSpec(seed=args.split_seed, index=args.split_index)
    data = split(dataset, spec)

    model_dict, train_dict = _load_config_file(args.config)
    for arg_name, key in _MODEL_OVERRIDES:
        value = getattr(args, arg_name)
        if value is not None:
            model_dict[key] = value
    for arg_name, key in _TRAIN_OVERRIDES:
        value = getattr(args, arg_name)
        if value is not None:
            train_dict[key] = value
    model_dict.setdefault("family", "dspp")
    model_dict["input_dim"] = data.x_train.shape[1]
    model_dict["output_dim"] = data.y_train.shape[1]
    if data.y_train.shape[1] > 1:
        model_dict["lmc"] = True
    if model_dict["family"] == "dspp" and "num_layers" not in model_dict:
        model_dict["num_layers"] = 2
    model_config = ModelConfig.from_dict(model_dict)
    train_config = TrainConfig.from_dict(train_dict)

    os.makedirs(args.out, exist_ok=True)
    log_path = os.path.join(args.out, "train_log.jsonl")
    ckpt_path = os.path.join(args.out, "model.ckpt")
    with open(log_path, "w") as log_fh:
        result = train(
            model_config,
            data.x_train,
            data.y_train,
            train_config,
            log_fn=lambda rec: print(json.dumps(rec), file=log_fh),
        )
    save_checkpoint(
        ckpt_path,
        result.model,
        extra={
            "dataset": dataset.name,
            "split": spec.to_dict(),
            "standardizer": data.standardizer.to_dict(),
            "train": train_config.to_dict(),
            "selected_restart": result.selected_restart,
            "x_names": data.x_names,
            "y_names": data.y_names,
            "targets": dataset.y_names,
        },
    )
    summary = {
        "checkpoint": ckpt_path,
        "log": log_path,
        "selected_restart": result.selected_restart,
        "epochs": train_config.epochs,
    }
    if result.history:
        finals = [r for r in result.history if r.get("phase") == "final"]
        last = finals[-1] if finals else result.history[-1]
        summary["final_objective"] = last.get("objective")
    print(json.dumps(summary))
    return 0


def _append_result(path: str, row: dict) -> None:
    """Append one row keyed by (dataset, family, split_index, seed); a
    duplicate key is an error, existing rows are never rewritten."""
    key = (str(row["dataset"]), str(row["family"]), str(row["split_index"]), str(row["seed"]))
    exists = os.path.exists(path)
    if exists:
        with open(path, newline="") as fh:
            for existing in csv.DictReader(fh):
                existing_key = (
                    existing.get("dataset", ""),
                    existing.get("family", ""),
                    existing.get("split_index", ""),
                    existing.get("seed", ""),
                )
                if existing_key == key:
                    raise ValueError(
                        f"results file already has a row for {key}; refusing to overwrite"
                    )
    with open(path, "a", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=RESULT_COLUMNS)
        if not exists:
            writer.writeheader()
        writer.writerow({k: row[k] for k in RESULT_COLUMNS})


def cmd_eval(args) -> int:
    torch.set_num_threads(args.threads)
    model, meta = load_checkpoint(args.checkpoint)
    dataset = _load_dataset(args)
    spec = SplitSpec.from_dict(meta["split"])
    standardizer = Standardizer.from_dict(meta["standardizer"])
    _, te, _ = split_indices(dataset.n, spec)
    x_idx = [dataset.x_names.index(nm) for nm in meta["x_names"]]
    y_idx = [dataset.y_names.index(nm) for nm in meta["y_names"]]
    x_test = torch.as_tensor(
        standardizer.transform_x(dataset.x[te][:, x_idx]), dtype=DTYPE
    )
    y_test = torch.as_tensor(dataset.y[te][:, y_idx], dtype=DTYPE)
    report = evaluate(
        model,
        x_test,
        y_test,
        torch.as_tensor(standardizer.y_shift, dtype=DTYPE),
        torch.as_tensor(standardizer.y_scale, dtype=DTYPE),
        num_samples=args.mc_samples,
        generator=torch.Generator().manual_seed(args.seed),
    )
    row = {
        "dataset": meta.get("dataset", dataset.name),
        "family": model.config.family,
        "split_index": spec.index,
        "seed": meta.get("train", {}).get("seed", 0),
        **report.to_dict(),
    }
    if args.results:
        _append_result(args.results, row)
    print(json.dumps(row))
    return 0


def cmd_grad_check(args) -> int:
    torch.set_num_threads(args.threads)
    if args.layers is None:
        args.layers = 1 if args.family in ("svgp", "ppgpr") else 2
    config = ModelConfig(
        family=args.family,
        input_dim=args.input_dim,
        num_layers=args.layers,
        hidden_width=args.width,
        num_inducing=args.inducing,
        quadrature=args.quadrature,
        num_sites=args.sites,
        mc_samples=args.mc_samples if args.mc_samples is not None else 4,
        topology=args.topology,
        s_repr=args.s_repr or "",
    )
    generator = torch.Generator().manual_seed(args.seed)
    n_total = 2 * args.batch
    x = torch.randn(n_total, config.input_dim, dtype=DTYPE, generator=generator)
    y = torch.randn(n_total, 1, dtype=DTYPE, generator=generator)
    model = init_model(config, x, y, args.seed)
    xb, yb = x[: args.batch], y[: args.batch]

    def value():
        sampler = torch.Generator().manual_seed(args.seed + 123)
        return batch_objective(model, xb, yb, n_total, 1.0, generator=sampler).total

    result = fd_check(value, model)
    print(
        json.dumps(
            {
                "family": config.family,
                "parameters": int(result.analytic.shape[0]),
                "max_rel_error": result.max_rel_error,
                "worst": result.worst_name,
                "tolerance": args.tol,
            }
        )
    )
    return 0 if result.max_rel_error <= args.tol else 3


def cmd_dump_quadrature(args) -> int:
    model, _ = load_checkpoint(args.checkpoint)
    if model.config.family != "dspp":
        raise ValueError("dump-quadrature requires a dspp checkpoint")
    out = open(args.out, "w", newline="") if args.out else sys.stdout
    try:
        writer = csv.writer(out)
        width = model.config.hidden_width
        writer.writerow(["layer", "kind", "component", "weight"] + [f"xi_{w}" for w in range(width)])
        for layer, rule in enumerate(model.rules):
            log_w, offsets = rule.components()
            weights = log_w.exp().detach().numpy()
            nodes = offsets.detach().numpy()
            for c in range(len(weights)):
                writer.writerow(
                    [layer, rule.kind, c, f"{weights[c]:.17g}"]
                    + [f"{v:.17g}" for v in nodes[c]]
                )
    finally:
        if args.out:
            out.close()
    return 0


def cmd_bench(args) -> int:
    torch.set_num_threads(args.threads)
    m_grid = [int(v) for v in args.m_grid.split(",") if v.strip()]
    s_grid = [int(v) for v in args.s_grid.split(",") if v.strip()] if args.s_grid else [args.sites]
    rows = []
    for m in m_grid:
        for s in s_grid:
            config = ModelConfig(
                family=args.family,
                input_dim=args.input_dim,
                num_layers=2 if args.family in ("dgp", "dspp", "bpdgp") else 1,
                hidden_width=args.width,
                num_inducing=m,
                quadrature=args.quadrature,
                num_sites=s,
                mc_samples=max(s, 1),
            )
            seconds = time_objective_gradient(
                config, batch_size=args.batch, repeats=args.repeats, seed=args.seed
            )
            rows.append({"family": args.family, "m": m, "s": s, "batch": args.batch,
                         "seconds": seconds})
            print(json.dumps(rows[-1]))
    if args.out:
        with open(args.out, "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=["family", "m", "s", "batch", "seconds"])
            writer.writeheader()
            writer.writerows(rows)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sigmagp",
        description="Sparse GP regression with learned quadrature over deep layers",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="fit a model and write a checkpoint")
    _add_dataset_args(p_train)
    p_train.add_argument("--config", help="JSON config file")
    p_train.add_argument("--out", required=True, help="output directory")
    p_train.add_argument("--split-seed", type=int, default=0)
    p_train.add_argument("--split-index", type=int, default=0)
    p_train.add_argument("--threads", type=int, default=1)
    p_train.add_argument("--family", choices=["svgp", "ppgpr", "dgp", "dspp", "bpdgp"])
    p_train.add_argument("--layers", type=int)
    p_train.add_argument("--width", type=int)
    p_train.add_argument("--inducing", type=int)
    p_train.add_argument("--quadrature", choices=["gh", "qr1", "qr2", "qr3"])
    p_train.add_argument("--sites", type=int)
    p_train.add_argument("--mc-samples", dest="mc_samples", type=int)
    p_train.add_argument("--topology", type=int)
    p_train.add_argument("--smoothness", type=float)
    p_train.add_argument("--s-repr", dest="s_repr", choices=["diag", "chol"])
    p_train.add_argument("--epochs", type=int)
    p_train.add_argument("--batch-size", dest="batch_size", type=int)
    p_train.add_argument("--learning-rate", dest="learning_rate", type=float)
    p_train.add_argument("--beta-reg", dest="beta_reg", type=float)
    p_train.add_argument("--restarts", type=int)
    p_train.add_argument("--warmup", type=int)
    p_train.add_argument("--seed", type=int)
    p_train.set_defaults(func=cmd_train)

    p_eval = sub.add_parser("eval", help="score a checkpoint on the test split")
    _add_dataset_args(p_eval)
    p_eval.add_argument("--checkpoint", required=True)
    p_eval.add_argument("--results", help="append-only results CSV")
    p_eval.add_argument("--mc-samples", dest="mc_samples", type=int, default=32)
    p_eval.add_argument("--seed", type=int, default=0)
    p_eval.add_argument("--threads", type=int, default=1)
    p_eval.set_defaults(func=cmd_eval)

    p_grad = sub.add_parser("grad-check", help="finite-difference gradient audit")
    p_grad.add_argument("--family", default="dspp",
                        choices=["svgp", "ppgpr", "dgp", "dspp", "bpdgp"])
    p_grad.add_argument("--layers", type=int, help="default: 1 shallow, 2 deep")
    p_grad.add_argument("--width", type=int, default=2)
    p_grad.add_argument("--inducing", type=int, default=4)
    p_grad.add_argument("--input-dim", dest="input_dim", type=int, default=2)
    p_grad.add_argument("--quadrature", default="qr3",
                        choices=["gh", "qr1", "qr2", "qr3"])
    p_grad.add_argument("--sites", type=int, default=3)
    p_grad.add_argument("--mc-samples", dest="mc_samples", type=int)
    p_grad.add_argument("--topology", type=int, default=1)
    p_grad.add_argument("--s-repr", dest="s_repr", choices=["diag", "chol"])
    p_grad.add_argument("--batch", type=int, default=6)
    p_grad.add_argument("--tol", type=float, default=1e-4)
    p_grad.add_argument("--seed", type=int, default=0)
    p_grad.add_argument("--threads", type=int, default=1)
    p_grad.set_defaults(func=cmd_grad_check)

    p_dump = sub.add_parser("dump-quadrature", help="export dspp mixture components")
    p_dump.add_argument("--checkpoint", required=True)
    p_dump.add_argument("--out", help="CSV path (default stdout)")
    p_dump.set_defaults(func=cmd_dump_quadrature)

    p_bench = sub.add_parser("bench", help="time objective+gradient evaluations")
    p_bench.add_argument("--family", default="dspp",
                         choices=["svgp", "ppgpr", "dgp", "dspp", "bpdgp"])
    p_bench.add_argument("--m-grid", dest="m_grid", default="64,128")
    p_bench.add_argument("--s-grid", dest="s_grid", default="")
    p_bench.add_argument("--sites", type=int, default=8)
    p_bench.add_argument("--quadrature", default="qr3",
                         choices=["gh", "qr1", "qr2", "qr3"])
    p_bench.add_argument("--width", type=int, default=3)
    p_bench.add_argument("--input-dim", dest="input_dim", type=int, default=2)
    p_bench.add_argument("--batch", type=int, default=256)
    p_bench.add_argument("--repeats", type=int, default=3)
    p_bench.add_argument("--seed", type=int, default=0)
    p_bench.add_argument("--threads", type=int, default=1)
    p_bench.add_argument("--out", help="CSV path")
    p_bench.set_defaults(func=cmd_bench)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, RuntimeError, OSError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
