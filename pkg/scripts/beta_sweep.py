"""Sweep the KL weight for one family on the heteroscedastic 1-D benchmark.

The regularizer weight trades data fit against the pull toward the prior;
parametric objectives usually want it well below 1. Prints mean test
NLL/CRPS per setting, averaged over seeds.

    python3 scripts/beta_sweep.py --family dspp --betas 0.01,0.05,0.2,1.0
"""

import argparse
import csv
import sys

import numpy as np
import torch

from sigmagp.data import SplitSpec, make_synthetic, split
from sigmagp.experiments import fit_and_score


def parse_args(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument(
        "--family", default="dspp", choices=["svgp", "ppgpr", "dgp", "dspp", "bpdgp"]
    )
    parser.add_argument(
        "--betas", default="0.01,0.05,0.2,1.0", help="comma-separated KL weights"
    )
    parser.add_argument("--seeds", default="0,1,2", help="comma-separated seeds")
    parser.add_argument("--n", type=int, default=2000, help="synthetic sample count")
    parser.add_argument("--epochs", type=int, default=40)
    parser.add_argument("--threads", type=int, default=1)
    parser.add_argument("--out", help="optional CSV path for the per-run rows")
    return parser.parse_args(argv)


def main(argv=None) -> int:
    args = parse_args(argv)
    torch.set_num_threads(args.threads)
    betas = [float(b) for b in args.betas.split(",") if b.strip()]
    seeds = [int(s) for s in args.seeds.split(",") if s.strip()]
    splits = {}
    for seed in seeds:
        dataset = make_synthetic("sin", n=args.n, seed=seed)
        splits[seed] = split(dataset, SplitSpec(seed=seed))

    rows = []
    for beta in betas:
        runs = []
        for seed in seeds:
            run = fit_and_score(
                args.family, splits[seed], seed, epochs=args.epochs, beta_reg=beta
            )
            runs.append(run)
            rows.append((beta, run))
            print(
                f"beta {beta:<6g} seed {seed}: test nll {run.report.nll:+.4f} "
                f"crps {run.report.crps:.4f} ({run.seconds:.1f}s)",
                flush=True,
            )
        nlls = [r.report.nll for r in runs]
        crps = [r.report.crps for r in runs]
        print(
            f"beta {beta:<6g} mean: nll {np.mean(nlls):+.4f} "
            f"crps {np.mean(crps):.4f}"
        )
    if args.out:
        with open(args.out, "w", newline="") as handle:
            writer = csv.writer(handle)
            writer.writerow(["family", "beta", "seed", "nll", "rmse", "crps", "seconds"])
            for beta, run in rows:
                writer.writerow(
                    [
                        args.family,
                        beta,
                        run.seed,
                        f"{run.report.nll:.6f}",
                        f"{run.report.rmse:.6f}",
                        f"{run.report.crps:.6f}",
                        f"{run.seconds:.2f}",
                    ]
                )
        print(f"\nwrote {args.out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
