#!/usr/bin/env python3
"""Train the 4096-unit MNIST classifier under each noise scheme.

For every seed, trains three models (no noise / dropout / shakeout) on a
stratified 500-image subset, reports per-seed and mean test errors, and
prints the relative accuracy loss when the noise-bearing output layer is
pruned to 90% and 96% zeros.

Usage: python scripts/compare_classifiers.py [--seeds N] [--epochs N]
       [--data-dir DIR] [--out DIR]
"""

import argparse
import json
import sys
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

from shakeout.analysis import ral_curve  # noqa: E402
from shakeout.noise import NoiseKind, ShakeoutParams  # noqa: E402
from shakeout.train import (  # noqa: E402
    TrainConfig,
    load_data_dir,
    run_classifier_experiment,
    save_checkpoint,
)


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--data-dir", type=Path,
                        default=Path(__file__).resolve().parents[1] / "data")
    parser.add_argument("--out", type=Path, default=None,
                        help="optional directory for checkpoints and results")
    parser.add_argument("--seeds", type=int, default=5)
    parser.add_argument("--epochs", type=int, default=100)
    parser.add_argument("--size", type=int, default=500)
    parser.add_argument("--tau", type=float, default=0.5)
    parser.add_argument("--c", type=float, default=0.045,
                        help="shakeout amplitude; default ~ sqrt(1/500)")
    args = parser.parse_args()

    settings = {
        "std": ShakeoutParams(kind=NoiseKind.NONE),
        "dropout": ShakeoutParams(tau=args.tau, kind=NoiseKind.DROPOUT),
        "shakeout": ShakeoutParams(tau=args.tau, c=args.c),
    }
    train, test = load_data_dir(args.data_dir)
    errors = {label: [] for label in settings}
    ral = {label: {0.90: [], 0.96: []} for label in settings}
    for seed in range(args.seeds):
        for label, noise in settings.items():
            cfg = TrainConfig(lr=0.1, epochs=args.epochs, seed=seed,
                              batch_size=64,
                              lr_decay_epochs=(int(args.epochs * 0.7),
                                               int(args.epochs * 0.9)),
                              lr_decay_factor=0.1)
            res = run_classifier_experiment("fc4096", noise, args.size,
                                            train, test, test, cfg)
            errors[label].append(res.test_error)
            report = ral_curve(res.model, [2], [0.0, 0.90, 0.96], test)
            for m, value in zip(report.ratios[1:], report.ral[1:]):
                ral[label][m].append(value)
            print(f"seed {seed} {label:8s}  test error {res.test_error:5.2f}%",
                  flush=True)
            if args.out is not None:
                args.out.mkdir(parents=True, exist_ok=True)
                save_checkpoint(args.out / f"fc_{label}_seed{seed}.ckpt",
                                res.model)

    print("\nmean test error (%)  /  mean R.A.L at 90% and 96% pruning")
    for label in settings:
        print(f"  {label:8s} {np.mean(errors[label]):5.2f}   "
              f"{np.mean(ral[label][0.90]):.4f}  {np.mean(ral[label][0.96]):.4f}")
    if args.out is not None:
        payload = {"errors": errors,
                   "ral": {k: {str(m): v for m, v in d.items()}
                           for k, d in ral.items()}}
        (args.out / "results.json").write_text(json.dumps(payload, indent=2))
    return 0


if __name__ == "__main__":
    sys.exit(main())
