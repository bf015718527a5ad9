#!/usr/bin/env python3
"""Train the 64-unit autoencoder under each noise scheme and compare weights.

Trains on 2000 MNIST images with input-layer noise (none / dropout /
shakeout at two amplitudes) and reports, per scheme: the fraction of
first-layer weights inside the |w| < 1e-3 band, the fraction of input
pixels whose importance falls below a quarter of the maximum, and the
accuracy of a linear probe on the learned features.

Usage: python scripts/compare_autoencoders.py [--seed N] [--epochs N]
       [--data-dir DIR]
"""

import argparse
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

from shakeout.analysis import grouping_fraction, sparsity_fraction  # noqa: E402
from shakeout.core import RngStream  # noqa: E402
from shakeout.data import subsample  # noqa: E402
from shakeout.noise import NoiseKind, ShakeoutParams  # noqa: E402
from shakeout.train import (  # noqa: E402
    TrainConfig,
    load_data_dir,
    run_autoencoder_experiment,
)

_NS_SHUFFLE = 2


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--data-dir", type=Path,
                        default=Path(__file__).resolve().parents[1] / "data")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--epochs", type=int, default=100)
    parser.add_argument("--size", type=int, default=2000)
    parser.add_argument("--hidden", type=int, default=64)
    args = parser.parse_args()

    settings = {
        "std": ShakeoutParams(kind=NoiseKind.NONE),
        "dropout": ShakeoutParams(tau=0.5, kind=NoiseKind.DROPOUT),
        "shakeout-c1": ShakeoutParams(tau=0.5, c=1.0),
        "shakeout-c10": ShakeoutParams(tau=0.5, c=10.0),
    }
    train, test = load_data_dir(args.data_dir)
    subset = subsample(train, args.size, RngStream(0).child(_NS_SHUFFLE, 999))
    cfg = TrainConfig(lr=0.05, epochs=args.epochs, seed=args.seed,
                      batch_size=64,
                      lr_decay_epochs=(int(args.epochs * 0.66),
                                       int(args.epochs * 0.87)),
                      lr_decay_factor=0.1)

    print(f"{'scheme':14s} {'near-zero frac':>14s} {'grouping':>9s} "
          f"{'probe acc':>10s}")
    for label, noise in settings.items():
        result = run_autoencoder_experiment(noise, subset, test, cfg,
                                            hidden=args.hidden)
        W = result.first_layer_weights
        print(f"{label:14s} {sparsity_fraction(W, 1e-3):14.4f} "
              f"{grouping_fraction(W):9.3f} {result.probe_accuracy:10.3f}",
              flush=True)
    return 0


if __name__ == "__main__":
    sys.exit(main())
