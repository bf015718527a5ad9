#!/usr/bin/env python3
"""Build MNIST IDX files from the npm `mnist` data package.

This environment reaches package registries only, so the digits are pulled
from the npm package `mnist` (10,000 real 28x28 MNIST images stored as
JSON, pixel values already scaled to [0, 1]).  The images are split
8000/2000 (stratified, seeded) into train/test and written as the standard
big-endian IDX quartet:

    train-images-idx3-ubyte  train-labels-idx1-ubyte
    t10k-images-idx3-ubyte   t10k-labels-idx1-ubyte

Usage: python scripts/fetch_mnist.py [--out DATA_DIR] [--seed N]
"""

import argparse
import json
import shutil
import subprocess
import sys
import tarfile
import tempfile
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

from shakeout.core import RngStream  # noqa: E402
from shakeout.data import write_idx_images, write_idx_labels  # noqa: E402

TRAIN_FRACTION = 0.8


def obtain_digit_json(workdir: Path) -> Path:
    """npm-pack the `mnist` package and return the digits directory."""
    subprocess.run(["npm", "pack", "mnist@1.1.0"], cwd=workdir, check=True,
                   capture_output=True)
    tgz = next(workdir.glob("mnist-*.tgz"))
    with tarfile.open(tgz) as tar:
        tar.extractall(workdir)
    return workdir / "package" / "src" / "digits"


def build(out_dir: Path, seed: int) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    workdir = Path(tempfile.mkdtemp(prefix="mnist-npm-"))
    try:
        digits_dir = obtain_digit_json(workdir)
        images, labels = [], []
        for digit in range(10):
            flat = np.array(json.loads((digits_dir / f"{digit}.json").read_text())["data"])
            imgs = flat.reshape(-1, 28, 28)
            images.append(imgs)
            labels.append(np.full(imgs.shape[0], digit, dtype=np.uint8))
        images = np.concatenate(images)
        labels = np.concatenate(labels)
    finally:
        shutil.rmtree(workdir, ignore_errors=True)

    pixels = np.clip(np.rint(images * 255.0), 0, 255).astype(np.uint8)

    # stratified train/test split
    gen = RngStream(seed).child(7).generator()
    train_idx, test_idx = [], []
    for digit in range(10):
        idx = np.flatnonzero(labels == digit)
        gen.shuffle(idx)
        cut = int(round(TRAIN_FRACTION * idx.size))
        train_idx.append(idx[:cut])
        test_idx.append(idx[cut:])
    train_idx = np.concatenate(train_idx)
    test_idx = np.concatenate(test_idx)
    gen.shuffle(train_idx)
    gen.shuffle(test_idx)

    write_idx_images(out_dir / "train-images-idx3-ubyte", pixels[train_idx])
    write_idx_labels(out_dir / "train-labels-idx1-ubyte", labels[train_idx])
    write_idx_images(out_dir / "t10k-images-idx3-ubyte", pixels[test_idx])
    write_idx_labels(out_dir / "t10k-labels-idx1-ubyte", labels[test_idx])
    print(f"wrote {train_idx.size} train / {test_idx.size} test images to {out_dir}")


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", type=Path,
                        default=Path(__file__).resolve().parents[1] / "data")
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()
    build(args.out, args.seed)
    return 0


if __name__ == "__main__":
    sys.exit(main())
