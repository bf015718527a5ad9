"""Dataset container and big-endian IDX file handling."""

import struct
from dataclasses import dataclass

import numpy as np

from .core import RngStream

IMAGE_MAGIC = 0x00000803
LABEL_MAGIC = 0x00000801


class IdxFormatError(ValueError):
    """Bad magic number or malformed IDX header."""


class IdxLengthError(ValueError):
    """IDX payload shorter than the header promises."""


@dataclass(frozen=True)
class Dataset:
    """Images in [0, 1] with integer class labels and a split tag."""

    images: np.ndarray  # (n, rows, cols), float64 in [0, 1]
    labels: np.ndarray  # (n,), integer class indices
    split: str = "train"

    def __len__(self) -> int:
        return self.images.shape[0]

    @property
    def flat(self) -> np.ndarray:
        """Images as (n, rows*cols)."""
        return self.images.reshape(len(self), -1)

    @property
    def maps(self) -> np.ndarray:
        """Images as (n, 1, rows, cols) single-channel feature maps."""
        n, h, w = self.images.shape
        return self.images.reshape(n, 1, h, w)

    def take(self, indices, split: str | None = None) -> "Dataset":
        return Dataset(
            images=self.images[indices],
            labels=self.labels[indices],
            split=split if split is not None else self.split,
        )


def _read_exact(fh, n, path):
    buf = fh.read(n)
    if len(buf) != n:
        raise IdxLengthError(f"{path}: expected {n} more bytes, got {len(buf)}")
    return buf


def read_idx_images(path) -> np.ndarray:
    with open(path, "rb") as fh:
        magic, count, rows, cols = struct.unpack(">IIII", _read_exact(fh, 16, path))
        if magic != IMAGE_MAGIC:
            raise IdxFormatError(f"{path}: magic {magic:#010x}, expected {IMAGE_MAGIC:#010x}")
        raw = _read_exact(fh, count * rows * cols, path)
    return np.frombuffer(raw, dtype=np.uint8).reshape(count, rows, cols)


def read_idx_labels(path) -> np.ndarray:
    with open(path, "rb") as fh:
        magic, count = struct.unpack(">II", _read_exact(fh, 8, path))
        if magic != LABEL_MAGIC:
            raise IdxFormatError(f"{path}: magic {magic:#010x}, expected {LABEL_MAGIC:#010x}")
        raw = _read_exact(fh, count, path)
    return np.frombuffer(raw, dtype=np.uint8).copy()


def load_mnist_idx(images_path, labels_path, split: str = "train") -> Dataset:
    """Load an IDX image/label pair; pixels scaled by 1/255."""
    images = read_idx_images(images_path)
    labels = read_idx_labels(labels_path)
    if images.shape[0] != labels.shape[0]:
        raise IdxLengthError(
            f"image count {images.shape[0]} != label count {labels.shape[0]}"
        )
    return Dataset(images=images.astype(np.float64) / 255.0,
                   labels=labels.astype(np.int64), split=split)


def write_idx_images(path, images: np.ndarray) -> None:
    images = np.asarray(images, dtype=np.uint8)
    n, rows, cols = images.shape
    with open(path, "wb") as fh:
        fh.write(struct.pack(">IIII", IMAGE_MAGIC, n, rows, cols))
        fh.write(images.tobytes())


def write_idx_labels(path, labels: np.ndarray) -> None:
    labels = np.asarray(labels, dtype=np.uint8)
    with open(path, "wb") as fh:
        fh.write(struct.pack(">II", LABEL_MAGIC, labels.shape[0]))
        fh.write(labels.tobytes())


def subsample(ds: Dataset, size: int, stream: RngStream) -> Dataset:
    """Class-stratified deterministic sample of the dataset.

    Per-class quotas are proportional to the class frequencies with the
    remainder going to the largest fractional parts, so a balanced source
    yields size/n_classes per class give or take one.
    """
    n = len(ds)
    if size > n:
        raise ValueError(f"requested {size} samples from a dataset of {n}")
    gen = stream.generator()
    classes, counts = np.unique(ds.labels, return_counts=True)
    exact = size * counts / n
    quotas = np.floor(exact).astype(int)
    remainder = size - quotas.sum()
    if remainder > 0:
        order = np.argsort(-(exact - quotas), kind="stable")
        quotas[order[:remainder]] += 1
    picked = []
    for cls, quota in zip(classes, quotas):
        idx = np.flatnonzero(ds.labels == cls)
        picked.append(gen.choice(idx, size=quota, replace=False))
    indices = np.concatenate(picked)
    gen.shuffle(indices)
    return ds.take(indices)


def split_dataset(ds: Dataset, first: int, stream: RngStream,
                  splits=("train", "val")) -> tuple[Dataset, Dataset]:
    """Shuffle and split into two tagged pieces of sizes (first, rest)."""
    perm = stream.generator().permutation(len(ds))
    a = ds.take(perm[:first], split=splits[0])
    b = ds.take(perm[first:], split=splits[1])
    return a, b
