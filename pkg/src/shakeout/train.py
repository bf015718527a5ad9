"""Mini-batch SGD with momentum and the desk-scale experiment runners."""

import json
import struct
from dataclasses import dataclass, field

import numpy as np

from .core import RngStream
from .data import Dataset, load_mnist_idx, subsample
from .layers import (
    Conv2D,
    Dense,
    Flatten,
    MaxPool2D,
    Mode,
    ReLU,
    Sigmoid,
    softmax_xent,
    squared_error,
)
from .noise import NoiseKind, ShakeoutParams

# stream-id namespaces so weight init, shuffling and per-layer noise never collide
_NS_INIT = 1
_NS_SHUFFLE = 2
_NS_NOISE = 3

CHECKPOINT_MAGIC = b"SKOCKPT1"


class TrainingDivergedError(RuntimeError):
    def __init__(self, epoch: int):
        super().__init__(f"training loss became non-finite at epoch {epoch}")
        self.epoch = epoch


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 0.1
    momentum: float = 0.9
    batch_size: int = 64
    epochs: int = 30
    seed: int = 0
    lr_decay_epochs: tuple = ()
    lr_decay_factor: float = 0.1

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch size must be >= 1")
        if list(self.lr_decay_epochs) != sorted(set(self.lr_decay_epochs)):
            raise ValueError("lr decay epochs must be strictly increasing")

    def lr_at(self, epoch: int) -> float:
        lr = self.lr
        for e in self.lr_decay_epochs:
            if epoch >= e:
                lr *= self.lr_decay_factor
        return lr


def init_model(model: list, stream: RngStream) -> None:
    for li, layer in enumerate(model):
        if hasattr(layer, "init_weights"):
            layer.init_weights(stream.child(_NS_INIT, li))


def forward_model(model: list, x, mode: Mode, stream: RngStream | None = None,
                  iteration: int = 0):
    out = x
    for li, layer in enumerate(model):
        layer_stream = None
        if stream is not None and mode is Mode.TRAIN:
            layer_stream = stream.child(_NS_NOISE, li, iteration)
        out = layer.forward(out, mode, layer_stream)
    return out


def backward_model(model: list, grad) -> None:
    for layer in reversed(model):
        grad = layer.backward(grad)


def _model_inputs(model: list, ds: Dataset):
    return ds.maps if isinstance(model[0], Conv2D) else ds.flat


def predict(model: list, x, batch_size: int = 512) -> np.ndarray:
    outs = []
    for start in range(0, x.shape[0], batch_size):
        outs.append(forward_model(model, x[start : start + batch_size], Mode.EVAL))
    return np.concatenate(outs)


def classification_error(model: list, ds: Dataset) -> float:
    logits = predict(model, _model_inputs(model, ds))
    return float(np.mean(np.argmax(logits, axis=1) != ds.labels))


def reconstruction_loss(model: list, ds: Dataset) -> float:
    x = _model_inputs(model, ds)
    pred = predict(model, x)
    loss, _ = squared_error(pred, x)
    return loss


def sgd_train(model: list, config: TrainConfig, train: Dataset,
              val: Dataset | None = None, loss: str = "xent",
              log_path=None) -> list:
    """Shuffled mini-batch SGD with momentum; returns the per-epoch log.

    Fresh switches are drawn for every sample at every iteration (each
    layer derives its stream from (layer, iteration)).  loss is "xent" for
    classifiers (targets = ds.labels) or "mse" for autoencoders (targets =
    the inputs themselves).
    """
    root = RngStream(config.seed)
    x_all = _model_inputs(model, train)
    n = len(train)
    velocity = {}
    log = []
    iteration = 0
    log_fh = open(log_path, "w") if log_path else None
    try:
        for epoch in range(config.epochs):
            lr = config.lr_at(epoch)
            perm = root.child(_NS_SHUFFLE, epoch).generator().permutation(n)
            epoch_loss = 0.0
            batches = 0
            for start in range(0, n, config.batch_size):
                idx = perm[start : start + config.batch_size]
                xb = x_all[idx]
                out = forward_model(model, xb, Mode.TRAIN, root, iteration)
                if loss == "xent":
                    batch_loss, grad = softmax_xent(out, train.labels[idx])
                else:
                    batch_loss, grad = squared_error(out, xb)
                if not np.isfinite(batch_loss):
                    raise TrainingDivergedError(epoch)
                backward_model(model, grad)
                for li, layer in enumerate(model):
                    for name, value, grad_attr in layer.parameters():
                        g = getattr(layer, grad_attr)
                        key = (li, name)
                        v = velocity.get(key)
                        v = -lr * g if v is None else config.momentum * v - lr * g
                        velocity[key] = v
                        value += v
                epoch_loss += batch_loss
                batches += 1
                iteration += 1
            record = {"epoch": epoch, "train_loss": epoch_loss / batches, "lr": lr}
            if val is not None:
                if loss == "xent":
                    record["val_error"] = classification_error(model, val)
                else:
                    record["val_error"] = reconstruction_loss(model, val)
            log.append(record)
            if log_fh:
                log_fh.write(json.dumps(record) + "\n")
    finally:
        if log_fh:
            log_fh.close()
    return log


# --- architectures -----------------------------------------------------------

def build_fc_classifier(noise: ShakeoutParams, hidden: int = 4096,
                        n_in: int = 784, n_out: int = 10) -> list:
    """One big hidden layer; noise sits on the hidden units."""
    return [
        Dense(n_in, hidden),
        ReLU(),
        Dense(hidden, n_out, noise=noise),
    ]


def build_lenet_variant(noise: ShakeoutParams, n_out: int = 10) -> list:
    """Two conv+pool stages and two FC layers; noise on the FC hidden units."""
    return [
        Conv2D(1, 20, 5, 5),
        MaxPool2D(2, 2),
        ReLU(),
        Conv2D(20, 50, 5, 5),
        MaxPool2D(2, 2),
        ReLU(),
        Flatten(),
        Dense(800, 500),
        ReLU(),
        Dense(500, n_out, noise=noise),
    ]


def build_autoencoder(noise: ShakeoutParams, hidden: int = 256,
                      n_in: int = 784) -> list:
    """Single sigmoid hidden layer; noise applied on the input pixels."""
    return [
        Dense(n_in, hidden, noise=noise),
        Sigmoid(),
        Dense(hidden, n_in),
        Sigmoid(),
    ]


def build_model(arch: str, noise: ShakeoutParams, hidden: int | None = None) -> list:
    if arch == "fc4096":
        return build_fc_classifier(noise, hidden=hidden or 4096)
    if arch == "lenet-variant":
        return build_lenet_variant(noise)
    if arch == "autoencoder":
        return build_autoencoder(noise, hidden=hidden or 256)
    raise ValueError(f"unknown architecture {arch!r}")


# --- checkpoints --------------------------------------------------------------

def _layer_descriptor(layer) -> dict:
    if isinstance(layer, Dense):
        return {"type": "dense", "n_in": layer.n_in, "n_out": layer.n_out,
                "noise": {"tau": layer.noise.tau, "c": layer.noise.c,
                          "kind": layer.noise.kind.value},
                "arrays": [{"name": "W", "shape": list(layer.W.shape)},
                           {"name": "b", "shape": list(layer.b.shape)}]}
    if isinstance(layer, Conv2D):
        return {"type": "conv", "in_maps": layer.in_maps, "out_maps": layer.out_maps,
                "kh": layer.kh, "kw": layer.kw, "stride": layer.stride,
                "pad": layer.pad,
                "noise": {"tau": layer.noise.tau, "c": layer.noise.c,
                          "kind": layer.noise.kind.value},
                "arrays": [{"name": "W", "shape": list(layer.W.shape)},
                           {"name": "b", "shape": list(layer.b.shape)}]}
    if isinstance(layer, MaxPool2D):
        return {"type": "maxpool", "size": layer.size, "stride": layer.stride,
                "arrays": []}
    if isinstance(layer, ReLU):
        return {"type": "relu", "arrays": []}
    if isinstance(layer, Sigmoid):
        return {"type": "sigmoid", "arrays": []}
    if isinstance(layer, Flatten):
        return {"type": "flatten", "arrays": []}
    raise TypeError(f"cannot serialize layer {type(layer).__name__}")


def _layer_from_descriptor(desc: dict):
    kind = desc["type"]
    if kind == "dense":
        noise = ShakeoutParams(**desc["noise"])
        return Dense(desc["n_in"], desc["n_out"], noise=noise)
    if kind == "conv":
        noise = ShakeoutParams(**desc["noise"])
        return Conv2D(desc["in_maps"], desc["out_maps"], desc["kh"], desc["kw"],
                      stride=desc["stride"], pad=desc["pad"], noise=noise)
    if kind == "maxpool":
        return MaxPool2D(desc["size"], desc["stride"])
    if kind == "relu":
        return ReLU()
    if kind == "sigmoid":
        return Sigmoid()
    if kind == "flatten":
        return Flatten()
    raise ValueError(f"unknown layer type {kind!r} in checkpoint")


class CheckpointError(ValueError):
    pass


def save_checkpoint(path, model: list) -> None:
    """Binary container: magic, JSON layer metadata, float64-LE payloads."""
    descriptors = [_layer_descriptor(layer) for layer in model]
    meta = json.dumps({"layers": descriptors}).encode()
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", len(meta)))
        fh.write(meta)
        for layer in model:
            for name, value, _ in layer.parameters():
                fh.write(np.ascontiguousarray(value, dtype="<f8").tobytes())


def load_checkpoint(path) -> list:
    with open(path, "rb") as fh:
        magic = fh.read(8)
        if magic != CHECKPOINT_MAGIC:
            raise CheckpointError(f"bad checkpoint header {magic!r}")
        (meta_len,) = struct.unpack("<I", fh.read(4))
        meta = json.loads(fh.read(meta_len))
        model = []
        for desc in meta["layers"]:
            layer = _layer_from_descriptor(desc)
            for arr in desc["arrays"]:
                shape = tuple(arr["shape"])
                count = int(np.prod(shape)) if shape else 1
                buf = fh.read(count * 8)
                if len(buf) != count * 8:
                    raise CheckpointError("truncated checkpoint payload")
                setattr(layer, arr["name"],
                        np.frombuffer(buf, dtype="<f8").reshape(shape).copy())
            model.append(layer)
    return model


# --- experiment runners --------------------------------------------------------

def load_data_dir(data_dir) -> tuple[Dataset, Dataset]:
    """Load the standard IDX file quartet from a directory."""
    from pathlib import Path

    d = Path(data_dir)
    train = load_mnist_idx(d / "train-images-idx3-ubyte",
                           d / "train-labels-idx1-ubyte", split="train")
    test = load_mnist_idx(d / "t10k-images-idx3-ubyte",
                          d / "t10k-labels-idx1-ubyte", split="test")
    return train, test


@dataclass
class AutoencoderResult:
    model: list
    first_layer_weights: np.ndarray
    probe_accuracy: float
    log: list = field(default_factory=list)


def _train_linear_probe(hidden_train, labels_train, hidden_test, labels_test,
                        seed: int, epochs: int = 30, lr: float = 0.5) -> float:
    """Linear softmax probe on frozen hidden activations."""
    n_classes = int(labels_train.max()) + 1
    probe = Dense(hidden_train.shape[1], n_classes)
    probe.init_weights(RngStream(seed).child(_NS_INIT, 0))
    gen = RngStream(seed).child(_NS_SHUFFLE).generator()
    velocity = None
    for _ in range(epochs):
        perm = gen.permutation(hidden_train.shape[0])
        for start in range(0, len(perm), 64):
            idx = perm[start : start + 64]
            out = probe.forward(hidden_train[idx], Mode.TRAIN)
            _, grad = softmax_xent(out, labels_train[idx])
            probe.backward(grad)
            if velocity is None:
                velocity = [-lr * probe.grad_W, -lr * probe.grad_b]
            else:
                velocity[0] = 0.9 * velocity[0] - lr * probe.grad_W
                velocity[1] = 0.9 * velocity[1] - lr * probe.grad_b
            probe.W += velocity[0]
            probe.b += velocity[1]
    logits = probe.forward(hidden_test, Mode.EVAL)
    return float(np.mean(np.argmax(logits, axis=1) == labels_test))


def run_autoencoder_experiment(noise: ShakeoutParams, train: Dataset,
                               test: Dataset, config: TrainConfig,
                               hidden: int = 64) -> AutoencoderResult:
    """Train the reconstruction autoencoder and probe its hidden code.

    The probe (a linear softmax on the hidden activations) stands in for
    an external classifier on the learned features.
    """
    model = build_autoencoder(noise, hidden=hidden)
    init_model(model, RngStream(config.seed))
    log = sgd_train(model, config, train, loss="mse")
    encoder = model[:2]
    h_train = predict(encoder, train.flat)
    h_test = predict(encoder, test.flat)
    acc = _train_linear_probe(h_train, train.labels, h_test, test.labels,
                              seed=config.seed)
    return AutoencoderResult(model=model, first_layer_weights=model[0].W.copy(),
                             probe_accuracy=acc, log=log)


@dataclass
class ClassifierResult:
    model: list
    test_error: float  # percent
    log: list


def run_classifier_experiment(arch: str, noise: ShakeoutParams, size: int,
                              train_pool: Dataset, val: Dataset, test: Dataset,
                              config: TrainConfig) -> ClassifierResult:
    """Train one classifier on a stratified subset and report test error (%).

    Hyper-parameter selection, when wanted, must go through
    :func:`select_noise_params` which only ever sees the validation split.
    """
    subset = subsample(train_pool, size, RngStream(config.seed).child(_NS_SHUFFLE, 999))
    model = build_model(arch, noise)
    init_model(model, RngStream(config.seed))
    log = sgd_train(model, config, subset, val, loss="xent")
    return ClassifierResult(model=model,
                            test_error=100.0 * classification_error(model, test),
                            log=log)


def default_c_grid(n_train: int) -> list:
    """Candidate c values around sqrt(1/N), the recommended magnitude."""
    base = float(np.sqrt(1.0 / n_train))
    return [m * base for m in (0.1, 0.3, 1.0, 3.0)]


def select_noise_params(arch: str, size: int, train_pool: Dataset, val: Dataset,
                        config: TrainConfig, candidates: list) -> ShakeoutParams:
    """Pick the candidate with the lowest validation error.

    Refuses to run against anything tagged as a test split: model selection
    must never read test data.
    """
    if val.split == "test":
        raise ValueError("hyper-parameter selection must not read the test split")
    best = None
    best_err = None
    for cand in candidates:
        subset = subsample(train_pool, size,
                           RngStream(config.seed).child(_NS_SHUFFLE, 999))
        model = build_model(arch, cand)
        init_model(model, RngStream(config.seed))
        sgd_train(model, config, subset, loss="xent")
        err = classification_error(model, val)
        if best_err is None or err < best_err:
            best, best_err = cand, err
    return best
