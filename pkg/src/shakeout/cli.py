"""Command-line entry point: certification, training and analysis runs.

Exit codes: 0 success, 1 certification/ordering failure, 2 input error,
3 training divergence.
"""

import argparse
import hashlib
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import glm
from .analysis import (
    grouping_fraction,
    histogram_csv,
    ral_curve,
    sparsity_fraction,
    unit_importance,
    weight_histogram,
)
from .core import RngStream
from .data import split_dataset, subsample
from .glm import GLMSpec, check_propositions, shakeout_reg_exact, shakeout_reg_mc
from .noise import NoiseKind, ShakeoutParams
from .train import (
    CheckpointError,
    Dense,
    TrainConfig,
    TrainingDivergedError,
    load_checkpoint,
    load_data_dir,
    run_autoencoder_experiment,
    run_classifier_experiment,
    save_checkpoint,
)

EXIT_OK = 0
EXIT_FAILED_CHECK = 1
EXIT_INPUT_ERROR = 2
EXIT_DIVERGED = 3


class RunManifest:
    """Records a run's command, config, seed and emitted artifacts.

    The manifest file is written before any artifact and rewritten with
    checksums once the run completes.
    """

    def __init__(self, out_dir: Path, command: str, config: dict, seed: int):
        self.out_dir = Path(out_dir)
        self.out_dir.mkdir(parents=True, exist_ok=True)
        self.command = command
        self.config = config
        self.seed = seed
        self.artifacts = []
        self._write()

    def _write(self):
        payload = {
            "command": self.command,
            "config": self.config,
            "seed": self.seed,
            "output_dir": str(self.out_dir),
            "artifacts": self.artifacts,
        }
        with open(self.out_dir / "manifest.json", "w") as fh:
            json.dump(payload, fh, indent=2, sort_keys=True)
            fh.write("\n")

    def emit_text(self, name: str, text: str) -> Path:
        path = self.out_dir / name
        path.write_text(text)
        self.record(path)
        return path

    def record(self, path: Path) -> None:
        digest = hashlib.sha256(Path(path).read_bytes()).hexdigest()
        self.artifacts.append({"file": Path(path).name, "sha256": digest})

    def finalize(self) -> None:
        self._write()


def _json_text(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


# --- certify-glm -------------------------------------------------------------

def cmd_certify_glm(args) -> int:
    if args.trials < 1 or args.draws < 1:
        print("error: --trials and --draws must be positive", file=sys.stderr)
        return EXIT_INPUT_ERROR
    try:
        spec = GLMSpec.by_name(args.spec)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT_ERROR

    manifest = RunManifest(args.out, "certify-glm",
                           {k: v for k, v in vars(args).items() if k != "func"}
                           | {"out": str(args.out)}, args.seed)
    report = check_propositions(spec, args.trials, RngStream(args.seed).child(10))

    mc_failures = []
    gen = RngStream(args.seed).child(11).generator()
    n_mc = min(args.trials, 20)
    for t in range(n_mc):
        p = int(gen.integers(1, 9))
        w = gen.uniform(-2.0, 2.0, p)
        x = gen.uniform(-2.0, 2.0, p)
        params = ShakeoutParams(tau=float(gen.choice([0.25, 0.5, 0.75])),
                                c=float(gen.choice([0.0, 0.5, 1.0])))
        exact = shakeout_reg_exact(spec, w, x, params).pi
        mean, se = shakeout_reg_mc(spec, w, x, params, args.draws,
                                   RngStream(args.seed).child(12, t))
        if abs(mean - exact) > 4.0 * max(se, 1e-12):
            mc_failures.append({"trial": t, "exact": exact, "mc": mean, "se": se,
                                "w": w.tolist(), "x": x.tolist(),
                                "tau": params.tau, "c": params.c})

    payload = {
        "spec": args.spec,
        "trials": args.trials,
        "draws": args.draws,
        "proposition_violations": report.violations,
        "mc_instances": n_mc,
        "mc_failures": mc_failures,
        "ok": report.ok and not mc_failures,
    }
    manifest.emit_text("certify_report.json", _json_text(payload))
    manifest.finalize()
    if not payload["ok"]:
        print("certification FAILED; see certify_report.json", file=sys.stderr)
        return EXIT_FAILED_CHECK
    print(f"certify-glm ok: {args.trials} proposition trials, "
          f"{n_mc} Monte-Carlo instances")
    return EXIT_OK


# --- train --------------------------------------------------------------------

def _noise_from_args(args) -> ShakeoutParams:
    kind = NoiseKind(args.noise)
    if kind in (NoiseKind.DROPOUT, NoiseKind.GAUSSIAN_DROPOUT, NoiseKind.NONE) \
            and args.c not in (0.0, None):
        print(f"warning: --c is ignored for noise kind {kind.value}", file=sys.stderr)
    if kind is NoiseKind.NONE:
        return ShakeoutParams(kind=kind)
    return ShakeoutParams(tau=args.tau, c=args.c if kind is NoiseKind.SHAKEOUT else 0.0,
                          kind=kind)


def cmd_train(args) -> int:
    data_dir = args.data_dir or os.environ.get("SKO_DATA_DIR")
    if not data_dir or not Path(data_dir).is_dir():
        print("error: no dataset directory (use --data-dir or SKO_DATA_DIR)",
              file=sys.stderr)
        return EXIT_INPUT_ERROR
    try:
        noise = _noise_from_args(args)
        train_pool, test = load_data_dir(data_dir)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT_ERROR

    config = TrainConfig(lr=args.lr, epochs=args.epochs, batch_size=args.batch_size,
                         seed=args.seed)
    manifest = RunManifest(args.out, "train",
                           {k: v for k, v in vars(args).items() if k != "func"}
                           | {"out": str(args.out)}, args.seed)
    log_path = Path(args.out) / "log.jsonl"
    try:
        if args.arch == "autoencoder":
            n = min(args.size, len(train_pool))
            sub = subsample(train_pool, n, RngStream(args.seed).child(99))
            result = run_autoencoder_experiment(noise, sub, test, config,
                                                hidden=args.hidden or 64)
            model = result.model
            summary = {"probe_accuracy": result.probe_accuracy,
                       "sparsity_fraction": sparsity_fraction(result.first_layer_weights)}
            with open(log_path, "w") as fh:
                for rec in result.log:
                    fh.write(json.dumps(rec) + "\n")
        else:
            val_size = min(1000, len(train_pool) // 5)
            pool, val = split_dataset(train_pool, len(train_pool) - val_size,
                                      RngStream(args.seed).child(98),
                                      splits=("train", "val"))
            result = run_classifier_experiment(args.arch, noise, args.size,
                                               pool, val, test, config)
            model = result.model
            summary = {"test_error_percent": result.test_error}
            with open(log_path, "w") as fh:
                for rec in result.log:
                    fh.write(json.dumps(rec) + "\n")
    except TrainingDivergedError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT_ERROR

    manifest.record(log_path)
    ckpt = Path(args.out) / "model.ckpt"
    save_checkpoint(ckpt, model)
    manifest.record(ckpt)
    manifest.emit_text("result.json", _json_text(summary))
    manifest.finalize()
    print(_json_text(summary), end="")
    return EXIT_OK


# --- analyze -------------------------------------------------------------------

def _noisy_dense_indices(model) -> list:
    idx = [i for i, layer in enumerate(model)
           if isinstance(layer, Dense) and layer.noise.kind is not NoiseKind.NONE]
    if not idx:
        idx = [i for i, layer in enumerate(model) if isinstance(layer, Dense)]
    return idx[-1:]


def cmd_analyze(args) -> int:
    if args.mode == "contour":
        try:
            spec = GLMSpec.by_name(args.spec)
            params = ShakeoutParams(tau=args.tau, c=args.c)
        except ValueError as exc:
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_INPUT_ERROR
        manifest = RunManifest(args.out, "analyze",
                               {k: v for k, v in vars(args).items() if k != "func"}
                               | {"out": str(args.out)}, args.seed)
        lo, hi = args.weight_range
        w1s, w2s, grid = glm.contour_grid(spec, np.array([1.0, 1.0]), params,
                                          (lo, hi), (lo, hi), args.steps)
        manifest.emit_text("contour.csv", glm.contour_grid_csv(w1s, w2s, grid))
        manifest.finalize()
        return EXIT_OK

    try:
        model = load_checkpoint(args.checkpoint)
    except (CheckpointError, OSError, ValueError, KeyError) as exc:
        print(f"error: cannot read checkpoint: {exc}", file=sys.stderr)
        return EXIT_INPUT_ERROR
    layer_indices = (
        [int(s) for s in args.layers.split(",")] if args.layers
        else _noisy_dense_indices(model)
    )
    manifest = RunManifest(args.out, "analyze",
                           {k: v for k, v in vars(args).items() if k != "func"}
                           | {"out": str(args.out)}, args.seed)

    if args.mode == "hist":
        W = np.concatenate([model[i].W.ravel() for i in layer_indices])
        centers, density = weight_histogram(W)
        manifest.emit_text("histogram.csv", histogram_csv(centers, density))
    elif args.mode == "sparsity":
        W = np.concatenate([model[i].W.ravel() for i in layer_indices])
        manifest.emit_text("sparsity.json", _json_text(
            {"eps": args.eps, "sparsity_fraction": sparsity_fraction(W, args.eps)}))
    elif args.mode == "importance":
        W = model[layer_indices[0]].W
        imp = unit_importance(W)
        lines = ["unit,importance"]
        lines += [f"{j},{v:.17g}" for j, v in enumerate(imp)]
        manifest.emit_text("importance.csv", "\n".join(lines) + "\n")
        manifest.emit_text("importance.json", _json_text(
            {"grouping_fraction": grouping_fraction(W)}))
    elif args.mode == "ral":
        data_dir = args.data_dir or os.environ.get("SKO_DATA_DIR")
        if not data_dir:
            print("error: --mode ral needs --data-dir or SKO_DATA_DIR", file=sys.stderr)
            return EXIT_INPUT_ERROR
        try:
            _, test = load_data_dir(data_dir)
            ratios = [float(s) for s in args.ratios.split(",")]
            report = ral_curve(model, layer_indices, ratios, test)
        except (ValueError, OSError) as exc:
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_INPUT_ERROR
        manifest.emit_text("ral.csv", report.to_csv())
        manifest.emit_text("ral.json", report.to_json() + "\n")
    else:
        print(f"error: unknown mode {args.mode}", file=sys.stderr)
        return EXIT_INPUT_ERROR
    manifest.finalize()
    return EXIT_OK


# --- parser --------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="shakeout")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("certify-glm", help="certify the analytic regularizer")
    p.add_argument("--spec", default="logistic", choices=["linear", "logistic"])
    p.add_argument("--trials", type=int, default=1000)
    p.add_argument("--draws", type=int, default=100_000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", type=Path, default=Path("certify-out"))
    p.set_defaults(func=cmd_certify_glm)

    p = sub.add_parser("train", help="run a training experiment")
    p.add_argument("--arch", default="fc4096",
                   choices=["fc4096", "lenet-variant", "autoencoder"])
    p.add_argument("--noise", default="shakeout",
                   choices=[k.value for k in NoiseKind])
    p.add_argument("--tau", type=float, default=0.5)
    p.add_argument("--c", type=float, default=0.0)
    p.add_argument("--size", type=int, default=500)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--epochs", type=int, default=40)
    p.add_argument("--lr", type=float, default=0.05)
    p.add_argument("--batch-size", type=int, default=64)
    p.add_argument("--hidden", type=int, default=None)
    p.add_argument("--data-dir", default=None)
    p.add_argument("--out", type=Path, default=Path("train-out"))
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("analyze", help="analyze a checkpoint or the regularizer")
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--mode", required=True,
                   choices=["hist", "sparsity", "importance", "ral", "contour"])
    p.add_argument("--layers", default=None,
                   help="comma-separated layer indices (default: the noisy layer)")
    p.add_argument("--ratios", default="0,0.5,0.9,0.96")
    p.add_argument("--eps", type=float, default=1e-3)
    p.add_argument("--spec", default="logistic", choices=["linear", "logistic"])
    p.add_argument("--tau", type=float, default=0.5)
    p.add_argument("--c", type=float, default=1.0)
    p.add_argument("--steps", type=int, default=41)
    p.add_argument("--weight-range", type=float, nargs=2, default=(-3.0, 3.0))
    p.add_argument("--data-dir", default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", type=Path, default=Path("analyze-out"))
    p.set_defaults(func=cmd_analyze)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT_ERROR


if __name__ == "__main__":
    sys.exit(main())
