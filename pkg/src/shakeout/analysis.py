"""Post-training weight diagnostics: sparsity, grouping, pruning, R.A.L."""

import copy
import json
from dataclasses import dataclass

import numpy as np

from .data import Dataset
from .train import classification_error


@dataclass(frozen=True)
class PruneReport:
    """Accuracy against pruning ratio with relative accuracy losses."""

    ratios: list
    accuracies: list
    ral: list

    def to_csv(self) -> str:
        lines = ["ratio,accuracy,ral"]
        for m, a, r in zip(self.ratios, self.accuracies, self.ral):
            lines.append(f"{m:.17g},{a:.17g},{r:.17g}")
        return "\n".join(lines) + "\n"

    def to_json(self) -> str:
        return json.dumps({"ratios": self.ratios, "accuracies": self.accuracies,
                           "ral": self.ral})


def weight_histogram(W: np.ndarray, bins: int = 201, value_range=None):
    """Density-normalized histogram of the flattened weights.

    Default range is symmetric around zero at the max magnitude, so the
    near-zero spike sits in the central bin.
    """
    W = np.asarray(W).ravel()
    if W.size == 0:
        raise ValueError("empty weight array")
    if bins < 2:
        raise ValueError("need at least 2 bins")
    if value_range is None:
        m = float(np.max(np.abs(W)))
        m = m if m > 0 else 1.0
        value_range = (-m, m)
    density, edges = np.histogram(W, bins=bins, range=value_range, density=True)
    centers = 0.5 * (edges[:-1] + edges[1:])
    return centers, density


def histogram_csv(centers, density) -> str:
    lines = ["bin_center,density"]
    for c, d in zip(centers, density):
        lines.append(f"{c:.17g},{d:.17g}")
    return "\n".join(lines) + "\n"


def sparsity_fraction(W: np.ndarray, eps: float = 1e-3) -> float:
    """Fraction of weights with magnitude below eps."""
    if eps <= 0:
        raise ValueError("eps must be positive")
    W = np.asarray(W).ravel()
    return float(np.mean(np.abs(W) < eps))


def unit_importance(W: np.ndarray) -> np.ndarray:
    """Per input unit, the maximum magnitude of its outgoing weights.

    W is (out x in); the result has one entry per input unit.
    """
    W = np.asarray(W)
    return np.max(np.abs(W), axis=0)


def grouping_fraction(W: np.ndarray, threshold: float = 0.25) -> float:
    """Fraction of input units whose importance falls below threshold*max.

    A large fraction indicates a discardable low-importance group of units.
    """
    imp = unit_importance(W)
    top = float(np.max(imp))
    if top == 0.0:
        return 1.0
    return float(np.mean(imp < threshold * top))


def prune_by_magnitude(model: list, layer_indices, m: float) -> list:
    """Zero the smallest-magnitude fraction m of the selected layers' weights.

    A single global sort runs over the selected layers jointly; ties break
    by flat index order.  Returns a deep copy; the input model is untouched.
    """
    if not 0.0 <= m <= 1.0:
        raise ValueError(f"pruning ratio must lie in [0, 1], got {m}")
    pruned = copy.deepcopy(model)
    weights = [pruned[i].W for i in layer_indices]
    mags = np.concatenate([np.abs(w).ravel() for w in weights])
    k = int(np.floor(m * mags.size))
    if k == 0:
        return pruned
    order = np.argsort(mags, kind="stable")
    kill = order[:k]
    mask = np.ones(mags.size, dtype=bool)
    mask[kill] = False
    offset = 0
    for w in weights:
        size = w.size
        w *= mask[offset : offset + size].reshape(w.shape)
        offset += size
    return pruned


def ral_curve(model: list, layer_indices, ratios, eval_ds: Dataset) -> PruneReport:
    """Test accuracy at each pruning ratio and the relative accuracy loss.

    R.A.L(m) = (accuracy(0) - accuracy(m)) / accuracy(0).
    """
    ratios = list(ratios)
    if not ratios or ratios[0] != 0.0:
        raise ValueError("ratios must start at 0")
    accuracies = []
    for m in ratios:
        pruned = prune_by_magnitude(model, layer_indices, m)
        accuracies.append(1.0 - classification_error(pruned, eval_ds))
    base = accuracies[0]
    if base == 0.0:
        raise ValueError("baseline accuracy is zero; R.A.L undefined")
    ral = [(base - a) / base for a in accuracies]
    return PruneReport(ratios=ratios, accuracies=accuracies, ral=ral)
