import json

import numpy as np
import pytest

from shakeout.analysis import (
    PruneReport,
    grouping_fraction,
    histogram_csv,
    prune_by_magnitude,
    ral_curve,
    sparsity_fraction,
    unit_importance,
    weight_histogram,
)
from shakeout.core import RngStream
from shakeout.data import Dataset
from shakeout.layers import Dense, ReLU
from shakeout.train import classification_error, init_model, sgd_train, TrainConfig


class TestHistogram:
    def test_density_integrates_to_one(self, rng):
        centers, density = weight_histogram(rng.normal(size=5000))
        width = centers[1] - centers[0]
        assert np.sum(density) * width == pytest.approx(1.0)

    def test_symmetric_default_range(self):
        centers, _ = weight_histogram(np.array([-2.0, 0.1, 1.0]), bins=11)
        np.testing.assert_allclose(centers, -centers[::-1])

    def test_central_bin_holds_near_zero_mass(self):
        W = np.concatenate([np.zeros(90), np.full(10, 1.0)])
        centers, density = weight_histogram(W, bins=11)
        assert density.argmax() == 5

    def test_rejects_empty_and_single_bin(self):
        with pytest.raises(ValueError):
            weight_histogram(np.array([]))
        with pytest.raises(ValueError):
            weight_histogram(np.ones(3), bins=1)

    def test_csv_format(self):
        centers, density = weight_histogram(np.ones(10), bins=3)
        text = histogram_csv(centers, density)
        lines = text.strip().split("\n")
        assert lines[0] == "bin_center,density"
        assert len(lines) == 4


class TestSparsityFraction:
    def test_counting_oracle(self, rng):
        W = rng.normal(size=(20, 30)) * 0.01
        eps = 0.005
        expect = np.count_nonzero(np.abs(W) < eps) / W.size
        assert sparsity_fraction(W, eps) == pytest.approx(expect)

    def test_boundary_is_strict(self):
        W = np.array([1e-3, 0.5e-3])
        assert sparsity_fraction(W, 1e-3) == 0.5

    def test_eps_monotone(self, rng):
        W = rng.normal(size=1000)
        fr = [sparsity_fraction(W, e) for e in (1e-3, 1e-2, 1e-1, 1.0)]
        assert fr == sorted(fr)

    def test_rejects_nonpositive_eps(self):
        with pytest.raises(ValueError):
            sparsity_fraction(np.ones(3), 0.0)


class TestUnitImportance:
    def test_max_over_outgoing_weights(self):
        W = np.array([[1.0, -3.0], [2.0, 0.5]])  # out x in
        np.testing.assert_array_equal(unit_importance(W), [2.0, 3.0])

    def test_grouping_fraction_threshold(self):
        # importances (1, 0.1, 0.1, 0.1): 3 of 4 sit below 0.25 * 1
        W = np.array([[1.0, 0.1, 0.1, 0.1]])
        assert grouping_fraction(W) == pytest.approx(0.75)

    def test_grouping_all_zero(self):
        assert grouping_fraction(np.zeros((3, 4))) == 1.0

    def test_bimodal_vs_flat(self, rng):
        bimodal = np.abs(np.where(rng.random((8, 100)) < 0.5, 0.01, 1.0))
        flat = np.full((8, 100), 0.5)
        assert grouping_fraction(bimodal) > grouping_fraction(flat)


def two_layer_model(seed=0):
    model = [Dense(9, 8), ReLU(), Dense(8, 2)]
    init_model(model, RngStream(seed))
    return model


def separable_dataset(n=80, seed=0):
    gen = np.random.default_rng(seed)
    labels = np.arange(n) % 2
    images = gen.random((n, 3, 3)) * 0.1
    images[labels == 1, 0, 0] += 1.0
    return Dataset(images=images, labels=labels, split="test")


class TestPruneByMagnitude:
    def test_counting_oracle(self, rng):
        model = two_layer_model()
        pruned = prune_by_magnitude(model, [0, 2], 0.5)
        total = model[0].W.size + model[2].W.size
        zeros = np.count_nonzero(pruned[0].W == 0) + np.count_nonzero(pruned[2].W == 0)
        assert zeros >= int(0.5 * total)

    def test_kills_exactly_the_smallest(self):
        model = [Dense(4, 1)]
        model[0].W = np.array([[0.1, -0.4, 0.2, -0.3]])
        pruned = prune_by_magnitude(model, [0], 0.5)
        np.testing.assert_array_equal(pruned[0].W, [[0.0, -0.4, 0.0, -0.3]])

    def test_global_sort_across_layers(self):
        a, b = Dense(2, 1), Dense(2, 1)
        a.W = np.array([[10.0, 20.0]])
        b.W = np.array([[0.1, 0.2]])
        pruned = prune_by_magnitude([a, b], [0, 1], 0.5)
        np.testing.assert_array_equal(pruned[0].W, a.W)
        np.testing.assert_array_equal(pruned[1].W, [[0.0, 0.0]])

    def test_input_untouched(self):
        model = two_layer_model()
        before = model[0].W.copy()
        prune_by_magnitude(model, [0], 0.9)
        np.testing.assert_array_equal(model[0].W, before)

    def test_m_zero_is_identity(self):
        model = two_layer_model()
        pruned = prune_by_magnitude(model, [0], 0.0)
        np.testing.assert_array_equal(pruned[0].W, model[0].W)

    def test_m_one_zeroes_everything(self):
        model = two_layer_model()
        pruned = prune_by_magnitude(model, [0, 2], 1.0)
        assert not pruned[0].W.any() and not pruned[2].W.any()

    def test_idempotent(self):
        model = two_layer_model()
        once = prune_by_magnitude(model, [0], 0.7)
        twice = prune_by_magnitude(once, [0], 0.7)
        np.testing.assert_array_equal(once[0].W, twice[0].W)

    def test_rejects_bad_ratio(self):
        with pytest.raises(ValueError, match="ratio"):
            prune_by_magnitude(two_layer_model(), [0], 1.5)


class TestRalCurve:
    def make_trained(self):
        ds = separable_dataset()
        model = two_layer_model()
        sgd_train(model, TrainConfig(lr=0.5, epochs=20, seed=0), ds)
        return model, ds

    def test_starts_at_zero_loss(self):
        model, ds = self.make_trained()
        report = ral_curve(model, [2], [0.0, 0.5, 0.9], ds)
        assert report.ral[0] == 0.0

    def test_matches_direct_recomputation(self):
        model, ds = self.make_trained()
        report = ral_curve(model, [2], [0.0, 0.5], ds)
        pruned = prune_by_magnitude(model, [2], 0.5)
        acc = 1.0 - classification_error(pruned, ds)
        base = report.accuracies[0]
        assert report.ral[1] == pytest.approx((base - acc) / base)

    def test_requires_leading_zero(self):
        model, ds = self.make_trained()
        with pytest.raises(ValueError, match="start at 0"):
            ral_curve(model, [2], [0.5, 0.9], ds)

    def test_full_prune_degrades(self):
        model, ds = self.make_trained()
        report = ral_curve(model, [0, 2], [0.0, 1.0], ds)
        assert report.accuracies[1] <= report.accuracies[0]

    def test_csv_and_json(self):
        report = PruneReport(ratios=[0.0, 0.5], accuracies=[1.0, 0.8],
                             ral=[0.0, 0.2])
        lines = report.to_csv().strip().split("\n")
        assert lines[0] == "ratio,accuracy,ral"
        assert len(lines) == 3
        payload = json.loads(report.to_json())
        assert payload["ral"] == [0.0, 0.2]
