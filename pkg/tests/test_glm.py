import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from shakeout.core import RngStream
from shakeout.glm import (
    GLMSpec,
    check_propositions,
    contour_grid,
    contour_grid_csv,
    glm_loss,
    reg_linear_closed_form,
    reg_logistic_closed_form,
    reg_quadratic_approx,
    shakeout_reg_enumerate,
    shakeout_reg_exact,
    shakeout_reg_mc,
)
from shakeout.noise import NoiseKind, ShakeoutParams

LINEAR = GLMSpec.linear()
LOGISTIC = GLMSpec.logistic()


def random_instance(gen, p_max=8):
    p = int(gen.integers(1, p_max + 1))
    w = gen.uniform(-2.0, 2.0, p)
    x = gen.uniform(-2.0, 2.0, p)
    params = ShakeoutParams(tau=float(gen.choice([0.25, 0.5, 0.75])),
                            c=float(gen.choice([0.0, 0.5, 1.0])))
    return w, x, params


class TestGLMSpec:
    def test_by_name_roundtrip(self):
        assert GLMSpec.by_name("linear").name == "linear"
        assert GLMSpec.by_name("logistic").name == "logistic"
        with pytest.raises(ValueError):
            GLMSpec.by_name("poisson")

    def test_linear_derivatives(self):
        t = np.linspace(-3, 3, 7)
        np.testing.assert_allclose(LINEAR.a(t), 0.5 * t**2)
        np.testing.assert_allclose(LINEAR.a1(t), t)
        np.testing.assert_allclose(LINEAR.a2(t), np.ones_like(t))

    def test_logistic_derivatives_consistent(self):
        # finite differences of A must match A' and A''
        t = np.linspace(-4, 4, 17)
        h = 1e-6
        d1 = (LOGISTIC.a(t + h) - LOGISTIC.a(t - h)) / (2 * h)
        np.testing.assert_allclose(d1, LOGISTIC.a1(t), atol=1e-8)
        d2 = (LOGISTIC.a(t + h) - 2 * LOGISTIC.a(t) + LOGISTIC.a(t - h)) / h**2
        np.testing.assert_allclose(d2, LOGISTIC.a2(t), atol=1e-3)

    def test_logistic_stable_at_extremes(self):
        assert np.isfinite(LOGISTIC.a(np.array([1e3, -1e3]))).all()
        assert LOGISTIC.a(np.array([-1e3]))[0] == pytest.approx(0.0, abs=1e-300)

    def test_glm_loss(self):
        # -theta*y + A(theta) for linear: theta=2, y=1 -> -2 + 2 = 0
        w, x = np.array([1.0, 1.0]), np.array([1.0, 1.0])
        assert glm_loss(LINEAR, w, x, 1.0) == pytest.approx(0.0)


class TestExactVsEnumeration:
    """The closed form sums univariate gaps; enumeration is the truth."""

    def test_linear_agrees_exactly(self, rng):
        # quadratic A: mixed switch moments cancel, closed form is exact
        for _ in range(50):
            p = int(rng.integers(1, 8))
            w = rng.uniform(-2, 2, p)
            x = rng.uniform(-2, 2, p)
            params = ShakeoutParams(tau=float(rng.choice([0.25, 0.5, 0.75])),
                                    c=float(rng.choice([0.0, 0.5, 1.0])))
            exact = shakeout_reg_exact(LINEAR, w, x, params).pi
            truth = shakeout_reg_enumerate(LINEAR, w, x, params)
            assert exact == pytest.approx(truth, abs=1e-10)

    def test_logistic_agrees_for_single_feature(self, rng):
        for _ in range(50):
            w = rng.uniform(-2, 2, 1)
            x = rng.uniform(-2, 2, 1)
            params = ShakeoutParams(tau=0.5, c=float(rng.choice([0.0, 1.0])))
            exact = shakeout_reg_exact(LOGISTIC, w, x, params).pi
            truth = shakeout_reg_enumerate(LOGISTIC, w, x, params)
            assert exact == pytest.approx(truth, abs=1e-12)

    def test_logistic_differs_for_multiple_features(self):
        # the sum-of-univariate-gaps form drops the mixed moments, so for a
        # non-quadratic log-partition with p >= 2 the two must disagree
        w = np.array([1.5, -1.0, 0.8])
        x = np.array([1.0, 1.2, -0.7])
        params = ShakeoutParams(tau=0.5, c=1.0)
        exact = shakeout_reg_exact(LOGISTIC, w, x, params).pi
        truth = shakeout_reg_enumerate(LOGISTIC, w, x, params)
        assert abs(exact - truth) > 1e-3

    def test_mc_converges_to_enumeration(self):
        # the Monte-Carlo oracle estimates the true expectation, mixed
        # moments included
        w = np.array([1.5, -1.0, 0.8])
        x = np.array([1.0, 1.2, -0.7])
        params = ShakeoutParams(tau=0.5, c=1.0)
        truth = shakeout_reg_enumerate(LOGISTIC, w, x, params)
        mean, se = shakeout_reg_mc(LOGISTIC, w, x, params, 400_000, RngStream(17))
        assert abs(mean - truth) < 4 * se

    def test_enumerate_rejects_large_p(self):
        with pytest.raises(ValueError, match="p <= 20"):
            shakeout_reg_enumerate(LINEAR, np.ones(21), np.ones(21),
                                   ShakeoutParams())


class TestClosedForms:
    def test_linear_closed_form_matches_exact(self, rng):
        for _ in range(300):
            w, x, params = random_instance(rng)
            terms = reg_linear_closed_form(w, x, params)
            exact = shakeout_reg_exact(LINEAR, w, x, params).pi
            assert terms.pi == pytest.approx(exact, abs=1e-10)

    def test_linear_term_decomposition(self):
        # w = x = (1,1,1): l2 = 3, l1 = 3, l0 = 3; tau=0.5, c=1
        w = x = np.ones(3)
        terms = reg_linear_closed_form(w, x, ShakeoutParams(tau=0.5, c=1.0))
        assert terms.l2_term == pytest.approx(3.0)
        assert terms.l1_term == pytest.approx(3.0)
        assert terms.l0_term == pytest.approx(3.0)
        # 0.5/(2*0.5) * (3 + 2*3 + 3) = 6
        assert terms.pi == pytest.approx(6.0)

    def test_l0_term_ignores_zero_weights(self):
        w = np.array([0.0, 1.0, 0.0])
        terms = reg_linear_closed_form(w, np.ones(3), ShakeoutParams(tau=0.5, c=1.0))
        assert terms.l0_term == pytest.approx(1.0)

    def test_logistic_closed_form_matches_exact(self, rng):
        for _ in range(300):
            w, x, params = random_instance(rng)
            closed = reg_logistic_closed_form(w, x, params)
            exact = shakeout_reg_exact(LOGISTIC, w, x, params).pi
            assert closed == pytest.approx(exact, abs=1e-10)

    def test_logistic_closed_form_huge_theta(self):
        # logaddexp evaluation must survive theta of order 1e3
        w = np.array([1e3])
        x = np.array([1.0])
        closed = reg_logistic_closed_form(w, x, ShakeoutParams(tau=0.3, c=0.78))
        assert np.isfinite(closed)

    def test_quadratic_approx_exact_for_linear(self, rng):
        for _ in range(100):
            w, x, params = random_instance(rng)
            approx = reg_quadratic_approx(LINEAR, w, x, params)
            exact = shakeout_reg_exact(LINEAR, w, x, params).pi
            assert approx == pytest.approx(exact, abs=1e-10)

    def test_quadratic_approx_small_weights_logistic(self, rng):
        for _ in range(100):
            p = int(rng.integers(1, 9))
            x = rng.uniform(-2, 2, p)
            w = rng.uniform(-1, 1, p)
            w *= 0.01 / max(float(np.linalg.norm(w * x)), 1e-9)
            params = ShakeoutParams(tau=float(rng.choice([0.25, 0.5, 0.75])), c=0.0)
            approx = reg_quadratic_approx(LOGISTIC, w, x, params)
            exact = shakeout_reg_exact(LOGISTIC, w, x, params).pi
            if exact > 1e-12:
                assert approx == pytest.approx(exact, rel=0.05)


class TestMonteCarlo:
    def test_se_shrinks_with_draws(self):
        w = np.array([1.0, -0.5])
        x = np.array([0.5, 1.5])
        params = ShakeoutParams(tau=0.5, c=0.5)
        _, se_small = shakeout_reg_mc(LINEAR, w, x, params, 10_000, RngStream(3))
        _, se_big = shakeout_reg_mc(LINEAR, w, x, params, 160_000, RngStream(3))
        assert se_big < 0.5 * se_small

    def test_linear_mc_matches_exact(self, rng):
        for t in range(10):
            w, x, params = random_instance(rng)
            exact = shakeout_reg_exact(LINEAR, w, x, params).pi
            mean, se = shakeout_reg_mc(LINEAR, w, x, params, 200_000,
                                       RngStream(100, t))
            assert abs(mean - exact) < 4 * max(se, 1e-12)

    def test_chunking_changes_nothing(self):
        w = np.array([0.3, 0.9, -1.1])
        x = np.array([1.0, -0.4, 0.2])
        params = ShakeoutParams(tau=0.25, c=1.0)
        a = shakeout_reg_mc(LINEAR, w, x, params, 30_000, RngStream(7), chunk=30_000)
        b = shakeout_reg_mc(LINEAR, w, x, params, 30_000, RngStream(7), chunk=1_000)
        assert a[0] == pytest.approx(b[0])

    def test_rejects_gaussian_kind(self):
        with pytest.raises(ValueError, match="switch noise"):
            shakeout_reg_exact(LINEAR, np.ones(2), np.ones(2),
                               ShakeoutParams(kind=NoiseKind.GAUSSIAN_DROPOUT))


class TestSingleWeightLimit:
    def test_dropout_limit_value(self):
        # single logistic weight, x=1, tau=0.5, c=0: pi -> tau*ln(2)
        w = np.array([1e3])
        x = np.array([1.0])
        pi = reg_logistic_closed_form(w, x, ShakeoutParams(tau=0.5, c=0.0))
        assert pi == pytest.approx(0.5 * np.log(2.0), abs=1e-6)

    def test_limit_formula_tau_c(self):
        # as |w| grows the penalty tends to tau * ln(1 + e^c)
        for tau, c in [(0.3, 0.78), (0.25, 1.0), (0.5, 0.5)]:
            pi = reg_logistic_closed_form(np.array([1e3]), np.array([1.0]),
                                          ShakeoutParams(tau=tau, c=c))
            assert pi == pytest.approx(tau * np.log1p(np.exp(c)), abs=1e-6)

    def test_comparable_regularization_pair(self):
        # the (tau=0.3, c=0.78) asymptote sits within 1e-3 of dropout's
        # tau=0.5 asymptote 0.5*ln 2, making the two settings comparable
        sko = reg_logistic_closed_form(np.array([1e3]), np.array([1.0]),
                                       ShakeoutParams(tau=0.3, c=0.78))
        drop = reg_logistic_closed_form(np.array([1e3]), np.array([1.0]),
                                        ShakeoutParams(tau=0.5, c=0.0))
        assert sko == pytest.approx(0.3472, abs=1e-3)
        assert abs(sko - drop) < 1e-3

    def test_discontinuity_at_zero(self):
        # with c > 0 the penalty jumps at w = 0 (the L0 signature):
        # pi(0) = 0 but pi(w) for tiny w stays bounded away from 0
        x = np.array([1.0])
        params = ShakeoutParams(tau=0.5, c=1.0)
        at_zero = shakeout_reg_exact(LOGISTIC, np.array([0.0]), x, params).pi
        near_zero = shakeout_reg_exact(LOGISTIC, np.array([1e-9]), x, params).pi
        assert at_zero == pytest.approx(0.0, abs=1e-12)
        assert near_zero > 0.01


class TestPropositions:
    @pytest.mark.parametrize("spec", [LINEAR, LOGISTIC], ids=lambda s: s.name)
    def test_no_violations(self, spec):
        report = check_propositions(spec, 200, RngStream(0).child(10))
        assert report.ok, report.violations

    def test_rejects_zero_trials(self):
        with pytest.raises(ValueError):
            check_propositions(LINEAR, 0, RngStream(0))


class TestContour:
    def test_grid_shape_and_symmetry(self):
        w1s, w2s, grid = contour_grid(LINEAR, np.array([1.0, 1.0]),
                                      ShakeoutParams(tau=0.5, c=0.5),
                                      (-2, 2), (-2, 2), 21)
        assert grid.shape == (21, 21)
        # linear penalty with symmetric features is symmetric in +-w
        np.testing.assert_allclose(grid, grid[::-1, ::-1], atol=1e-12)

    def test_minimum_at_origin(self):
        _, _, grid = contour_grid(LOGISTIC, np.array([1.0, 1.0]),
                                  ShakeoutParams(tau=0.5, c=1.0),
                                  (-2, 2), (-2, 2), 21)
        assert grid[10, 10] == pytest.approx(grid.min(), abs=1e-12)

    def test_rejects_non_2d_inputs(self):
        with pytest.raises(ValueError, match="2-d"):
            contour_grid(LINEAR, np.array([1.0]), ShakeoutParams(), (-1, 1), (-1, 1), 5)

    def test_csv_round_trip(self):
        w1s, w2s, grid = contour_grid(LINEAR, np.array([1.0, 1.0]),
                                      ShakeoutParams(tau=0.5, c=0.0),
                                      (-1, 1), (-1, 1), 3)
        text = contour_grid_csv(w1s, w2s, grid)
        lines = text.strip().split("\n")
        assert lines[0] == "w1,w2,pi"
        assert len(lines) == 1 + 9
        w1, w2, pi = map(float, lines[1].split(","))
        assert pi == pytest.approx(grid[0, 0])


@given(arrays(np.float64, st.integers(1, 6),
              elements=st.floats(-2, 2, allow_nan=False)),
       st.floats(0.1, 0.9), st.floats(0, 2))
@settings(max_examples=60, deadline=None)
def test_penalty_nonnegative_property(w, tau, c):
    x = np.ones_like(w)
    params = ShakeoutParams(tau=tau, c=c)
    assert shakeout_reg_exact(LINEAR, w, x, params).pi >= -1e-10
    assert shakeout_reg_exact(LOGISTIC, w, x, params).pi >= -1e-10
