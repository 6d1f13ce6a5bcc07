import logging

import numpy as np
import pytest

from cdfi.engine import Tensor
from cdfi.errors import ConfigError
from cdfi.optim import (AdaMax, OptState, OrthantL1, adamax_step, l1_orthant_step, orthant_project,
                        pseudo_gradient, step_decay)

from oracles import soft_threshold


def run_quadratic(a, h, lam, steps, lr_fn, base):
    """Minimise 0.5*h*(theta - a)^2 + lam*|theta| from theta = 0."""
    theta = np.zeros_like(a)
    state = OptState()
    for k in range(steps):
        l1_orthant_step([theta], [h * (theta - a)], lam, lr_fn(k), state, base=base)
    return theta


class TestAdaMax:
    def test_zero_gradient_no_move(self, rng):
        p = rng.normal(size=(3, 4))
        before = p.copy()
        state = OptState()
        for _ in range(10):
            adamax_step([p], [np.zeros_like(p)], state, 1e-3)
        np.testing.assert_array_equal(p, before)

    def test_quadratic_converges(self):
        theta = np.zeros(1)
        state = OptState()
        for k in range(500):
            adamax_step([theta], [2 * (theta - 3)], state, step_decay(k, 0.1, 0.5, 100))
        assert abs(theta[0] - 3) < 1e-3

    def test_first_step_size(self):
        # bias-corrected first step moves each coordinate by lr * sign(g)
        p = np.zeros(3)
        adamax_step([p], [np.array([2.0, -0.1, 5.0])], OptState(), 0.01)
        np.testing.assert_allclose(p, [-0.01, 0.01, -0.01], rtol=1e-6)

    def test_non_finite_skips(self, caplog):
        p = np.ones(2)
        state = OptState()
        with caplog.at_level(logging.WARNING):
            rec = adamax_step([p], [np.array([np.nan, 1.0])], state, 0.1)
        assert rec["event"] == "skipped-step" and state.skipped == 1 and state.t == 0
        np.testing.assert_array_equal(p, 1.0)
        assert "non-finite" in caplog.text

    def test_schedule(self):
        assert step_decay(0) == 0.001
        assert step_decay(19) == 0.001
        assert step_decay(20) == 0.0005
        assert step_decay(40) == 0.00025

    def test_wrapper_uses_grads(self):
        t = Tensor(np.zeros(2, np.float32), requires_grad=True)
        t.grad = np.array([1.0, -1.0], np.float32)
        AdaMax([t], lr=0.1).step()
        np.testing.assert_allclose(t.data, [-0.1, 0.1], rtol=1e-5)


class TestOrthant:
    def test_projection_example(self):
        theta = np.array([0.1])
        l1_orthant_step([theta], [np.array([0.3])], 0.0001, 1.0, OptState(), base="sgd")
        assert theta[0] == 0.0 and not np.signbit(theta[0])

    def test_projection_exact_zeros(self):
        new = np.array([0.5, -0.2, 0.3, -0.4, 1e-30])
        orthant = np.array([1.0, 1.0, -1.0, -1.0, -1.0])
        out = orthant_project(new, orthant)
        assert out.tolist() == [0.5, 0.0, 0.0, -0.4, 0.0]

    def test_pseudo_gradient_rules(self):
        theta = np.array([0.5, -0.5, 0.0, 0.0, 0.0])
        g = np.array([0.1, 0.1, 0.05, 0.5, -0.5])
        pg = pseudo_gradient(theta, g, 0.2)
        np.testing.assert_allclose(pg, [0.3, -0.1, 0.0, 0.3, -0.3])

    def test_per_coordinate_lambda(self):
        pg = pseudo_gradient(np.zeros(2), np.array([0.3, 0.3]), np.array([0.1, 0.5]))
        np.testing.assert_allclose(pg, [0.2, 0.0])

    def test_soft_threshold_example(self):
        theta = run_quadratic(np.array([0.5]), np.array([1.0]), 0.2, 400, lambda k: 0.1, "sgd")
        assert theta[0] == pytest.approx(0.3, abs=1e-12)

    @pytest.mark.parametrize("base", ["sgd", "adamax"])
    def test_separable_quadratic(self, base, rng):
        a = rng.normal(size=50)
        h = rng.uniform(0.5, 2.0, size=50)
        lam = 0.3
        if base == "sgd":
            lr_fn = lambda k: 0.4  # noqa: E731
            steps = 400
        else:
            lr_fn = lambda k: step_decay(k, 0.05, 0.5, 500)  # noqa: E731
            steps = 6000
        theta = run_quadratic(a, h, lam, steps, lr_fn, base)
        expect = soft_threshold(a, lam / h)
        np.testing.assert_allclose(theta, expect, atol=1e-6)
        assert np.all(theta[expect == 0] == 0.0)

    def test_lambda_zero_is_base(self, rng):
        for base in ("adamax", "sgd"):
            p1 = rng.normal(size=(4, 3))
            p2 = p1.copy()
            s1, s2 = OptState(), OptState()
            for _ in range(20):
                g = rng.normal(size=p1.shape)
                l1_orthant_step([p1], [g], 0.0, 0.01, s1, base=base)
                if base == "adamax":
                    adamax_step([p2], [g], s2, 0.01)
                else:
                    p2 -= 0.01 * g
            np.testing.assert_array_equal(p1, p2)

    def test_zero_stays_zero_without_push(self):
        # a projected weight is only re-activated when |grad| exceeds lambda
        p = np.array([0.0])
        state = OptState()
        for g in (0.05, -0.08, 0.02):
            l1_orthant_step([p], [np.array([g])], 0.1, 0.5, state)
            assert p[0] == 0.0
        l1_orthant_step([p], [np.array([0.5])], 0.1, 0.5, state)
        assert p[0] < 0

    def test_large_lambda_zeroes_everything(self, rng):
        p = rng.normal(size=100) * 0.01
        state = OptState()
        for _ in range(50):
            l1_orthant_step([p], [rng.normal(size=100) * 1e-3], 10.0, 1e-3, state)
        assert np.count_nonzero(p) == 0

    def test_penalized_mask(self):
        k, b = np.array([0.01]), np.array([0.01])
        state = OptState()
        for _ in range(100):
            l1_orthant_step([k, b], [np.zeros(1), np.zeros(1)], 1.0, 1e-3, state, penalized=[True, False])
        assert k[0] == 0.0 and b[0] == 0.01

    def test_bad_arguments(self):
        with pytest.raises(ConfigError):
            l1_orthant_step([np.zeros(1)], [np.zeros(1)], -1.0, 0.1, OptState())
        with pytest.raises(ConfigError):
            l1_orthant_step([np.zeros(1)], [np.zeros(1)], 0.1, 0.1, OptState(), base="adam")
        with pytest.raises(ConfigError):
            OrthantL1([], lam=0.0)
