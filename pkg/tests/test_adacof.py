import numpy as np
import pytest

from cdfi.adacof import (AdaCoFParams, WarpPair, adacof, adacof_backward, adacof_backward_reference,
                         adacof_forward, adacof_forward_reference, blend)
from cdfi.engine import Tensor, ops
from cdfi.errors import DimensionError, NumericError

from oracles import adacof_brute, numeric_grad, rel_error


def fields(rng, n, taps, h, w, scale=1.5, normalize=True):
    wts = rng.uniform(0.1, 1.0, size=(n, taps, h, w))
    if normalize:
        wts /= wts.sum(axis=1, keepdims=True)
    alpha = rng.uniform(-scale, scale, size=(n, taps, h, w))
    beta = rng.uniform(-scale, scale, size=(n, taps, h, w))
    return wts, alpha, beta


def off_lattice(a, margin=0.05):
    """Push offsets away from integers, where bilinear sampling has kinks."""
    frac = a - np.floor(a)
    return np.floor(a) + np.clip(frac, margin, 1 - margin)


class TestForward:
    def test_identity_sampling(self, rng):
        x = rng.random((2, 3, 6, 5))
        p = AdaCoFParams(np.ones((2, 1, 6, 5)), np.zeros((2, 1, 6, 5)), np.zeros((2, 1, 6, 5)), 1, 0)
        np.testing.assert_array_equal(adacof_forward(x, p), x)

    def test_zero_weights(self, rng):
        x = rng.random((1, 2, 4, 4))
        wts, a, b = fields(rng, 1, 9, 4, 4)
        out = adacof_forward(x, AdaCoFParams(np.zeros_like(wts), a, b, 3, 1))
        np.testing.assert_array_equal(out, 0.0)

    def test_ramp_hand_sum(self):
        # 4x4 ramp x[i, j] = 4i + j, F=2, d=1 (c = 0), W = 1/4, alpha = 1, beta = 0
        x = np.arange(16.0).reshape(1, 1, 4, 4)
        ones = np.ones((1, 4, 4, 4))
        out = adacof_forward(x, AdaCoFParams(0.25 * ones, ones, 0 * ones, 2, 1))[0, 0]
        for i in range(4):
            for j in range(4):
                pts = [x[0, 0, min(i + k + 1, 3), min(j + l, 3)] for k in range(2) for l in range(2)]
                assert out[i, j] == pytest.approx(sum(pts) / 4)

    def test_half_offset_is_vertical_midpoint(self, rng):
        x = rng.random((1, 1, 5, 5))
        out = adacof_forward(x, AdaCoFParams(np.ones((1, 1, 5, 5)), np.full((1, 1, 5, 5), 0.5),
                                             np.zeros((1, 1, 5, 5)), 1, 1))
        np.testing.assert_allclose(out[0, 0, :-1], 0.5 * (x[0, 0, :-1] + x[0, 0, 1:]), atol=1e-12)
        np.testing.assert_allclose(out[0, 0, -1], x[0, 0, -1], atol=1e-12)

    def test_matches_brute_force(self, rng):
        for _ in range(40):
            F = int(rng.choice([1, 2, 3, 5]))
            d = int(rng.integers(0, 3))
            c, h, w = rng.integers(1, 4), rng.integers(1, 9), rng.integers(1, 9)
            x = rng.random((1, c, h, w))
            wts, a, b = fields(rng, 1, F * F, h, w, scale=3.0)
            a[..., ::2] = np.round(a[..., ::2])
            p = AdaCoFParams(wts, a, b, F, d)
            np.testing.assert_allclose(adacof_forward(x, p), adacof_brute(x, wts, a, b, F, d), atol=1e-12)

    def test_reference_agrees_with_fast_path(self, rng):
        x = rng.random((2, 2, 6, 7))
        wts, a, b = fields(rng, 2, 9, 6, 7, scale=4.0)
        p = AdaCoFParams(wts, a, b, 3, 2)
        np.testing.assert_allclose(adacof_forward_reference(x, p), adacof_forward(x, p), atol=1e-12)

    def test_rigid_window(self, rng):
        # zero offsets, d=1: weighted sum over the clamped F x F neighbourhood
        x = rng.random((1, 1, 6, 6))
        wts, _, _ = fields(rng, 1, 9, 6, 6)
        zero = np.zeros_like(wts)
        out = adacof_forward(x, AdaCoFParams(wts, zero, zero, 3, 1))[0, 0]
        xp = np.pad(x[0, 0], 1, mode="edge")
        for i in range(6):
            for j in range(6):
                win = xp[i:i + 3, j:j + 3].reshape(-1)
                assert out[i, j] == pytest.approx(float(win @ wts[0, :, i, j]))

    def test_partition_of_unity(self, rng):
        wts, a, b = fields(rng, 1, 25, 8, 8, scale=6.0)
        out = adacof_forward(np.full((1, 3, 8, 8), 0.37), AdaCoFParams(wts, a, b, 5, 1))
        np.testing.assert_allclose(out, 0.37, atol=1e-5)

    def test_translation_equivariance(self, rng):
        x = rng.random((1, 1, 8, 8))
        one = np.ones((1, 1, 8, 8))
        a_shift, b_shift = 2, -1
        out = adacof_forward(x, AdaCoFParams(one, a_shift * one, b_shift * one, 1, 1))[0, 0]
        rows = np.clip(np.arange(8) + a_shift, 0, 7)
        cols = np.clip(np.arange(8) + b_shift, 0, 7)
        np.testing.assert_array_equal(out, x[0, 0][np.ix_(rows, cols)])

    def test_channels_share_fields(self, rng):
        x = rng.random((1, 3, 5, 5))
        wts, a, b = fields(rng, 1, 4, 5, 5)
        p = AdaCoFParams(wts, a, b, 2, 1)
        full = adacof_forward(x, p)
        for c in range(3):
            np.testing.assert_allclose(full[:, c:c + 1], adacof_forward(x[:, c:c + 1], p), atol=0)

    def test_shape_errors(self, rng):
        wts, a, b = fields(rng, 1, 9, 4, 4)
        with pytest.raises(DimensionError):
            AdaCoFParams(wts, a[:, :4], b, 3, 1)
        with pytest.raises(DimensionError):
            AdaCoFParams(wts, a, b, 2, 1)
        with pytest.raises(DimensionError):
            adacof_forward(np.zeros((1, 1, 5, 4)), AdaCoFParams(wts, a, b, 3, 1))

    def test_non_finite_offsets(self, rng):
        wts, a, b = fields(rng, 1, 1, 3, 3)
        a[0, 0, 1, 1] = np.nan
        with pytest.raises(NumericError):
            adacof_forward(np.zeros((1, 1, 3, 3)), AdaCoFParams(wts, a, b, 1, 1))


class TestBackward:
    def test_zero_upstream(self, rng):
        x = rng.random((1, 2, 5, 5))
        wts, a, b = fields(rng, 1, 9, 5, 5)
        for g in adacof_backward(np.zeros_like(x), x, AdaCoFParams(wts, a, b, 3, 1)):
            np.testing.assert_array_equal(g, 0.0)

    def test_identity_adjoint(self, rng):
        x = rng.random((1, 2, 5, 5))
        g = rng.normal(size=x.shape)
        z = np.zeros((1, 1, 5, 5))
        gx, _, _, _ = adacof_backward(g, x, AdaCoFParams(np.ones_like(z), z, z, 1, 1))
        np.testing.assert_allclose(gx, g, atol=0)

    @pytest.mark.parametrize("F,d", [(3, 1), (2, 2), (5, 0), (1, 1)])
    def test_finite_differences(self, rng, F, d):
        x = rng.random((1, 2, 5, 5))
        wts, a, b = fields(rng, 1, F * F, 5, 5, scale=1.2)
        a, b = off_lattice(a), off_lattice(b)
        r = rng.normal(size=x.shape)
        p = AdaCoFParams(wts, a, b, F, d)
        analytic = adacof_backward(r, x, p)
        loss = lambda: float(np.sum(adacof_brute(x, wts, a, b, F, d) * r))  # noqa: E731
        for got, arr in zip(analytic, (x, wts, a, b)):
            assert rel_error(got, numeric_grad(loss, arr)) <= 1e-5

    def test_reference_backward_agrees(self, rng):
        x = rng.random((1, 2, 5, 6))
        wts, a, b = fields(rng, 1, 9, 5, 6, scale=3.0)
        r = rng.normal(size=x.shape)
        p = AdaCoFParams(wts, a, b, 3, 1)
        for fast, ref in zip(adacof_backward(r, x, p), adacof_backward_reference(r, x, p)):
            np.testing.assert_allclose(fast, ref, atol=1e-12)

    def test_autograd_wrapper(self, rng):
        x = rng.random((1, 1, 4, 4))
        wts, a, b = fields(rng, 1, 4, 4, 4)
        ts = [Tensor(v, requires_grad=True) for v in (x, wts, a, b)]
        ops.sum(adacof(ts[0], AdaCoFParams(ts[1], ts[2], ts[3], 2, 1))).backward()
        expect = adacof_backward(np.ones_like(x), x, AdaCoFParams(wts, a, b, 2, 1))
        for t, e in zip(ts, expect):
            np.testing.assert_allclose(t.grad, e)


class TestBlend:
    def test_mask_one_and_half(self, rng):
        a, b = rng.random((1, 3, 4, 4)), rng.random((1, 3, 4, 4))
        np.testing.assert_array_equal(blend(a, b, np.ones_like(a)).data, a)
        np.testing.assert_allclose(blend(a, b, np.full_like(a, 0.5)).data, 0.5 * (a + b))

    def test_formula(self, rng):
        a, b, m = rng.random((3, 2, 3, 5, 5))
        np.testing.assert_allclose(blend(a, b, m).data, m * a + (1 - m) * b, atol=1e-15)

    def test_strict_range(self, rng):
        a = rng.random((1, 1, 2, 2))
        with pytest.raises(NumericError):
            blend(a, a, np.ones_like(a), strict=True)
        with pytest.raises(DimensionError):
            blend(a, a[..., :1], a)


def test_warp_pair_consistency(rng):
    w1 = fields(rng, 1, 9, 4, 4)
    w2 = fields(rng, 1, 4, 4, 4)
    with pytest.raises(DimensionError):
        WarpPair(AdaCoFParams(*w1, 3, 1), AdaCoFParams(*w2, 2, 1))
