import numpy as np
import pytest

from cdfi.engine import Tensor, ops, parameter, precision, strict_mode, load_tensors, save_tensors
from cdfi.engine.checkpoint import MAGIC, decode_tensors, encode_tensors
from cdfi.errors import DataError, DimensionError, NumericError

from oracles import conv2d_direct, numeric_grad, rel_error


def grad_of(build, *arrays):
    """Analytic gradients of scalar ``build(*tensors)`` with respect to each array."""
    ts = [Tensor(a, requires_grad=True) for a in arrays]
    build(*ts).backward()
    return [t.grad for t in ts]


def fd_of(build, *arrays):
    out = []
    for a in arrays:
        f = lambda: float(build(*[Tensor(b) for b in arrays]).data)  # noqa: E731
        out.append(numeric_grad(f, a))
    return out


def check_grad(build, *arrays, tol=1e-5):
    for g, n in zip(grad_of(build, *arrays), fd_of(build, *arrays)):
        assert rel_error(g, n) <= tol


class TestConv2d:
    def test_scalar_kernel_scales(self):
        out = ops.conv2d(Tensor(np.ones((1, 1, 3, 3))), Tensor(np.full((1, 1, 1, 1), 2.0)), Tensor(np.zeros(1)))
        np.testing.assert_array_equal(out.data, np.full((1, 1, 3, 3), 2.0))

    def test_zero_kernel_gives_bias(self, rng):
        out = ops.conv2d(Tensor(rng.normal(size=(2, 3, 5, 4))), Tensor(np.zeros((2, 3, 3, 3))),
                         Tensor(np.array([0.7, -1.5])), padding=1)
        np.testing.assert_array_equal(out.data[:, 0], 0.7)
        np.testing.assert_array_equal(out.data[:, 1], -1.5)

    def test_matches_direct_sum(self, rng, f64):
        for _ in range(20):
            c_in, c_out = rng.integers(1, 4, size=2)
            h, w = rng.integers(3, 9, size=2)
            q = int(rng.choice([1, 3]))
            pad = int(rng.integers(0, 2))
            stride = int(rng.integers(1, 3))
            x = rng.normal(size=(1, c_in, h, w))
            k = rng.normal(size=(c_out, c_in, q, q))
            b = rng.normal(size=c_out)
            got = ops.conv2d(Tensor(x), Tensor(k), Tensor(b), stride=stride, padding=pad).data
            np.testing.assert_allclose(got, conv2d_direct(x, k, b, pad, stride), atol=1e-6)

    def test_output_extent(self):
        out = ops.conv2d(Tensor(np.zeros((1, 2, 7, 6))), Tensor(np.zeros((4, 2, 3, 3))), stride=2, padding=1)
        assert out.shape == (1, 4, 4, 3)

    def test_channel_mismatch(self):
        with pytest.raises(DimensionError):
            ops.conv2d(Tensor(np.zeros((1, 2, 4, 4))), Tensor(np.zeros((1, 3, 3, 3))))

    def test_gradients(self, rng, f64):
        x = rng.normal(size=(2, 2, 5, 5))
        k = rng.normal(size=(3, 2, 3, 3))
        b = rng.normal(size=3)
        r = rng.normal(size=(2, 3, 5, 5))
        check_grad(lambda x, k, b: ops.sum(ops.mul(ops.conv2d(x, k, b, padding=1), Tensor(r))), x, k, b)

    def test_strided_gradients(self, rng, f64):
        x = rng.normal(size=(1, 2, 6, 6))
        k = rng.normal(size=(2, 2, 3, 3))
        r = rng.normal(size=(1, 2, 3, 3))
        check_grad(lambda x, k: ops.sum(ops.mul(ops.conv2d(x, k, stride=2, padding=1), Tensor(r))), x, k)

    @pytest.mark.parametrize("stride,pad", [(1, 0), (1, 1), (2, 0), (2, 1)])
    def test_pointwise_gradients(self, rng, f64, stride, pad):
        x = rng.normal(size=(2, 3, 5, 6))
        k = rng.normal(size=(4, 3, 1, 1))
        b = rng.normal(size=4)
        shape = ops.conv2d(Tensor(x), Tensor(k), stride=stride, padding=pad).shape
        r = rng.normal(size=shape)
        check_grad(lambda x, k, b: ops.sum(ops.mul(ops.conv2d(x, k, b, stride=stride, padding=pad), Tensor(r))),
                   x, k, b)


class TestElementwise:
    def test_sigmoid_values(self):
        assert float(ops.sigmoid(Tensor(np.array(0.0))).data) == 0.5
        np.testing.assert_allclose(float(ops.sigmoid(Tensor(np.array(3.0, np.float64))).data),
                                   1 / (1 + np.exp(-3.0)), rtol=1e-12)
        np.testing.assert_allclose(1 / (1 + np.exp(-3.0)), 0.95257, atol=1e-5)

    def test_sigmoid_open_interval(self):
        s = ops.sigmoid(Tensor(np.array([-50.0, -10.0, 0.0, 10.0, 50.0], np.float32))).data
        assert np.all(s > 0) and np.all(s < 1)

    def test_add_zero_identity(self, rng):
        x = rng.normal(size=(3, 4)).astype(np.float32)
        np.testing.assert_array_equal(ops.add(Tensor(x), 0.0).data, x)

    def test_scalar_keeps_dtype(self):
        x = Tensor(np.ones(3, np.float32))
        for op in (ops.add, ops.sub, ops.mul, ops.div):
            assert op(x, 0.5).dtype == np.float32
            assert op(0.5, x).dtype == np.float32

    def test_only_scalar_broadcast(self):
        with pytest.raises(DimensionError):
            ops.add(Tensor(np.ones((2, 3))), Tensor(np.ones(3)))

    def test_strict_division_by_zero(self):
        with strict_mode(True), pytest.raises(NumericError):
            ops.div(Tensor(np.ones(2)), Tensor(np.array([1.0, 0.0])))

    @pytest.mark.parametrize("kind", ["sigmoid", "relu", "leaky_relu", "sqrt", "square", "exp"])
    def test_unary_gradients(self, kind, rng, f64):
        for _ in range(50):
            x = rng.uniform(0.2, 2.0, size=(3, 4)) * rng.choice([-1, 1], size=(3, 4))
            if kind == "sqrt":
                x = np.abs(x)
            r = rng.normal(size=x.shape)
            check_grad(lambda x: ops.sum(ops.mul(ops.elementwise(kind, x), Tensor(r))), x)

    @pytest.mark.parametrize("kind", ["add", "sub", "mul", "div"])
    def test_binary_gradients(self, kind, rng, f64):
        for _ in range(50):
            a = rng.normal(size=(2, 3))
            b = rng.uniform(0.5, 2.0, size=(2, 3))
            r = rng.normal(size=a.shape)
            check_grad(lambda a, b: ops.sum(ops.mul(ops.elementwise(kind, a, b), Tensor(r))), a, b)


class TestPoolResize:
    def test_pool_constant(self):
        out = ops.avg_pool2d(Tensor(np.full((1, 2, 4, 6), 0.3)), 2)
        np.testing.assert_allclose(out.data, 0.3)
        assert out.shape == (1, 2, 2, 3)

    def test_pool_mean(self):
        out = ops.avg_pool2d(Tensor(np.array([[[[1.0, 2.0], [3.0, 4.0]]]])), 2)
        assert out.data.reshape(-1).tolist() == [2.5]

    def test_pool_indivisible(self):
        with pytest.raises(DimensionError):
            ops.avg_pool2d(Tensor(np.zeros((1, 1, 5, 4))), 2)

    def test_upsample_constant(self):
        out = ops.upsample_bilinear(Tensor(np.full((1, 1, 3, 5), 0.8)), 2)
        assert out.shape == (1, 1, 6, 10)
        np.testing.assert_allclose(out.data, 0.8, atol=1e-6)

    def test_upsample_half_pixel_convention(self):
        # align-corners false: output pixel centres sit at (o + 0.5)/f - 0.5
        x = np.array([[[[0.0, 1.0, 2.0, 3.0]]]])
        out = ops.upsample_bilinear(Tensor(x), 2).data[0, 0, 0]
        expect = np.clip((np.arange(8) + 0.5) / 2 - 0.5, 0, 3)
        np.testing.assert_allclose(out, expect, atol=1e-12)

    def test_gradients(self, rng, f64):
        x = rng.normal(size=(1, 2, 4, 4))
        r = rng.normal(size=(1, 2, 8, 8))
        check_grad(lambda x: ops.sum(ops.mul(ops.upsample_bilinear(x, 2), Tensor(r))), x)
        r2 = rng.normal(size=(1, 2, 2, 2))
        check_grad(lambda x: ops.sum(ops.mul(ops.avg_pool2d(x, 2), Tensor(r2))), x)


class TestBackward:
    def test_sum_gives_ones(self):
        x = Tensor(np.arange(5.0), requires_grad=True)
        ops.sum(x).backward()
        np.testing.assert_array_equal(x.grad, np.ones(5))

    def test_square_sum(self):
        x = Tensor(np.array([1.0, 2.0]), requires_grad=True)
        ops.sum(ops.mul(x, x)).backward()
        np.testing.assert_array_equal(x.grad, [2.0, 4.0])

    def test_non_scalar_rejected(self):
        with pytest.raises(DimensionError):
            Tensor(np.ones(3), requires_grad=True).backward()

    def test_reused_node_accumulates(self):
        x = Tensor(np.array([3.0]), requires_grad=True)
        y = ops.mul(x, 2.0)
        ops.sum(ops.add(ops.mul(y, y), y)).backward()
        np.testing.assert_allclose(x.grad, [8 * 3.0 + 2])

    def test_composite_graph(self, rng, f64):
        x = rng.normal(size=(1, 2, 4, 4))
        k = rng.normal(size=(3, 2, 3, 3))
        r = rng.normal(size=(1, 6, 2, 2))

        def build(x, k):
            y = ops.leaky_relu(ops.conv2d(x, k, padding=1), 0.1)
            z = ops.concat([ops.sigmoid(y), ops.softmax(y, axis=1)], axis=1)
            return ops.sum(ops.mul(ops.avg_pool2d(z, 2), Tensor(r)))

        check_grad(build, x, k)

    def test_l2norm_and_getitem(self, rng, f64):
        x = rng.normal(size=(2, 3, 4))
        check_grad(lambda x: ops.l2norm(ops.getitem(x, (slice(None), slice(1, 3)))), x)

    def test_broadcast_to(self, rng, f64):
        x = rng.normal(size=(2, 1, 3, 3))
        r = rng.normal(size=(2, 4, 3, 3))
        check_grad(lambda x: ops.sum(ops.mul(ops.broadcast_to(x, (2, 4, 3, 3)), Tensor(r))), x)


class TestPrecision:
    def test_default_single(self):
        assert parameter(np.zeros(2)).dtype == np.float32

    def test_double_mode(self):
        with precision(np.float64):
            assert parameter(np.zeros(2)).dtype == np.float64


class TestCheckpoint:
    def test_round_trip_bit_exact(self, rng, tmp_path):
        tensors = {"a.weight": rng.normal(size=(3, 2, 3, 3)).astype(np.float32),
                   "b": np.float32(rng.normal(size=7)), "é": np.zeros((), np.float32)}
        save_tensors(tmp_path / "m.ckpt", tensors)
        back = load_tensors(tmp_path / "m.ckpt")
        assert list(back) == list(tensors)
        for k in tensors:
            assert back[k].tobytes() == np.asarray(tensors[k]).tobytes()

    def test_layout(self):
        blob = encode_tensors({"w": np.array([[1.0, 2.0]], np.float32)})
        assert blob[:5] == MAGIC
        # magic, count u64, name len u64 + name, rank u64, two extents u64, two float32
        assert len(blob) == 5 + 8 + 8 + 1 + 8 + 16 + 8
        assert blob[-8:] == np.array([1.0, 2.0], "<f4").tobytes()

    def test_truncated(self):
        blob = encode_tensors({"w": np.ones(4, np.float32)})
        with pytest.raises(DataError):
            decode_tensors(blob[:-3])

    def test_bad_magic(self):
        with pytest.raises(DataError):
            decode_tensors(b"XXXXX" + b"\0" * 8)
