import numpy as np
import pytest

from neurostage.cnn.layers import (
    BatchNorm1d,
    BatchNorm2d,
    Conv2d,
    Dropout,
    Flatten,
    Linear,
    MaxPool2x2,
    ReLU,
    Softmax,
    softmax_rows,
)


class TestConv2d:
    def test_output_dim_contract(self):
        conv = Conv2d(1, 2, kernel=5, stride=1, pad=1)
        conv.init(np.random.default_rng(0))
        out = conv.forward(np.zeros((1, 1, 248, 248), np.float32))
        assert out.shape == (1, 2, 246, 246)

    def test_one_by_one_identity_kernel(self, rng):
        conv = Conv2d(1, 1, kernel=1, stride=1, pad=0)
        conv.params["w"] = np.ones((1, 1, 1, 1), np.float32)
        conv.params["b"] = np.zeros(1, np.float32)
        x = rng.random((2, 1, 6, 6)).astype(np.float32)
        assert np.array_equal(conv.forward(x), x)

    def test_hand_convolution(self):
        # 4x4 input, fixed 3x3 kernel, no padding -> 2x2 computed by hand
        x = np.arange(16, dtype=np.float32).reshape(1, 1, 4, 4)
        k = np.array([[1, 0, -1], [2, 0, -2], [1, 0, -1]], np.float32)
        conv = Conv2d(1, 1, kernel=3, stride=1, pad=0)
        conv.params["w"] = k.reshape(1, 1, 3, 3)
        conv.params["b"] = np.zeros(1, np.float32)
        out = conv.forward(x)
        expected = np.empty((2, 2), np.float32)
        for i in range(2):
            for j in range(2):
                expected[i, j] = (x[0, 0, i : i + 3, j : j + 3] * k).sum()
        assert np.array_equal(out[0, 0], expected)

    def test_channel_mismatch(self):
        conv = Conv2d(2, 4)
        with pytest.raises(ValueError):
            conv.forward(np.zeros((1, 3, 10, 10), np.float32))

    def test_nonpositive_output_dim(self):
        conv = Conv2d(1, 1, kernel=9, stride=1, pad=0)
        conv.init(np.random.default_rng(0))
        with pytest.raises(ValueError):
            conv.forward(np.zeros((1, 1, 4, 4), np.float32))


class TestBatchNorm:
    def test_train_mode_normalizes(self, rng):
        bn = BatchNorm2d(3)
        x = rng.standard_normal((4, 3, 5, 5)).astype(np.float32) * 3 + 2
        out = bn.forward(x, mode="train")
        mean = out.mean(axis=(0, 2, 3))
        var = out.var(axis=(0, 2, 3))
        assert np.abs(mean).max() < 1e-5
        assert np.abs(var - 1).max() < 1e-3

    def test_gamma_zero_gives_beta(self, rng):
        bn = BatchNorm1d(4)
        bn.params["gamma"] = np.zeros(4, np.float32)
        bn.params["beta"] = np.full(4, 2.5, np.float32)
        out = bn.forward(rng.standard_normal((6, 4)).astype(np.float32), mode="train")
        assert np.allclose(out, 2.5)

    def test_eval_matches_hand_computation(self):
        bn = BatchNorm1d(1, eps=1e-5)
        bn.params["gamma"] = np.array([1.5], np.float32)
        bn.params["beta"] = np.array([0.25], np.float32)
        bn.running_mean = np.array([2.0], np.float32)
        bn.running_var = np.array([4.0], np.float32)
        x = np.array([[1.0], [2.0], [5.0]], np.float32)
        out = bn.forward(x, mode="eval")
        expected = (x - 2.0) / np.sqrt(4.0 + 1e-5) * 1.5 + 0.25
        assert np.allclose(out, expected, atol=1e-6)

    def test_single_element_population_rejected(self):
        bn = BatchNorm1d(2)
        with pytest.raises(ValueError):
            bn.forward(np.zeros((1, 2), np.float32), mode="train")

    def test_running_stats_updated_only_in_train(self, rng):
        bn = BatchNorm2d(2)
        x = rng.standard_normal((3, 2, 4, 4)).astype(np.float32)
        before = bn.running_mean.copy()
        bn.forward(x, mode="eval")
        assert np.array_equal(bn.running_mean, before)
        bn.forward(x, mode="train")
        assert not np.array_equal(bn.running_mean, before)


class TestMaxPool:
    def test_constant_quarter_size(self):
        pool = MaxPool2x2()
        x = np.full((1, 1, 8, 8), 3.5, np.float32)
        out = pool.forward(x)
        assert out.shape == (1, 1, 4, 4)
        assert np.all(out == 3.5)

    def test_tiny_window(self):
        pool = MaxPool2x2()
        x = np.array([1, 2, 3, 4], np.float32).reshape(1, 1, 2, 2)
        assert pool.forward(x)[0, 0, 0, 0] == 4

    def test_table_dimension(self):
        pool = MaxPool2x2()
        out = pool.forward(np.zeros((1, 4, 244, 244), np.float32))
        assert out.shape == (1, 4, 122, 122)

    def test_odd_dims_rejected(self):
        pool = MaxPool2x2()
        with pytest.raises(ValueError):
            pool.forward(np.zeros((1, 1, 5, 4), np.float32))

    def test_backward_routes_to_argmax(self):
        pool = MaxPool2x2()
        x = np.array([[1, 9], [3, 2]], np.float32).reshape(1, 1, 2, 2)
        pool.forward(x)
        dx = pool.backward(np.array([[[[5.0]]]], np.float32))
        assert dx[0, 0, 0, 1] == 5.0
        assert dx.sum() == 5.0


class TestDropout:
    def test_eval_identity(self, rng):
        d = Dropout(0.3)
        x = rng.random((4, 6)).astype(np.float32)
        assert d.forward(x, mode="eval") is x

    def test_rate_zero_identity(self, rng):
        d = Dropout(0.0)
        x = rng.random((4, 6)).astype(np.float32)
        assert d.forward(x, mode="train", rng=rng) is x

    def test_train_statistics(self):
        d = Dropout(0.3)
        rng = np.random.default_rng(77)
        x = np.ones((1000, 1000), np.float32)
        out = d.forward(x, mode="train", rng=rng)
        zero_frac = float((out == 0).mean())
        assert abs(zero_frac - 0.3) < 0.01
        assert abs(out.mean() - 1.0) < 0.01  # survivor rescale preserves the mean

    def test_train_needs_rng(self):
        with pytest.raises(ValueError):
            Dropout(0.3).forward(np.ones((2, 2), np.float32), mode="train")

    def test_invalid_rate(self):
        with pytest.raises(ValueError):
            Dropout(1.0)


class TestSoftmax:
    def test_rows_sum_to_one(self, rng):
        z = (rng.standard_normal((50, 3)) * 10).astype(np.float32)
        p = softmax_rows(z)
        assert np.abs(p.sum(axis=1) - 1).max() < 1e-6
        assert p.min() >= 0 and p.max() <= 1

    def test_shift_invariance(self, rng):
        z = rng.standard_normal((20, 3)).astype(np.float32)
        p1 = softmax_rows(z)
        p2 = softmax_rows(z + np.float32(7.5))
        assert np.abs(p1 - p2).max() < 1e-6


class TestLinearFlatten:
    def test_linear_shape_check(self):
        lin = Linear(8, 3)
        lin.init(np.random.default_rng(0))
        with pytest.raises(ValueError):
            lin.forward(np.zeros((2, 9), np.float32))

    def test_flatten_round_trip(self, rng):
        f = Flatten()
        x = rng.random((2, 4, 3, 3)).astype(np.float32)
        out = f.forward(x)
        assert out.shape == (2, 36)
        assert np.array_equal(f.backward(out), x)

    def test_relu(self):
        r = ReLU()
        x = np.array([[-1.0, 2.0]], np.float32)
        out = r.forward(x)
        assert np.array_equal(out, [[0.0, 2.0]])
        dx = r.backward(np.array([[5.0, 5.0]], np.float32))
        assert np.array_equal(dx, [[0.0, 5.0]])
