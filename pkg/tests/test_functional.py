"""Neural-net ops against naive loop oracles and hand-computed values."""

import numpy as np
import pytest

import cvmhunet.functional as F
from cvmhunet.tensor import Tensor


def t(data, rg=False):
    return Tensor(np.asarray(data, dtype=np.float64), requires_grad=rg)


# ---------------------------------------------------------------------------
# oracles: naive loops, no stride tricks
# ---------------------------------------------------------------------------


def conv2d_naive(x, w, b, stride, padding):
    n, cin, h, ww = x.shape
    cout, _, kh, kw = w.shape
    xp = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    ho = (h + 2 * padding - kh) // stride + 1
    wo = (ww + 2 * padding - kw) // stride + 1
    out = np.zeros((n, cout, ho, wo), dtype=x.dtype)
    for ni in range(n):
        for oi in range(cout):
            for yi in range(ho):
                for xi in range(wo):
                    patch = xp[ni, :, yi * stride : yi * stride + kh, xi * stride : xi * stride + kw]
                    out[ni, oi, yi, xi] = np.sum(patch * w[oi])
            if b is not None:
                out[ni, oi] += b[oi]
    return out


def depthwise_naive(x, w, b, stride, padding):
    n, c, h, ww = x.shape
    _, _, kh, kw = w.shape
    xp = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    ho = (h + 2 * padding - kh) // stride + 1
    wo = (ww + 2 * padding - kw) // stride + 1
    out = np.zeros((n, c, ho, wo), dtype=x.dtype)
    for ni in range(n):
        for ci in range(c):
            for yi in range(ho):
                for xi in range(wo):
                    patch = xp[ni, ci, yi * stride : yi * stride + kh, xi * stride : xi * stride + kw]
                    out[ni, ci, yi, xi] = np.sum(patch * w[ci, 0])
            if b is not None:
                out[ni, ci] += b[ci]
    return out


def conv1d_naive(x, w, b):
    n, _, length = x.shape
    k = w.shape[2]
    pad = (k - 1) // 2
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad)))
    out = np.zeros_like(x)
    for ni in range(n):
        for i in range(length):
            out[ni, 0, i] = np.sum(xp[ni, 0, i : i + k] * w[0, 0])
    if b is not None:
        out += b[0]
    return out


class TestConvOracles:
    @pytest.mark.parametrize("stride,padding,kh", [(1, 0, 3), (1, 1, 3), (2, 1, 3), (4, 0, 4), (1, 3, 7)])
    def test_conv2d_matches_naive(self, stride, padding, kh):
        rng = np.random.default_rng(42)
        x = rng.normal(size=(2, 3, 9, 8))
        w = rng.normal(size=(5, 3, kh, kh))
        b = rng.normal(size=(5,))
        got = F.conv2d(t(x), t(w), t(b), stride=stride, padding=padding)
        np.testing.assert_allclose(got.data, conv2d_naive(x, w, b, stride, padding), atol=1e-10)

    def test_conv1x1_fast_path_matches_naive(self):
        rng = np.random.default_rng(1)
        x = rng.normal(size=(2, 4, 5, 6))
        w = rng.normal(size=(7, 4, 1, 1))
        got = F.conv2d(t(x), t(w), None)
        np.testing.assert_allclose(got.data, conv2d_naive(x, w, None, 1, 0), atol=1e-10)

    @pytest.mark.parametrize("stride,padding", [(1, 1), (2, 1)])
    def test_depthwise_matches_naive(self, stride, padding):
        rng = np.random.default_rng(7)
        x = rng.normal(size=(2, 6, 7, 7))
        w = rng.normal(size=(6, 1, 3, 3))
        b = rng.normal(size=(6,))
        got = F.depthwise_conv2d(t(x), t(w), t(b), stride=stride, padding=padding)
        np.testing.assert_allclose(got.data, depthwise_naive(x, w, b, stride, padding), atol=1e-10)

    @pytest.mark.parametrize("k", [1, 3, 5, 7])
    def test_conv1d_matches_naive(self, k):
        rng = np.random.default_rng(3)
        x = rng.normal(size=(2, 1, 10))
        w = rng.normal(size=(1, 1, k))
        b = rng.normal(size=(1,))
        got = F.conv1d(t(x), t(w), t(b))
        np.testing.assert_allclose(got.data, conv1d_naive(x, w, b), atol=1e-12)

    def test_conv2d_shape_mismatch_raises(self):
        with pytest.raises(ValueError, match="channels"):
            F.conv2d(t(np.zeros((1, 3, 8, 8))), t(np.zeros((4, 2, 3, 3))))
        with pytest.raises(ValueError, match="odd"):
            F.conv1d(t(np.zeros((1, 1, 8))), t(np.zeros((1, 1, 4))))


class TestLinear:
    def test_matches_numpy(self):
        rng = np.random.default_rng(5)
        x = rng.normal(size=(2, 3, 6))
        w = rng.normal(size=(4, 6))
        b = rng.normal(size=(4,))
        got = F.linear(t(x), t(w), t(b))
        np.testing.assert_allclose(got.data, x @ w.T + b, atol=1e-12)

    def test_feature_mismatch_raises(self):
        with pytest.raises(ValueError, match="features"):
            F.linear(t(np.zeros((2, 5))), t(np.zeros((3, 6))))


class TestNorms:
    def test_layer_norm_hand_values(self):
        # two features [1, 3]: mean 2, var 1 -> normalized [-1, 1]
        x = t(np.array([[1.0, 3.0]]))
        out = F.layer_norm(x, t(np.ones(2)), t(np.zeros(2)), axis=-1)
        np.testing.assert_allclose(out.data, [[-1.0, 1.0]], atol=1e-4)

    def test_layer_norm_channel_axis(self):
        rng = np.random.default_rng(0)
        x = rng.normal(size=(2, 5, 3, 3))
        g = rng.normal(size=(5,))
        b = rng.normal(size=(5,))
        out = F.layer_norm(t(x), t(g), t(b), axis=1)
        mu = x.mean(axis=1, keepdims=True)
        var = x.var(axis=1, keepdims=True)
        expected = (x - mu) / np.sqrt(var + 1e-5) * g[None, :, None, None] + b[None, :, None, None]
        np.testing.assert_allclose(out.data, expected, atol=1e-10)

    def test_layer_norm_rows_independent(self):
        x = np.array([[1.0, 2.0, 3.0], [100.0, 200.0, 300.0]])
        out = F.layer_norm(t(x), t(np.ones(3)), t(np.zeros(3)))
        np.testing.assert_allclose(out.data[0], out.data[1], atol=1e-3)

    def test_batch_norm_train_hand_values(self):
        x = t(np.array([0.0, 2.0]).reshape(2, 1, 1, 1))
        rm = np.zeros(1)
        rv = np.ones(1)
        out = F.batch_norm(x, t(np.ones(1)), t(np.zeros(1)), rm, rv, training=True, momentum=0.1)
        np.testing.assert_allclose(out.data.reshape(-1), [-1.0, 1.0], atol=1e-4)
        np.testing.assert_allclose(rm, [0.1])  # 0.9*0 + 0.1*1
        np.testing.assert_allclose(rv, [0.9 * 1.0 + 0.1 * 1.0])

    def test_batch_norm_eval_uses_running_stats(self):
        x = t(np.array([5.0, 7.0]).reshape(2, 1, 1, 1))
        rm = np.array([6.0])
        rv = np.array([4.0])
        out = F.batch_norm(x, t(np.ones(1)), t(np.zeros(1)), rm, rv, training=False)
        np.testing.assert_allclose(out.data.reshape(-1), [-0.5, 0.5], atol=1e-5)
        np.testing.assert_allclose(rm, [6.0])  # untouched in eval


class TestActivations:
    def test_relu(self):
        x = t(np.array([-2.0, 0.0, 3.0]))
        np.testing.assert_array_equal(F.relu(x).data, [0.0, 0.0, 3.0])

    def test_silu_values(self):
        x = t(np.array([0.0, 1.0, -1.0]))
        s = 1 / (1 + np.exp(-x.data))
        np.testing.assert_allclose(F.silu(x).data, x.data * s, atol=1e-12)

    def test_gelu_reference_values(self):
        # x * Phi(x) with the standard normal CDF (values from CDF tables)
        x = t(np.array([0.0, 1.0, -1.0, 2.0]))
        expected = [0.0, 0.8413447460685429, -0.15865525393145707, 1.9544997361036416]
        np.testing.assert_allclose(F.gelu(x).data, expected, atol=1e-12)

    def test_log_softmax_matches_naive(self):
        rng = np.random.default_rng(11)
        x = rng.normal(size=(3, 5)) * 10
        out = F.log_softmax(t(x), axis=1)
        naive = np.log(np.exp(x) / np.exp(x).sum(axis=1, keepdims=True))
        np.testing.assert_allclose(out.data, naive, atol=1e-10)
        # stability: huge logits must not overflow
        big = F.log_softmax(t(np.array([[1000.0, 0.0]])), axis=1)
        assert np.all(np.isfinite(big.data))


class TestPools:
    def test_avg_pool(self):
        x = t(np.arange(8, dtype=np.float64).reshape(1, 2, 2, 2))
        np.testing.assert_allclose(F.global_avg_pool(x).data, [[1.5, 5.5]])

    def test_max_min_pool_values_and_ties(self):
        x = np.zeros((1, 1, 2, 2))
        x[0, 0] = [[3.0, 3.0], [1.0, 0.0]]
        tx = t(x, rg=True)
        out = F.global_max_pool(tx)
        np.testing.assert_allclose(out.data, [[3.0]])
        out.sum().backward()
        np.testing.assert_array_equal(tx.grad[0, 0], [[1.0, 0.0], [0.0, 0.0]])
        tx2 = t(x, rg=True)
        F.global_min_pool(tx2).sum().backward()
        np.testing.assert_array_equal(tx2.grad[0, 0], [[0.0, 0.0], [0.0, 1.0]])
