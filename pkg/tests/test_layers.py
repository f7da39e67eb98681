"""
Tests for layer rules and layer objects.
"""

import math

import numpy as np
import pytest

from blockcraft.core.autodiff import Tape, Variable, backward, sum_
from blockcraft.core.tensor import Tensor
from blockcraft.errors import LabelError, ShapeError
from blockcraft.nn import functional as F
from blockcraft.nn.layers import BatchNorm2d, Conv2d, Dense, ParameterBinding
from blockcraft.random.distributions import RandomGenerator


def const(array):
    return Variable.constant(np.asarray(array, dtype=np.float64))


def naive_conv(x, w, b, stride, pad):
    """Quadruple-loop direct cross-correlation."""
    batch, channels, height, width = x.shape
    out_ch, _, kh, kw = w.shape
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    out_h = (height + 2 * pad - kh) // stride + 1
    out_w = (width + 2 * pad - kw) // stride + 1
    out = np.zeros((batch, out_ch, out_h, out_w))
    for n in range(batch):
        for o in range(out_ch):
            for i in range(out_h):
                for j in range(out_w):
                    window = xp[n, :, i * stride : i * stride + kh, j * stride : j * stride + kw]
                    out[n, o, i, j] = np.sum(window * w[o]) + (b[o] if b is not None else 0.0)
    return out


class TestConv2d:
    """Tests for conv2d."""

    def test_identity_kernel(self, float64):
        """Test a 1x1 unit kernel reproduces the input."""
        x = np.random.default_rng(0).normal(size=(2, 1, 4, 4))
        out = F.conv2d(const(x), const(np.ones((1, 1, 1, 1))), const([0.0]))
        np.testing.assert_array_equal(out.data, x)

    def test_ones(self, float64):
        """Test 3x3 ones with a 2x2 ones kernel."""
        out = F.conv2d(const(np.ones((1, 1, 3, 3))), const(np.ones((1, 1, 2, 2))))
        np.testing.assert_array_equal(out.data[0, 0], np.full((2, 2), 4.0))

    @pytest.mark.parametrize("stride,pad", [(1, 1), (2, 0), (2, 1), (1, 0)])
    def test_matches_naive_oracle(self, float64, stride, pad):
        """Test agreement with the direct loop to 1e-12."""
        rng = np.random.default_rng(stride * 10 + pad)
        x = rng.normal(size=(2, 4, 8, 8))
        w = rng.normal(size=(3, 4, 3, 3))
        b = rng.normal(size=3)
        out = F.conv2d(const(x), const(w), const(b), stride=stride, padding=pad)
        np.testing.assert_allclose(out.data, naive_conv(x, w, b, stride, pad), rtol=0, atol=1e-12)

    def test_output_extent(self):
        """Test the output-size formula."""
        assert F.conv_output_extent(32, 3, 1, 1) == 32
        assert F.conv_output_extent(7, 3, 2, 0) == 3

    def test_kernel_larger_than_input(self, float64):
        """Test an oversized kernel is rejected."""
        with pytest.raises(ShapeError, match="kernel larger"):
            F.conv2d(const(np.ones((1, 1, 2, 2))), const(np.ones((1, 1, 3, 3))))

    def test_same_padding_needs_odd_kernel(self):
        """Test 'same' padding with an even kernel raises."""
        with pytest.raises(ShapeError):
            F.resolve_padding("same", 2)


class TestDense:
    """Tests for dense."""

    def test_identity(self, float64):
        """Test W = I, b = 0."""
        x = np.array([[1.0, -2.0, 3.0]])
        out = F.dense(const(x), const(np.eye(3)), const(np.zeros(3)))
        np.testing.assert_array_equal(out.data, x)

    def test_arithmetic(self, float64):
        """Test a hand-computed affine map."""
        out = F.dense(const([[1.0, 2.0]]), const([[1.0, 1.0], [0.0, 1.0]]), const([0.5, 0.5]))
        np.testing.assert_array_equal(out.data, [[3.5, 2.5]])

    def test_shape_mismatch(self, float64):
        """Test an inner-extent mismatch raises."""
        with pytest.raises(ShapeError):
            F.dense(const(np.ones((2, 3))), const(np.ones((4, 2))))


class TestBatchNorm:
    """Tests for batch normalization."""

    def test_constant_channel(self, float64):
        """Test a constant channel normalizes to zeros."""
        out, _, _ = F.batchnorm_train(const(np.full((2, 1, 3, 3), 5.0)), const([1.0]), const([0.0]))
        np.testing.assert_array_equal(out.data, np.zeros((2, 1, 3, 3)))

    def test_zero_gamma(self, float64):
        """Test gamma = 0 gives beta everywhere."""
        x = np.random.default_rng(1).normal(size=(2, 2, 3, 3))
        out, _, _ = F.batchnorm_train(const(x), const([0.0, 0.0]), const([0.5, -1.0]))
        np.testing.assert_array_equal(out.data[:, 0], np.full((2, 3, 3), 0.5))
        np.testing.assert_array_equal(out.data[:, 1], np.full((2, 3, 3), -1.0))

    def test_standardizes(self, float64):
        """Test train-mode per-channel mean 0 and variance 1."""
        x = np.random.default_rng(2).normal(3.0, 2.0, size=(8, 3, 4, 4))
        out, _, _ = F.batchnorm_train(const(x), const(np.ones(3)), const(np.zeros(3)))
        assert np.all(np.abs(out.data.mean(axis=(0, 2, 3))) < 1e-6)
        assert np.all(np.abs(out.data.var(axis=(0, 2, 3)) - 1.0) < 1e-4)

    def test_single_value_channel(self, float64):
        """Test train mode needs two values per channel."""
        with pytest.raises(ShapeError):
            F.batchnorm_train(const(np.ones((1, 2, 1, 1))), const([1.0, 1.0]), const([0.0, 0.0]))

    def test_running_statistics(self, float64):
        """Test running stats move by momentum 0.1 in train mode only."""
        layer = BatchNorm2d("bn", 1)
        x = np.arange(8.0).reshape(2, 1, 2, 2)
        layer.forward(const(x), ParameterBinding(), train=True)
        assert layer.running_mean[0] == pytest.approx(0.1 * 3.5)
        assert layer.running_var[0] == pytest.approx(0.9 + 0.1 * np.var(x, ddof=1))
        before = layer.running_mean.copy()
        layer.forward(const(x), ParameterBinding(), train=False)
        np.testing.assert_array_equal(layer.running_mean, before)

    def test_eval_is_deterministic(self, float64):
        """Test two eval passes are bitwise identical."""
        layer = BatchNorm2d("bn", 2)
        layer.running_mean = np.array([0.3, -0.2])
        layer.running_var = np.array([1.7, 0.4])
        x = const(np.random.default_rng(3).normal(size=(2, 2, 3, 3)))
        a = layer.forward(x, ParameterBinding(), train=False)
        b = layer.forward(x, ParameterBinding(), train=False)
        assert a.value.bitwise_equal(b.value)


class TestPoolingAndResidual:
    """Tests for pooling, relu and residual add."""

    def test_maxpool_routes_gradient(self, float64):
        """Test 2x2 pool picks 4 and routes the gradient there."""
        tape = Tape("t")
        x = tape.watch(Tensor(np.array([[[[1.0, 2.0], [3.0, 4.0]]]])), name="x")
        out = F.maxpool2d(x, 2)
        assert out.data.item() == 4.0
        grads = tape.parameter_gradients(backward(tape, sum_(out)))
        np.testing.assert_array_equal(grads["x"].data[0, 0], [[0.0, 0.0], [0.0, 1.0]])

    def test_maxpool_tie_break(self, float64):
        """Test ties route to the first index."""
        tape = Tape("t")
        x = tape.watch(Tensor(np.ones((1, 1, 2, 2))), name="x")
        grads = tape.parameter_gradients(backward(tape, sum_(F.maxpool2d(x, 2))))
        np.testing.assert_array_equal(grads["x"].data[0, 0], [[1.0, 0.0], [0.0, 0.0]])

    def test_gap_of_constant(self, float64):
        """Test global average pooling of a constant."""
        out = F.global_avg_pool(const(np.full((2, 3, 4, 4), 1.75)))
        np.testing.assert_array_equal(out.data, np.full((2, 3), 1.75))

    def test_residual_add_zeros(self, float64):
        """Test adding zeros is the identity."""
        x = np.random.default_rng(4).normal(size=(1, 2, 3, 3))
        out = F.residual_add(const(x), const(np.zeros_like(x)))
        np.testing.assert_array_equal(out.data, x)

    def test_residual_add_shape_mismatch(self, float64):
        """Test shortcuts never broadcast."""
        with pytest.raises(ShapeError):
            F.residual_add(const(np.zeros((1, 2, 3, 3))), const(np.zeros((1, 2, 1, 1))))


class TestSoftmaxCrossEntropy:
    """Tests for softmax cross-entropy."""

    def test_uniform_logits(self, float64):
        """Test all-zero logits give ln N."""
        loss, probs = F.softmax_cross_entropy(const(np.zeros((3, 10))), [0, 4, 9])
        assert loss.data.item() == pytest.approx(math.log(10), abs=1e-12)
        np.testing.assert_allclose(probs.data.sum(axis=1), 1.0, atol=1e-12)

    def test_saturation(self, float64):
        """Test a margin of 50 drives the loss below 1e-20."""
        logits = np.zeros((1, 5))
        logits[0, 2] = 50.0
        loss, _ = F.softmax_cross_entropy(const(logits), [2])
        assert 0.0 <= loss.data.item() < 1e-20

    def test_matches_brute_force(self, float64):
        """Test loss and gradient against exp/normalize."""
        rng = np.random.default_rng(5)
        z = rng.normal(size=(4, 5))
        labels = np.array([0, 3, 1, 4])
        tape = Tape("t")
        logits = tape.watch(Tensor(z), name="z")
        loss, _ = F.softmax_cross_entropy(logits, labels)
        grad = tape.parameter_gradients(backward(tape, loss))["z"].data

        p = np.exp(z) / np.exp(z).sum(axis=1, keepdims=True)
        expected_loss = -np.mean(np.log(p[np.arange(4), labels]))
        onehot = np.eye(5)[labels]
        assert loss.data.item() == pytest.approx(expected_loss, abs=1e-10)
        np.testing.assert_allclose(grad, (p - onehot) / 4, atol=1e-10)

    def test_label_out_of_range(self, float64):
        """Test labels outside [0, N) raise."""
        with pytest.raises(LabelError, match="label 5"):
            F.softmax_cross_entropy(const(np.zeros((2, 5))), [1, 5])


class TestLayerObjects:
    """Tests for parameter-owning layers."""

    def test_conv_he_init(self):
        """Test He-normal kernels and zero bias."""
        layer = Conv2d("c", 8, 16, 3, RandomGenerator(0))
        w = layer.weight.value.data
        assert w.shape == (16, 8, 3, 3)
        assert w.std() == pytest.approx(math.sqrt(2.0 / 72), rel=0.15)
        np.testing.assert_array_equal(layer.bias.value.data, np.zeros(16))

    def test_binding_watches_once(self, float64):
        """Test a parameter is watched once per tape."""
        layer = Dense("d", 3, 2, RandomGenerator(0))
        tape = Tape("t")
        bind = ParameterBinding(tape)
        x = const(np.ones((1, 3)))
        layer.forward(x, bind, train=True)
        layer.forward(x, bind, train=True)
        assert [n.name for n in tape.nodes if n.kind == "leaf"] == ["d.weight", "d.bias"]

    def test_frozen_binding_records_nothing(self, float64):
        """Test a frozen binding yields constants."""
        layer = Dense("d", 3, 2, RandomGenerator(0))
        tape = Tape("t")
        out = layer.forward(const(np.ones((1, 3))), ParameterBinding(tape, frozen=True), train=True)
        assert not out.requires_grad
        assert len(tape) == 0
