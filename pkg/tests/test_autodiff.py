"""
Tests for the autodiff tape, detach and gradient checks.
"""

import numpy as np
import pytest

from blockcraft.core.autodiff import Tape, Variable, add, backward, detach, mul, relu, sum_
from blockcraft.core.gradcheck import (
    DEFAULT_ABS_TOLERANCE,
    DEFAULT_TOLERANCE,
    analytic_gradients,
    grad_check,
    layer_suite,
    relative_error,
)
from blockcraft.core.tensor import Tensor
from blockcraft.errors import TapeError
from blockcraft.nn import functional as F


def square_loss(v):
    return sum_(mul(v["x"], v["x"]))


class TestBackward:
    """Tests for reverse-mode gradients."""

    def test_square(self, float64):
        """Test d(x*x)/dx = 6 at x = 3."""
        tape = Tape("t")
        x = tape.watch(Tensor(np.array([3.0])), name="x")
        grads = tape.parameter_gradients(backward(tape, sum_(mul(x, x))))
        assert grads["x"].data[0] == 6.0

    def test_square_matches_finite_difference(self, float64):
        """Test the same gradient against central differences."""
        report = grad_check(square_loss, {"x": np.array([3.0])})
        assert report.passed
        assert report.max_rel_error < 1e-8

    def test_fan_out_accumulates(self, float64):
        """Test y = x + x has gradient 2."""
        tape = Tape("t")
        x = tape.watch(Tensor(np.array([1.5, -2.0])), name="x")
        grads = tape.parameter_gradients(backward(tape, sum_(add(x, x))))
        np.testing.assert_array_equal(grads["x"].data, [2.0, 2.0])

    def test_non_scalar_loss(self, float64):
        """Test a vector loss is rejected."""
        tape = Tape("t")
        x = tape.watch(Tensor(np.array([1.0, 2.0])), name="x")
        with pytest.raises(TapeError, match="scalar"):
            backward(tape, mul(x, x))

    def test_loss_on_other_tape(self, float64):
        """Test backward refuses a loss recorded elsewhere."""
        a, b = Tape("a"), Tape("b")
        x = b.watch(Tensor(np.array([1.0])), name="x")
        with pytest.raises(TapeError):
            backward(a, sum_(x))

    def test_mixed_tapes(self, float64):
        """Test an op over two tapes raises."""
        x = Tape("a").watch(Tensor(np.array([1.0])), name="x")
        y = Tape("b").watch(Tensor(np.array([1.0])), name="y")
        with pytest.raises(TapeError, match="different tapes"):
            add(x, y)

    def test_duplicate_watch(self):
        """Test a name can be watched once per tape."""
        tape = Tape("t")
        tape.watch(Tensor([1.0]), name="w")
        with pytest.raises(TapeError):
            tape.watch(Tensor([1.0]), name="w")

    def test_constants_not_recorded(self, float64):
        """Test ops on constants record nothing."""
        tape = Tape("t")
        out = add(Variable.constant(np.ones(2)), Variable.constant(np.ones(2)))
        assert not out.requires_grad
        assert len(tape) == 0


class TestDetach:
    """Tests for stop-gradient."""

    def test_value_preserved(self, float64):
        """Test detach keeps the value object."""
        tape = Tape("t")
        x = tape.watch(Tensor(np.array([0.1, 0.7])), name="x")
        y = mul(x, x)
        d = detach(y)
        assert d.value is y.value
        assert not d.requires_grad

    def test_idempotent(self, float64):
        """Test detaching a constant returns it."""
        c = Variable.constant(np.ones(3))
        assert detach(c) is c

    def test_detached_factor_contributes_nothing(self, float64):
        """Test grad of sum(detach(x) * x) equals detach(x)."""
        tape = Tape("t")
        value = np.array([1.0, -2.0, 4.0])
        x = tape.watch(Tensor(value), name="x")
        grads = tape.parameter_gradients(backward(tape, sum_(mul(detach(x), x))))
        np.testing.assert_array_equal(grads["x"].data, value)

    def test_upstream_parameters_absent(self, float64):
        """Test loss = f(detach(g(x))) leaves g's parameters without gradient."""
        rng = np.random.default_rng(0)
        x = Variable.constant(rng.normal(size=(3, 4)))
        tape = Tape("t")
        g_w = tape.watch(Tensor(rng.normal(size=(5, 4))), name="g.weight")
        f_w = tape.watch(Tensor(rng.normal(size=(2, 5))), name="f.weight")
        hidden = detach(relu(F.dense(x, g_w)))
        loss = sum_(F.dense(hidden, f_w))
        grads = tape.parameter_gradients(backward(tape, loss))
        assert "g.weight" not in grads
        assert "f.weight" in grads

        fixed_hidden = hidden.value.numpy()
        report = grad_check(
            lambda v: sum_(F.dense(Variable.constant(fixed_hidden), v["w"])),
            {"w": f_w.value.numpy()},
            analytic={"w": grads["f.weight"].numpy()},
        )
        assert report.passed


class TestGradCheck:
    """Tests for the finite-difference harness."""

    def test_linear_map(self, float64):
        """Test f(x) = a . x is exact to rounding."""
        a = Variable.constant(np.array([0.5, -1.5, 2.0]))
        report = grad_check(lambda v: sum_(mul(a, v["x"])), {"x": np.array([1.0, 2.0, 3.0])})
        assert report.passed
        assert report.max_rel_error < 1e-8

    def test_two_layer_network(self, float64):
        """Test a 20-parameter dense-relu-dense network."""
        rng = np.random.default_rng(11)
        x = Variable.constant(rng.normal(size=(4, 3)))
        params = {
            "w1": rng.normal(size=(3, 3)),
            "b1": rng.normal(size=3),
            "w2": rng.normal(size=(2, 3)),
            "b2": rng.normal(size=2),
        }
        assert sum(p.size for p in params.values()) == 20

        def net(v):
            return sum_(F.dense(relu(F.dense(x, v["w1"], v["b1"])), v["w2"], v["b2"]))

        report = grad_check(net, params, h=1e-5, tol=1e-4)
        assert report.passed, str(report)
        assert report.checked == 20

    def test_corrupted_gradient_fails(self, float64):
        """Test a 1% gradient error is caught."""
        params = {"x": np.array([0.3, -1.2, 2.5])}
        grads = analytic_gradients(square_loss, params)
        corrupted = {"x": grads["x"] * 1.01}
        report = grad_check(square_loss, params, analytic=corrupted)
        assert not report.passed
        assert report.worst[0] == "x"

    def test_non_finite_gradient_reported(self, float64):
        """Test NaN in the analytic gradient is a located failure."""
        report = grad_check(
            square_loss,
            {"x": np.array([1.0, 2.0])},
            analytic={"x": np.array([2.0, np.nan])},
        )
        assert not report.passed
        assert "x[1]" in report.failure

    def test_requires_positive_step(self, float64):
        """Test h must be positive."""
        with pytest.raises(ValueError):
            grad_check(square_loss, {"x": np.array([1.0])}, h=0.0)

    def test_requires_float64(self):
        """Test 32-bit mode is refused."""
        with pytest.raises(ValueError, match="64-bit"):
            grad_check(square_loss, {"x": np.array([1.0])})

    def test_relative_error_floor(self):
        """Test the floor only keeps the ratio finite at zero."""
        assert relative_error(0.0, 0.0) == 0.0
        assert relative_error(0.0, 1e-9) == pytest.approx(0.1)
        assert relative_error(2.0, 1.0) == pytest.approx(0.5)

    def test_small_gradient_error_caught(self, float64):
        """Test a doubled gradient of size 1e-7 fails on both errors."""
        a = Variable.constant(np.array([1e-7, 1e-7]))
        report = grad_check(
            lambda v: sum_(mul(a, v["x"])),
            {"x": np.array([1.0, -1.0])},
            analytic={"x": np.array([2e-7, 1e-7])},
        )
        assert not report.passed
        assert report.failed == 1
        assert report.worst == ("x", (0,))
        assert report.max_rel_error == pytest.approx(0.5, rel=1e-6)
        assert report.max_abs_error == pytest.approx(1e-7, rel=1e-4)

    def test_zero_gradient_within_absolute_tolerance(self, float64):
        """Test rounding noise on a zero gradient passes on the absolute error."""
        a = Variable.constant(np.array([0.0, 1.5]))
        report = grad_check(
            lambda v: sum_(mul(a, v["x"])),
            {"x": np.array([1.0, 2.0])},
            analytic={"x": np.array([1e-10, 1.5])},
        )
        assert report.passed
        assert report.failed == 0
        assert report.max_rel_error > DEFAULT_TOLERANCE
        assert report.max_abs_error < DEFAULT_ABS_TOLERANCE

    def test_layer_suite(self):
        """Test every layer kind and the 3-block model pass."""
        reports = layer_suite(seed=0)
        names = {r.name for r in reports}
        assert {"dense", "conv2d", "batchnorm-train", "maxpool2d", "softmax-cross-entropy"} <= names
        assert sum(1 for r in reports if r.name.startswith("model-")) == 3
        failed = [str(r) for r in reports if not r.passed]
        assert not failed, failed
