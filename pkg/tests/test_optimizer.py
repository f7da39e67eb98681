"""
Tests for SGD, the learning-rate schedule and training state.
"""

import math

import numpy as np
import pytest

from blockcraft.core.tensor import Tensor
from blockcraft.errors import NonFiniteError, ShapeError
from blockcraft.models.network import LossWeights
from blockcraft.training.optimizer import ScheduleKind, SgdConfig, lr_at, sgd_update
from blockcraft.training.state import StepMetrics, TrainState, combine_losses


def within_ulp(actual: float, expected: float) -> bool:
    return abs(actual - expected) <= np.spacing(expected)


class TestSgdUpdate:
    """Tests for sgd_update."""

    def test_momentum_two_steps(self, float64):
        """Test theta goes 1.0 -> 0.95 -> 0.855."""
        cfg = SgdConfig(momentum=0.9, weight_decay=0.0)
        grad = Tensor(np.array([0.5]))
        theta, v = sgd_update(Tensor(np.array([1.0])), grad, None, cfg, lr=0.1)
        assert within_ulp(theta.data[0], 0.95)
        assert v.data[0] == 0.5
        theta, v = sgd_update(theta, grad, v, cfg, lr=0.1)
        assert within_ulp(v.data[0], 0.95)
        assert within_ulp(theta.data[0], 0.855)

    def test_weight_decay(self, float64):
        """Test a zero gradient still decays the weight."""
        cfg = SgdConfig(momentum=0.0, weight_decay=1e-4)
        theta, _ = sgd_update(Tensor(np.array([1.0])), Tensor(np.array([0.0])), None, cfg, lr=0.1)
        assert within_ulp(theta.data[0], 0.99999)

    def test_zero_lr_keeps_parameter(self, float64):
        """Test lr = 0 leaves the parameter bitwise unchanged."""
        param = Tensor(np.array([0.3, -1.7]))
        theta, _ = sgd_update(param, Tensor(np.array([2.0, 5.0])), None, SgdConfig(), lr=0.0)
        assert theta.bitwise_equal(param)

    def test_preserves_dtype(self):
        """Test 32-bit parameters stay 32-bit."""
        param = Tensor(np.ones(3, dtype=np.float32))
        theta, v = sgd_update(param, Tensor(np.ones(3, dtype=np.float32)), None, SgdConfig(), lr=0.1)
        assert theta.dtype == np.float32
        assert v.dtype == np.float32

    def test_non_finite_gradient(self, float64):
        """Test NaN gradients name the parameter."""
        with pytest.raises(NonFiniteError, match="unit1.conv.weight"):
            sgd_update(
                Tensor(np.zeros(2)), Tensor(np.array([0.0, np.nan])), None,
                SgdConfig(), lr=0.1, name="unit1.conv.weight",
            )

    def test_shape_mismatch(self, float64):
        """Test gradient shape must match the parameter."""
        with pytest.raises(ShapeError):
            sgd_update(Tensor(np.zeros(2)), Tensor(np.zeros(3)), None, SgdConfig(), lr=0.1)


class TestSchedule:
    """Tests for lr_at."""

    def test_cosine_endpoints(self):
        """Test lr0 at step 0 and lr_final at the end."""
        cfg = SgdConfig(lr0=0.1, lr_final=1e-4)
        assert lr_at(0, 100, cfg) == 0.1
        assert lr_at(100, 100, cfg) == 1e-4

    def test_cosine_midpoint(self):
        """Test the halfway value is the mean of the endpoints."""
        cfg = SgdConfig(lr0=0.1, lr_final=1e-4)
        assert lr_at(50, 100, cfg) == pytest.approx(0.05005, rel=1e-12)

    @pytest.mark.parametrize("kind", list(ScheduleKind))
    def test_monotone(self, kind):
        """Test the schedule never increases."""
        cfg = SgdConfig(schedule=kind)
        values = [lr_at(s, 40, cfg) for s in range(41)]
        assert all(a >= b for a, b in zip(values, values[1:]))

    def test_step_decades(self):
        """Test step decay drops by factors of ten."""
        cfg = SgdConfig(lr0=0.1, lr_final=1e-3, schedule="step")
        assert lr_at(10, 90, cfg) == 0.1
        assert lr_at(40, 90, cfg) == pytest.approx(0.01)
        assert lr_at(89, 90, cfg) == pytest.approx(1e-3)

    def test_step_outside_run(self):
        """Test steps past the end are rejected."""
        with pytest.raises(ValueError):
            lr_at(101, 100, SgdConfig())


class TestSgdConfig:
    """Tests for SgdConfig validation."""

    def test_defaults(self):
        """Test defaults validate."""
        cfg = SgdConfig()
        assert cfg.schedule is ScheduleKind.COSINE
        assert cfg.to_dict()["schedule"] == "cosine"

    def test_inverted_lr(self):
        """Test lr0 below lr_final is rejected."""
        with pytest.raises(ValueError, match="lr0 >= lr_final"):
            SgdConfig(lr0=1e-4, lr_final=0.1)

    def test_all_problems_reported(self):
        """Test every violation appears in one message."""
        with pytest.raises(ValueError) as info:
            SgdConfig(momentum=1.0, batch_size=0)
        assert "momentum" in str(info.value)
        assert "batch_size" in str(info.value)


class TestTrainState:
    """Tests for TrainState."""

    def record(self, step):
        return StepMetrics(step, 0, 0.1, 1.0, (1.0,), 2.0, 0.5)

    def test_lr_clamped(self):
        """Test schedule lookups past the run use lr_final."""
        state = TrainState(SgdConfig(), total_steps=10)
        assert state.lr == 0.1
        assert state.lr_for(25) == SgdConfig().lr_final

    def test_record_advances(self):
        """Test recording moves the step counter."""
        state = TrainState(SgdConfig(), total_steps=10)
        state.record(self.record(0))
        state.record(self.record(1))
        assert state.step == 2
        assert len(state.epoch_metrics(0)) == 2

    def test_record_rejects_going_back(self):
        """Test step ids never decrease."""
        state = TrainState(SgdConfig(), total_steps=10)
        state.record(self.record(3))
        with pytest.raises(ValueError):
            state.record(self.record(1))

    def test_losses_equal_treats_nan_as_equal(self):
        """Test NaN local losses compare equal to NaN."""
        a = StepMetrics(0, 0, 0.1, 1.0, (math.nan,), 1.0, 0.0, wall_ms=3.0)
        b = StepMetrics(0, 0, 0.1, 1.0, (math.nan,), 1.0, 0.0, wall_ms=9.0)
        assert a.losses_equal(b)
        assert not a.losses_equal(StepMetrics(0, 0, 0.1, 1.5, (math.nan,), 1.0, 0.0))


class TestLossWeights:
    """Tests for loss weighting."""

    def test_combine(self):
        """Test lambda1 * Lg + lambda2 * sum(Ll)."""
        assert combine_losses(LossWeights(1.0, 0.5), 2.0, [1.0, 3.0]) == 4.0

    def test_negative_rejected(self):
        """Test weights must be non-negative."""
        with pytest.raises(ValueError):
            LossWeights(lambda2=-0.1)
