"""
Tests for tallies, metrics files and training logs.
"""

import logging
import math

import numpy as np
import pytest

from blockcraft.statistics.metrics import (
    MetricsWriter,
    deterministic_columns,
    metrics_header,
    read_metrics,
)
from blockcraft.statistics.tally import Tally
from blockcraft.training.optimizer import SgdConfig
from blockcraft.training.state import StepMetrics, TrainState
from blockcraft.utils.logging import TrainingLogger


class TestTally:
    """Tests for Tally class."""

    def test_mean_and_std(self):
        """Test Welford statistics against numpy."""
        values = [0.3, 1.7, -2.2, 4.0, 0.0]
        tally = Tally("x")
        tally.observe_batch(values)
        assert tally.count == 5
        assert tally.mean == pytest.approx(np.mean(values))
        assert tally.std == pytest.approx(np.std(values, ddof=1))
        assert (tally.min, tally.max) == (-2.2, 4.0)

    def test_nan_counted_separately(self):
        """Test NaN observations are skipped."""
        tally = Tally("local")
        tally.observe_batch([1.0, math.nan, 3.0])
        assert tally.count == 2
        assert tally.missing == 1
        assert tally.mean == 2.0

    def test_empty(self):
        """Test an empty tally."""
        tally = Tally()
        assert math.isnan(tally.mean)
        assert tally.variance == 0.0
        assert math.isnan(tally.min)

    def test_history(self):
        """Test optional (step, value) history."""
        tally = Tally(keep_history=True)
        tally.observe(0.5, step=3)
        tally.observe(0.25, step=4)
        assert tally.get_history() == [(3, 0.5), (4, 0.25)]
        tally.reset()
        assert tally.count == 0
        assert tally.get_history() == []


class TestMetricsWriter:
    """Tests for MetricsWriter class."""

    def metrics(self, step, k=2):
        return StepMetrics(step, 0, 0.1, 0.5, tuple(0.1 * (i + 1) for i in range(k)), 0.8, 0.25, 12.5)

    def test_header(self):
        """Test K local-loss columns between L_g and L_total."""
        assert metrics_header(3) == [
            "run_id", "epoch", "step", "lr", "L_g", "L_1", "L_2", "L_3",
            "L_total", "train_error", "test_error", "wall_ms",
        ]

    def test_rows_read_back_exactly(self, tmp_path):
        """Test floats survive the file bitwise."""
        path = tmp_path / "metrics.csv"
        with MetricsWriter(path, k=2, run_id="demo") as writer:
            writer.write(self.metrics(0))
            writer.write(self.metrics(1), test_error=0.125)
        rows = read_metrics(path)
        assert len(rows) == 2
        assert rows[0]["run_id"] == "demo"
        assert float(rows[0]["L_2"]) == 0.2
        assert rows[0]["test_error"] == "nan"
        assert float(rows[1]["test_error"]) == 0.125

    def test_header_on_disk_before_rows(self, tmp_path):
        """Test the header is flushed at creation."""
        path = tmp_path / "metrics.csv"
        writer = MetricsWriter(path, k=1, run_id="x")
        assert path.read_text().strip().split(",") == metrics_header(1)
        writer.close()

    def test_wrong_block_count(self, tmp_path):
        """Test rows must carry K local losses."""
        with MetricsWriter(tmp_path / "m.csv", k=3, run_id="x") as writer:
            with pytest.raises(ValueError):
                writer.write(self.metrics(0, k=2))

    def test_deterministic_columns(self):
        """Test wall time is dropped."""
        rows = [{"step": "0", "wall_ms": "1.5"}]
        assert deterministic_columns(rows) == [{"step": "0"}]


class TestTrainingLogger:
    """Tests for TrainingLogger class."""

    def test_prefix(self, caplog):
        """Test messages carry epoch and step."""
        state = TrainState(SgdConfig(), total_steps=10)
        state.epoch, state.step = 2, 7
        log = TrainingLogger(state, "trainer")
        with caplog.at_level(logging.INFO, logger="blockcraft.trainer"):
            log.info("hello %s", "world")
        assert "[epoch=2 step=7] hello world" in caplog.text

    def test_event(self, caplog):
        """Test structured events format floats compactly."""
        state = TrainState(SgdConfig(), total_steps=10)
        log = TrainingLogger(state, "trainer")
        with caplog.at_level(logging.INFO, logger="blockcraft.trainer"):
            log.event("epoch_end", test_error=0.0312345678, k=4)
        assert "[epoch=0 step=0] epoch_end test_error=0.0312346 k=4" in caplog.text
