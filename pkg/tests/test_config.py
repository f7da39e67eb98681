"""
Tests for configuration loading and validation.
"""

import json

import pytest

from blockcraft.errors import ConfigValidationError
from blockcraft.training.optimizer import ScheduleKind
from blockcraft.utils.config import ConfigLoader, ExperimentConfig, parse_config

BASE = {"preset": "vgg-small", "dataset": "synthetic"}


class TestConfigLoader:
    """Tests for ConfigLoader class."""

    def test_json_round_trip(self, tmp_path):
        """Test save then load."""
        path = tmp_path / "cfg.json"
        ConfigLoader.save({"k": 2, "lr0": 0.05}, path)
        assert ConfigLoader.load(path) == {"k": 2, "lr0": 0.05}

    def test_empty_file(self, tmp_path):
        """Test an empty file is an empty mapping."""
        path = tmp_path / "cfg.json"
        path.write_text("")
        assert ConfigLoader.load(path) == {}

    def test_missing_file(self, tmp_path):
        """Test a missing file raises."""
        with pytest.raises(FileNotFoundError):
            ConfigLoader.load(tmp_path / "absent.json")

    def test_unsupported_suffix(self, tmp_path):
        """Test unknown formats are refused."""
        path = tmp_path / "cfg.ini"
        path.write_text("k=2")
        with pytest.raises(ValueError, match="Unsupported"):
            ConfigLoader.load(path)

    def test_yaml(self, tmp_path):
        """Test YAML files when PyYAML is installed."""
        pytest.importorskip("yaml")
        path = tmp_path / "cfg.yaml"
        path.write_text("preset: vgg-small\ndataset: synthetic\nk: 2\n")
        assert parse_config(path).k == 2


class TestExperimentConfig:
    """Tests for ExperimentConfig validation."""

    def test_defaults(self):
        """Test the default hyperparameters."""
        cfg = parse_config(overrides=BASE)
        sgd = cfg.sgd
        assert (sgd.lr0, sgd.lr_final, sgd.momentum, sgd.weight_decay) == (0.1, 1e-4, 0.9, 1e-4)
        assert sgd.batch_size == 32
        assert sgd.schedule is ScheduleKind.COSINE
        assert (cfg.loss_weights.lambda1, cfg.loss_weights.lambda2) == (1.0, 1.0)
        assert cfg.k == 4

    def test_override_wins(self, tmp_path):
        """Test command-line values beat the file."""
        path = tmp_path / "cfg.json"
        path.write_text(json.dumps({**BASE, "lr0": 0.05}))
        assert parse_config(path).lr0 == 0.05
        assert parse_config(path, {"lr0": "0.2", "k": None}).lr0 == 0.2

    def test_zero_k(self):
        """Test K must be positive."""
        with pytest.raises(ConfigValidationError) as info:
            parse_config(overrides={**BASE, "k": 0})
        assert any("k must be >= 1" in e for e in info.value.errors)

    def test_k_exceeds_units(self):
        """Test K is bounded by the preset's unit count."""
        with pytest.raises(ConfigValidationError, match="exceeds the 8 units"):
            parse_config(overrides={**BASE, "k": 9})

    def test_unknown_key(self):
        """Test typos are rejected."""
        with pytest.raises(ConfigValidationError, match="unknown key 'epoch'"):
            parse_config(overrides={**BASE, "epoch": 3})

    def test_every_problem_reported(self):
        """Test violations are aggregated."""
        with pytest.raises(ConfigValidationError) as info:
            parse_config(overrides={"preset": "nope", "dataset": "mnist", "momentum": 1.5, "lambda2": -1})
        errors = " | ".join(info.value.errors)
        assert "unknown preset" in errors
        assert "data_dir is required" in errors
        assert "momentum" in errors
        assert "lambda2" in errors

    def test_bad_type(self):
        """Test uncoercible values are reported."""
        with pytest.raises(ConfigValidationError, match="batch_size"):
            parse_config(overrides={**BASE, "batch_size": "many"})

    def test_mode_conflicts(self):
        """Test pipeline-only and decoupled-only keys are checked against the mode."""
        with pytest.raises(ConfigValidationError, match="stage_delay_ms only applies"):
            parse_config(overrides={**BASE, "stage_delay_ms": 5})
        with pytest.raises(ConfigValidationError, match="do not apply to mode bp-baseline"):
            parse_config(overrides={**BASE, "mode": "bp-baseline", "lambda2": 0.5})
        cfg = parse_config(overrides={**BASE, "mode": "bwbpf-pipeline", "stage_delay_ms": 5})
        assert cfg.stage_delay_ms == 5.0

    def test_shapes_follow_dataset(self):
        """Test input shape and class count per dataset."""
        cfg = parse_config(overrides={**BASE, "dataset": "mnist", "data_dir": "/data"})
        assert cfg.input_shape == (1, 28, 28)
        assert cfg.num_classes == 10
        assert cfg.build_spec().feature_shape[1:] == (1, 1)

    def test_replace_revalidates(self):
        """Test replace checks the new values."""
        cfg = parse_config(overrides=BASE)
        assert cfg.replace(k=2).k == 2
        with pytest.raises(ConfigValidationError):
            cfg.replace(k=50)

    def test_echo_round_trip(self, tmp_path):
        """Test a saved config loads back equal."""
        cfg = parse_config(overrides={**BASE, "k": 2, "train_subset": 100})
        path = tmp_path / "config.echo"
        cfg.save(path)
        assert ExperimentConfig.from_file(path) == cfg
