"""
Configuration loading utilities.

Supports YAML and JSON experiment files with flat keys; command-line
flags override file values.
"""

from __future__ import annotations
import json
import math
from dataclasses import dataclass, fields, is_dataclass
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Type, TypeVar, Union

from blockcraft.errors import ArchitectureError, ConfigValidationError

T = TypeVar("T", bound="FileConfig")

PathLike = Union[str, Path]


class ConfigLoader:
    """
    Load configuration from various file formats.

    Examples
    --------
    >>> config = ConfigLoader.load("experiment.yaml")
    >>> print(config["preset"])
    """

    @staticmethod
    def load(filepath: PathLike) -> Dict[str, Any]:
        """
        Load configuration from file.

        Supports .yaml, .yml, and .json files.

        Parameters
        ----------
        filepath : PathLike
            Path to configuration file

        Returns
        -------
        Dict[str, Any]
            Configuration dictionary (empty for an empty file)
        """
        path = Path(filepath)

        if not path.exists():
            raise FileNotFoundError(f"Configuration file not found: {filepath}")

        suffix = path.suffix.lower()

        if suffix in (".yaml", ".yml"):
            data = ConfigLoader._load_yaml(path)
        elif suffix in (".json", ".echo"):
            data = ConfigLoader._load_json(path)
        else:
            raise ValueError(f"Unsupported config format: {suffix}")
        if data is None:
            return {}
        if not isinstance(data, dict):
            raise ValueError(f"Configuration file must hold a mapping: {filepath}")
        return data

    @staticmethod
    def _load_yaml(path: Path) -> Any:
        """Load YAML file."""
        try:
            import yaml
        except ImportError:
            raise ImportError("PyYAML is required for YAML config files")

        with open(path, "r") as f:
            return yaml.safe_load(f)

    @staticmethod
    def _load_json(path: Path) -> Any:
        """Load JSON file."""
        text = path.read_text()
        if not text.strip():
            return None
        return json.loads(text)

    @staticmethod
    def save(config: Dict[str, Any], filepath: PathLike) -> None:
        """
        Save configuration to file.

        ``.echo`` files are written as sorted JSON.

        Parameters
        ----------
        config : Dict[str, Any]
            Configuration dictionary
        filepath : PathLike
            Output path
        """
        path = Path(filepath)
        suffix = path.suffix.lower()

        if suffix in (".yaml", ".yml"):
            try:
                import yaml
            except ImportError:
                raise ImportError("PyYAML is required for YAML config files")

            with open(path, "w") as f:
                yaml.dump(config, f, default_flow_style=False)

        elif suffix in (".json", ".echo"):
            with open(path, "w") as f:
                json.dump(config, f, indent=2, sort_keys=True)
        else:
            raise ValueError(f"Unsupported config format: {suffix}")


@dataclass
class FileConfig:
    """
    Base class for typed, flat configuration.

    Unlike a permissive loader, :meth:`from_dict` rejects unknown keys and
    values of the wrong type, collecting every problem into one
    :class:`ConfigValidationError`.

    Examples
    --------
    >>> @dataclass
    ... class RunConfig(FileConfig):
    ...     epochs: int = 5
    ...     seed: int = 0
    ...
    >>> RunConfig.from_dict({"epochs": "3"}).epochs
    3
    """

    @classmethod
    def _coerce(cls, name: str, value: Any, default: Any) -> Any:
        if value is None:
            return None
        kind = cls.field_kinds().get(name)
        if kind is None and default is not None:
            kind = type(default)
        if kind is bool:
            if isinstance(value, str):
                lowered = value.strip().lower()
                if lowered in ("1", "true", "yes", "on"):
                    return True
                if lowered in ("0", "false", "no", "off"):
                    return False
                raise ValueError(f"not a boolean: {value!r}")
            return bool(value)
        if kind is int:
            if isinstance(value, float) and not value.is_integer():
                raise ValueError(f"not an integer: {value!r}")
            return int(value)
        if kind is float:
            return float(value)
        if kind is str:
            return str(value)
        return value

    @classmethod
    def field_kinds(cls) -> Dict[str, type]:
        """Scalar type of fields whose default does not reveal it (e.g. ``None``)."""
        return {}

    @classmethod
    def from_dict(cls: Type[T], data: Mapping[str, Any]) -> T:
        """
        Create instance from dictionary.

        Raises
        ------
        ConfigValidationError
            Listing every unknown key and uncoercible value
        """
        if not is_dataclass(cls):
            raise TypeError(f"{cls.__name__} must be a dataclass")

        defaults = {f.name: f.default for f in fields(cls)}
        errors: List[str] = []
        values: Dict[str, Any] = {}
        for key, value in data.items():
            if key not in defaults:
                errors.append(f"unknown key '{key}'")
                continue
            try:
                values[key] = cls._coerce(key, value, defaults[key])
            except (TypeError, ValueError) as exc:
                errors.append(f"{key}: {exc}")
        if errors:
            raise ConfigValidationError(errors)
        return cls(**values)

    @classmethod
    def from_file(cls: Type[T], filepath: PathLike) -> T:
        """Create instance from a YAML or JSON file."""
        return cls.from_dict(ConfigLoader.load(filepath))

    def to_dict(self) -> Dict[str, Any]:
        """Convert to a flat dictionary."""
        return {f.name: getattr(self, f.name) for f in fields(self)}

    def save(self, filepath: PathLike) -> None:
        """Save to file."""
        ConfigLoader.save(self.to_dict(), filepath)


MODES = ("bwbpf-seq", "bwbpf-pipeline", "bp-baseline")
DATASETS = ("cifar10", "mnist", "synthetic")
PRECISIONS = ("float32", "float64")
SCHEDULES = ("cosine", "step")
AUGMENT_POLICIES = ("none", "pad4-crop-flip")


@dataclass
class ExperimentConfig(FileConfig):
    """
    Every setting of one experiment, as flat keys.

    Defaults: unit loss weights, batch
    32, learning rate 0.1 decayed to 0.0001 by a cosine schedule,
    momentum 0.9 and weight decay 0.0001.

    Attributes
    ----------
    preset : Optional[str]
        Architecture preset (required)
    dataset : Optional[str]
        ``cifar10``, ``mnist`` or ``synthetic`` (required)
    data_dir : Optional[str]
        Directory of the dataset files (real datasets)
    k : int
        Block count
    mode : str
        ``bwbpf-seq``, ``bwbpf-pipeline`` or ``bp-baseline``
    stage_delay_ms : float
        Injected per-stage delay in pipeline mode
    train_subset, test_subset : Optional[int]
        Use only the leading samples of a split

    Examples
    --------
    >>> cfg = parse_config(overrides={"preset": "vgg-small", "dataset": "synthetic"})
    >>> cfg.sgd.lr0, cfg.loss_weights.lambda2
    (0.1, 1.0)
    """

    preset: Optional[str] = None
    dataset: Optional[str] = None
    data_dir: Optional[str] = None
    k: int = 4
    mode: str = "bwbpf-seq"
    lambda1: float = 1.0
    lambda2: float = 1.0
    lr0: float = 0.1
    lr_final: float = 1e-4
    momentum: float = 0.9
    weight_decay: float = 1e-4
    batch_size: int = 32
    epochs: int = 5
    schedule: str = "cosine"
    seed: int = 0
    precision: str = "float32"
    output_dir: str = "runs"
    augment: str = "none"
    width: int = 16
    synthetic_classes: int = 10
    synthetic_per_class: int = 64
    synthetic_size: int = 8
    train_subset: Optional[int] = None
    test_subset: Optional[int] = None
    queue_capacity: int = 2
    stage_delay_ms: float = 0.0
    log_every: int = 50

    @classmethod
    def field_kinds(cls) -> Dict[str, type]:
        return {
            "preset": str,
            "dataset": str,
            "data_dir": str,
            "train_subset": int,
            "test_subset": int,
        }

    @property
    def sgd(self):
        """Optimizer view."""
        from blockcraft.training.optimizer import SgdConfig

        return SgdConfig(
            lr0=self.lr0,
            lr_final=self.lr_final,
            momentum=self.momentum,
            weight_decay=self.weight_decay,
            batch_size=self.batch_size,
            epochs=self.epochs,
            schedule=self.schedule,
        )

    @property
    def loss_weights(self):
        """Loss-weight view."""
        from blockcraft.models.network import LossWeights

        return LossWeights(self.lambda1, self.lambda2)

    @property
    def input_shape(self) -> tuple:
        """``(C, H, W)`` of one sample of the configured dataset."""
        if self.dataset == "cifar10":
            return (3, 32, 32)
        if self.dataset == "mnist":
            return (1, 28, 28)
        return (1, self.synthetic_size, self.synthetic_size)

    @property
    def num_classes(self) -> int:
        """Classes of the configured dataset."""
        return self.synthetic_classes if self.dataset == "synthetic" else 10

    @property
    def run_id(self) -> str:
        """Identifier used for output directories and metrics rows."""
        return f"{self.preset}-{self.dataset}-k{self.k}-{self.mode}-s{self.seed}"

    def build_spec(self):
        """Architecture spec for the configured preset and dataset."""
        from blockcraft.models.presets import build_preset

        channels, size, _ = self.input_shape
        return build_preset(
            self.preset,
            num_classes=self.num_classes,
            input_size=size,
            in_channels=channels,
            width=self.width,
        )

    def problems(self) -> List[str]:
        """Every violated constraint, as messages."""
        from blockcraft.models.presets import preset_names
        from blockcraft.training.optimizer import SgdConfig

        out: List[str] = []
        if self.preset is None:
            out.append("preset is required")
        elif self.preset not in preset_names():
            out.append(f"unknown preset '{self.preset}' (known: {', '.join(preset_names())})")
        if self.dataset is None:
            out.append("dataset is required")
        elif self.dataset not in DATASETS:
            out.append(f"unknown dataset '{self.dataset}' (known: {', '.join(DATASETS)})")
        elif self.dataset != "synthetic" and not self.data_dir:
            out.append(f"data_dir is required for dataset '{self.dataset}'")
        if self.mode not in MODES:
            out.append(f"unknown mode '{self.mode}' (known: {', '.join(MODES)})")
        if self.precision not in PRECISIONS:
            out.append(f"precision must be one of {', '.join(PRECISIONS)}")
        if self.schedule not in SCHEDULES:
            out.append(f"schedule must be one of {', '.join(SCHEDULES)}")
        if self.augment not in AUGMENT_POLICIES:
            out.append(f"augment must be one of {', '.join(AUGMENT_POLICIES)}")
        for name in ("lambda1", "lambda2"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value >= 0):
                out.append(f"{name} must be finite and >= 0, got {value}")
        if self.schedule in SCHEDULES:
            try:
                SgdConfig(
                    self.lr0, self.lr_final, self.momentum, self.weight_decay,
                    self.batch_size, self.epochs, self.schedule,
                )
            except ValueError as exc:
                out.extend(str(exc).split("; "))
        for name in ("width", "synthetic_per_class", "synthetic_size", "queue_capacity", "log_every"):
            if getattr(self, name) < 1:
                out.append(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.synthetic_classes < 2:
            out.append(f"synthetic_classes must be >= 2, got {self.synthetic_classes}")
        for name in ("train_subset", "test_subset"):
            value = getattr(self, name)
            if value is not None and value < 1:
                out.append(f"{name} must be >= 1, got {value}")
        if not (math.isfinite(self.stage_delay_ms) and self.stage_delay_ms >= 0):
            out.append(f"stage_delay_ms must be >= 0, got {self.stage_delay_ms}")
        out.extend(self._k_problems(out))
        out.extend(self._mode_conflicts())
        return out

    def _k_problems(self, earlier: List[str]) -> List[str]:
        if self.k < 1:
            return [f"k must be >= 1, got {self.k}"]
        if any(p.startswith(("unknown preset", "preset", "unknown dataset", "dataset", "width", "synthetic")) for p in earlier):
            return []
        try:
            units = self.build_spec().num_units
        except ArchitectureError as exc:
            return [f"preset '{self.preset}' does not fit the input: {exc}"]
        if self.k > units:
            return [f"k={self.k} exceeds the {units} units of preset '{self.preset}'"]
        return []

    def _mode_conflicts(self) -> List[str]:
        out = []
        if self.mode != "bwbpf-pipeline":
            if self.stage_delay_ms > 0:
                out.append(f"stage_delay_ms only applies to mode bwbpf-pipeline (mode is {self.mode})")
            if self.queue_capacity != 2:
                out.append(f"queue_capacity only applies to mode bwbpf-pipeline (mode is {self.mode})")
        if self.mode == "bp-baseline" and (self.lambda1 != 1.0 or self.lambda2 != 1.0):
            out.append("lambda1/lambda2 do not apply to mode bp-baseline")
        return out

    def validate(self) -> "ExperimentConfig":
        """
        Raise if any constraint is violated.

        Raises
        ------
        ConfigValidationError
            Listing every problem
        """
        problems = self.problems()
        if problems:
            raise ConfigValidationError(problems)
        return self

    def replace(self, **changes: Any) -> "ExperimentConfig":
        """Validated copy with some keys changed."""
        data = self.to_dict()
        data.update(changes)
        return ExperimentConfig.from_dict(data).validate()


def parse_config(
    path: Optional[PathLike] = None,
    overrides: Optional[Mapping[str, Any]] = None,
) -> ExperimentConfig:
    """
    Build a validated experiment config.

    File values are applied first, then ``overrides`` (command-line
    flags); keys whose override is ``None`` are left alone.

    Parameters
    ----------
    path : Optional[PathLike]
        YAML or JSON file of flat keys
    overrides : Optional[Mapping[str, Any]]
        Values that win over the file

    Raises
    ------
    ConfigValidationError
        Listing every unknown key, bad value and violated constraint
    """
    data: Dict[str, Any] = dict(ConfigLoader.load(path)) if path is not None else {}
    for key, value in (overrides or {}).items():
        if value is not None:
            data[key] = value
    return ExperimentConfig.from_dict(data).validate()
