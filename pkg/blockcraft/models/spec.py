"""
Declarative architecture descriptions.

An :class:`ArchitectureSpec` is a stem plus a sequence of indivisible
units. Units are the atoms of block partitioning: a residual shortcut
never crosses a unit boundary.
"""

from __future__ import annotations
import json
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Dict, List, Optional, Tuple

from blockcraft.errors import ArchitectureError, ShapeError
from blockcraft.nn.functional import conv_output_extent

Shape3 = Tuple[int, int, int]


class UnitKind(Enum):
    """Kinds of partition atoms."""

    VGG = "vgg"
    BASIC = "basic"
    BOTTLENECK = "bottleneck"


@dataclass(frozen=True)
class UnitSpec:
    """
    One indivisible unit.

    Attributes
    ----------
    kind : UnitKind
        ``vgg`` (conv-bn-relu, optional 2x2 max-pool), ``basic`` (two 3x3
        convs plus shortcut) or ``bottleneck`` (1x1, 3x3, 1x1 plus shortcut)
    in_channels : int
        Input channels
    out_channels : int
        Output channels
    stride : int
        Stride of the first spatial conv (residual units)
    pool : bool
        Trailing max-pool (vgg units)
    mid_channels : Optional[int]
        Bottleneck width
    """

    kind: UnitKind
    in_channels: int
    out_channels: int
    stride: int = 1
    pool: bool = False
    mid_channels: Optional[int] = None

    @property
    def residual(self) -> bool:
        """Whether the unit carries a shortcut."""
        return self.kind is not UnitKind.VGG

    @property
    def projection(self) -> bool:
        """Whether the shortcut needs an explicit 1x1 conv."""
        return self.residual and (
            self.stride != 1 or self.in_channels != self.out_channels
        )

    def output_shape(self, shape: Shape3) -> Shape3:
        """
        Symbolic output shape for an input ``(C, H, W)``.

        Raises
        ------
        ArchitectureError
            On a channel mismatch, a spatial collapse or a shortcut whose
            shape differs from the main path
        """
        channels, height, width = shape
        if channels != self.in_channels:
            raise ArchitectureError(
                f"{self.kind.value} unit expects {self.in_channels} channels, "
                f"receives {channels}"
            )
        try:
            if self.kind is UnitKind.VGG:
                h = conv_output_extent(height, 3, 1, 1)
                w = conv_output_extent(width, 3, 1, 1)
                if self.pool:
                    h = conv_output_extent(h, 2, 2, 0)
                    w = conv_output_extent(w, 2, 2, 0)
                return (self.out_channels, h, w)
            if self.kind is UnitKind.BASIC:
                h = conv_output_extent(height, 3, self.stride, 1)
                w = conv_output_extent(width, 3, self.stride, 1)
                h = conv_output_extent(h, 3, 1, 1)
                w = conv_output_extent(w, 3, 1, 1)
            else:
                if not self.mid_channels:
                    raise ArchitectureError("bottleneck unit needs mid_channels")
                h = conv_output_extent(height, 3, self.stride, 1)
                w = conv_output_extent(width, 3, self.stride, 1)
            if self.projection:
                sh = conv_output_extent(height, 1, self.stride, 0)
                sw = conv_output_extent(width, 1, self.stride, 0)
            else:
                sh, sw = height, width
        except ShapeError as exc:
            raise ArchitectureError(f"shape propagation failed: {exc}") from exc
        if (sh, sw) != (h, w):
            raise ArchitectureError(
                f"shortcut shape {(sh, sw)} differs from main path {(h, w)}"
            )
        return (self.out_channels, h, w)

    def to_dict(self) -> Dict[str, Any]:
        """Plain-data form."""
        data: Dict[str, Any] = {
            "kind": self.kind.value,
            "in_channels": self.in_channels,
            "out_channels": self.out_channels,
            "stride": self.stride,
            "pool": self.pool,
        }
        if self.mid_channels is not None:
            data["mid_channels"] = self.mid_channels
        return data

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "UnitSpec":
        """Inverse of :meth:`to_dict`."""
        return cls(
            kind=UnitKind(data["kind"]),
            in_channels=int(data["in_channels"]),
            out_channels=int(data["out_channels"]),
            stride=int(data.get("stride", 1)),
            pool=bool(data.get("pool", False)),
            mid_channels=data.get("mid_channels"),
        )


@dataclass(frozen=True)
class StemSpec:
    """Initial conv-bn-relu ahead of the first unit."""

    in_channels: int
    out_channels: int
    kernel: int = 3
    stride: int = 1

    def output_shape(self, shape: Shape3) -> Shape3:
        """Symbolic output shape."""
        channels, height, width = shape
        if channels != self.in_channels:
            raise ArchitectureError(
                f"stem expects {self.in_channels} channels, receives {channels}"
            )
        pad = (self.kernel - 1) // 2
        try:
            h = conv_output_extent(height, self.kernel, self.stride, pad)
            w = conv_output_extent(width, self.kernel, self.stride, pad)
        except ShapeError as exc:
            raise ArchitectureError(f"shape propagation failed: {exc}") from exc
        return (self.out_channels, h, w)

    def to_dict(self) -> Dict[str, Any]:
        """Plain-data form."""
        return {
            "in_channels": self.in_channels,
            "out_channels": self.out_channels,
            "kernel": self.kernel,
            "stride": self.stride,
        }


@dataclass(frozen=True)
class ArchitectureSpec:
    """
    Validated network description.

    Construction runs symbolic shape propagation, so every spec in
    circulation is consistent end to end.

    Attributes
    ----------
    name : str
        Preset or user name
    input_shape : Shape3
        ``(C, H, W)`` of one sample
    num_classes : int
        Output classes N
    units : Tuple[UnitSpec, ...]
        Partition atoms in network order
    stem : Optional[StemSpec]
        Initial conv, placed in block 1
    """

    name: str
    input_shape: Shape3
    num_classes: int
    units: Tuple[UnitSpec, ...]
    stem: Optional[StemSpec] = None
    _shapes: Tuple[Shape3, ...] = field(default=(), init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        object.__setattr__(self, "input_shape", tuple(int(v) for v in self.input_shape))
        object.__setattr__(self, "units", tuple(self.units))
        if self.num_classes < 2:
            raise ArchitectureError(f"num_classes must be >= 2, got {self.num_classes}")
        if not self.units:
            raise ArchitectureError("architecture needs at least one unit")
        object.__setattr__(self, "_shapes", tuple(self._propagate()))

    def _propagate(self) -> List[Shape3]:
        shape = self.input_shape
        if self.stem is not None:
            shape = self.stem.output_shape(shape)
        shapes = []
        for index, unit in enumerate(self.units):
            try:
                shape = unit.output_shape(shape)
            except ArchitectureError as exc:
                raise ArchitectureError(f"{self.name} unit {index}: {exc}") from exc
            shapes.append(shape)
        return shapes

    @property
    def num_units(self) -> int:
        """Unit count U."""
        return len(self.units)

    def propagate(self) -> List[Shape3]:
        """Per-unit output shapes ``(C, H, W)``."""
        return list(self._shapes)

    @property
    def feature_shape(self) -> Shape3:
        """Shape entering the classifier."""
        return self._shapes[-1]

    def to_dict(self) -> Dict[str, Any]:
        """Plain-data form."""
        return {
            "name": self.name,
            "input_shape": list(self.input_shape),
            "num_classes": self.num_classes,
            "stem": self.stem.to_dict() if self.stem is not None else None,
            "units": [unit.to_dict() for unit in self.units],
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "ArchitectureSpec":
        """Inverse of :meth:`to_dict`."""
        stem = data.get("stem")
        return cls(
            name=data["name"],
            input_shape=tuple(data["input_shape"]),
            num_classes=int(data["num_classes"]),
            units=tuple(UnitSpec.from_dict(u) for u in data["units"]),
            stem=StemSpec(**stem) if stem else None,
        )

    def to_json(self) -> str:
        """Indented JSON text."""
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_json(cls, text: str) -> "ArchitectureSpec":
        """Parse :meth:`to_json` output."""
        return cls.from_dict(json.loads(text))
