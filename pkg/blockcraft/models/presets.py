"""
Architecture presets.

``vgg-small`` and ``resnet-small`` are desk-scale stand-ins; the ``-like``
presets reproduce the unit counts of VGG-19 and ResNet-50 for long runs.
"""

from __future__ import annotations
import logging
from typing import Callable, Dict, List, Sequence, Tuple

from blockcraft.errors import ArchitectureError
from blockcraft.models.spec import ArchitectureSpec, StemSpec, UnitKind, UnitSpec

logger = logging.getLogger("blockcraft.presets")


def _halvings(extent: int) -> int:
    """Number of 2x2 pools that bring ``extent`` down to 1."""
    count = 0
    while extent >= 2:
        extent //= 2
        count += 1
    return count


def _vgg_units(
    stages: Sequence[int],
    channels: Sequence[int],
    in_channels: int,
    spatial: int,
) -> List[UnitSpec]:
    """
    Conv-bn-relu units grouped into stages.

    Pools close stages first; if more halvings are needed to reach 1x1,
    further pools go on the remaining units from the back. No pool is
    placed once the extent is 1.
    """
    total = sum(stages)
    stage_ends, boundary = [], 0
    for size in stages:
        boundary += size
        stage_ends.append(boundary - 1)
    others = [i for i in reversed(range(total)) if i not in stage_ends]
    pooled = set((stage_ends + others)[: _halvings(spatial)])

    units, index, current = [], 0, in_channels
    for size, width in zip(stages, channels):
        for _ in range(size):
            units.append(UnitSpec(UnitKind.VGG, current, width, pool=index in pooled))
            current = width
            index += 1
    return units


def _resnet_units(
    kind: UnitKind,
    stages: Sequence[int],
    widths: Sequence[int],
    in_channels: int,
    expansion: int,
) -> List[UnitSpec]:
    """Residual units; the first unit of every stage after the first has stride 2."""
    units, current = [], in_channels
    for stage, (size, width) in enumerate(zip(stages, widths)):
        out = width * expansion
        for i in range(size):
            stride = 2 if stage > 0 and i == 0 else 1
            mid = width if kind is UnitKind.BOTTLENECK else None
            units.append(UnitSpec(kind, current, out, stride=stride, mid_channels=mid))
            current = out
    return units


def _vgg_small(c: int, size: int, width: int) -> Tuple[List[UnitSpec], None]:
    w = width
    return _vgg_units([2, 2, 2, 2], [w, 2 * w, 4 * w, 8 * w], c, size), None


def _vgg_19_like(c: int, size: int, width: int) -> Tuple[List[UnitSpec], None]:
    w = width
    return _vgg_units([2, 2, 4, 4, 4], [w, 2 * w, 4 * w, 8 * w, 8 * w], c, size), None


def _resnet_small(c: int, size: int, width: int) -> Tuple[List[UnitSpec], StemSpec]:
    w = width
    units = _resnet_units(UnitKind.BASIC, [2, 2, 2, 2], [w, 2 * w, 4 * w, 8 * w], w, 1)
    return units, StemSpec(c, w)


def _resnet_50_like(c: int, size: int, width: int) -> Tuple[List[UnitSpec], StemSpec]:
    w = width
    units = _resnet_units(
        UnitKind.BOTTLENECK, [3, 4, 6, 3], [w, 2 * w, 4 * w, 8 * w], w, 4
    )
    return units, StemSpec(c, w)


PRESETS: Dict[str, Callable[[int, int, int], tuple]] = {
    "vgg-small": _vgg_small,
    "vgg-19-like": _vgg_19_like,
    "resnet-small": _resnet_small,
    "resnet-50-like": _resnet_50_like,
}


def preset_names() -> List[str]:
    """Known preset names."""
    return list(PRESETS)


def build_preset(
    name: str,
    num_classes: int = 10,
    input_size: int = 32,
    in_channels: int = 3,
    width: int = 16,
) -> ArchitectureSpec:
    """
    Build a validated preset architecture.

    Parameters
    ----------
    name : str
        ``vgg-small``, ``vgg-19-like``, ``resnet-small`` or ``resnet-50-like``
    num_classes : int
        Output classes
    input_size : int
        Square input extent (32 for CIFAR-10, 28 for MNIST)
    in_channels : int
        Input channels
    width : int
        Base channel count

    Returns
    -------
    ArchitectureSpec
        Spec whose symbolic shape check passed

    Raises
    ------
    ArchitectureError
        On an unknown name or a shape-propagation failure

    Examples
    --------
    >>> spec = build_preset("vgg-small", num_classes=10, input_size=28, in_channels=1)
    >>> spec.num_units, spec.feature_shape
    (8, (128, 1, 1))
    """
    builder = PRESETS.get(name)
    if builder is None:
        raise ArchitectureError(
            f"unknown preset '{name}', expected one of {', '.join(PRESETS)}"
        )
    if width < 1 or input_size < 1 or in_channels < 1:
        raise ArchitectureError(
            f"width, input_size and in_channels must be positive "
            f"(got {width}, {input_size}, {in_channels})"
        )
    units, stem = builder(in_channels, input_size, width)
    spec = ArchitectureSpec(
        name=name,
        input_shape=(in_channels, input_size, input_size),
        num_classes=num_classes,
        units=tuple(units),
        stem=stem,
    )
    logger.debug(
        "built preset %s: %d units, features %s", name, spec.num_units, spec.feature_shape
    )
    return spec
