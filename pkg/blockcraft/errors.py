"""
Exception hierarchy for blockcraft.

Every error derives from :class:`BlockcraftError` and from the builtin
exception callers would naturally catch, so ``except ValueError`` keeps
working for shape and configuration problems.
"""

from __future__ import annotations
from typing import List, Optional, Sequence


class BlockcraftError(Exception):
    """Base class for all blockcraft errors."""


class ShapeError(BlockcraftError, ValueError):
    """Incompatible shapes, invalid axes or empty extents."""


class NonFiniteError(BlockcraftError, FloatingPointError):
    """
    NaN or Inf encountered.

    Parameters
    ----------
    message : str
        Description of the failure
    location : Optional[str]
        Where the value was found (parameter name, coordinate, op kind)
    """

    def __init__(self, message: str, location: Optional[str] = None) -> None:
        self.location = location
        if location:
            message = f"{message} (at {location})"
        super().__init__(message)


class LabelError(BlockcraftError, ValueError):
    """Class label outside [0, N)."""


class TapeError(BlockcraftError, RuntimeError):
    """Misuse of the autodiff tape."""


class ArchitectureError(BlockcraftError, ValueError):
    """Unknown preset or inconsistent architecture."""


class PartitionError(BlockcraftError, ValueError):
    """Invalid block partition request."""


class DataFormatError(BlockcraftError, ValueError):
    """
    Malformed dataset file.

    Parameters
    ----------
    message : str
        Description of the failure
    path : Optional[str]
        Offending file
    offset : Optional[int]
        Byte offset of the first bad byte, when known
    """

    def __init__(
        self,
        message: str,
        path: Optional[str] = None,
        offset: Optional[int] = None,
    ) -> None:
        self.path = path
        self.offset = offset
        parts = [message]
        if path is not None:
            parts.append(f"file={path}")
        if offset is not None:
            parts.append(f"byte offset={offset}")
        super().__init__(", ".join(parts))


class EmptyInputError(BlockcraftError, ValueError):
    """Degenerate empty input (dataset, run, sample count)."""


class ConfigValidationError(BlockcraftError, ValueError):
    """
    Aggregated configuration problems.

    Attributes
    ----------
    errors : List[str]
        Every violation found, in discovery order
    """

    def __init__(self, errors: Sequence[str]) -> None:
        self.errors: List[str] = list(errors)
        bullet = "\n  - "
        super().__init__(
            f"{len(self.errors)} configuration error(s):{bullet}"
            + bullet.join(self.errors)
        )


class PipelineError(BlockcraftError, RuntimeError):
    """
    Failure inside the pipeline executor.

    Parameters
    ----------
    message : str
        Description of the failure
    stage : Optional[str]
        Identity of the failing stage worker
    """

    def __init__(self, message: str, stage: Optional[str] = None) -> None:
        self.stage = stage
        if stage is not None:
            message = f"[{stage}] {message}"
        super().__init__(message)
