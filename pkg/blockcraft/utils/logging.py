"""
Logging utilities for training runs.

Provides structured logging keyed by epoch and step.
"""

from __future__ import annotations
import logging
import sys
from typing import TYPE_CHECKING, Any, Optional

if TYPE_CHECKING:
    from blockcraft.training.state import TrainState


def setup_logging(
    level: int = logging.INFO,
    format_string: Optional[str] = None,
    filename: Optional[str] = None,
) -> None:
    """
    Set up logging for a run.

    Parameters
    ----------
    level : int
        Logging level
    format_string : Optional[str]
        Custom format string
    filename : Optional[str]
        Log file path
    """
    if format_string is None:
        format_string = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"

    handlers = []

    console = logging.StreamHandler(sys.stdout)
    console.setLevel(level)
    console.setFormatter(logging.Formatter(format_string))
    handlers.append(console)

    if filename:
        file_handler = logging.FileHandler(filename)
        file_handler.setLevel(level)
        file_handler.setFormatter(logging.Formatter(format_string))
        handlers.append(file_handler)

    logging.basicConfig(level=level, handlers=handlers, format=format_string, force=True)


class TrainingLogger:
    """
    Logger stamping every message with the training position.

    Parameters
    ----------
    state : TrainState
        State whose epoch and step prefix each message
    name : str
        Logger name under ``blockcraft.``
    level : Optional[int]
        Logging level (inherited when omitted)

    Examples
    --------
    >>> log = TrainingLogger(state, "trainer")
    >>> log.info("starting epoch")
    >>> log.event("epoch_end", test_error=0.031, loss=0.12)
    """

    def __init__(
        self,
        state: "TrainState",
        name: str = "trainer",
        level: Optional[int] = None,
    ) -> None:
        """Initialize logger."""
        self._state = state
        self._logger = logging.getLogger(f"blockcraft.{name}")
        if level is not None:
            self._logger.setLevel(level)

    def _prefix(self) -> str:
        return f"[epoch={self._state.epoch} step={self._state.step}]"

    def debug(self, message: str, *args: Any) -> None:
        """Log debug message."""
        self._logger.debug(f"{self._prefix()} {message}", *args)

    def info(self, message: str, *args: Any) -> None:
        """Log info message."""
        self._logger.info(f"{self._prefix()} {message}", *args)

    def event(self, event_type: str, **details: Any) -> None:
        """
        Log a structured training event.

        Parameters
        ----------
        event_type : str
            Type of event (e.g., "epoch_end", "run_start")
        **details
            ``key=value`` pairs; floats are printed with 6 significant digits
        """
        parts = [self._prefix(), event_type]
        for key, value in details.items():
            if isinstance(value, float):
                parts.append(f"{key}={value:.6g}")
            else:
                parts.append(f"{key}={value}")
        self._logger.info(" ".join(parts))
