"""Exception hierarchy and the exit codes the CLI maps them to.

Exit codes:
    0  ok
    2  configuration error (argparse usage errors share this code)
    3  simulator divergence or a non-finite cost/forecast
    4  I/O failure (missing artifacts, unwritable output directory)
"""

from __future__ import annotations

from typing import Optional

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DIVERGENCE = 3
EXIT_IO = 4


class PotlineError(Exception):
    """Base class for potline's own errors."""


class ConfigError(PotlineError, ValueError):
    """Invalid or inconsistent experiment configuration."""


class NonFiniteError(PotlineError, ArithmeticError):
    """A derivative, cost or forecast became NaN/Inf."""

    def __init__(
        self,
        message: str,
        step: Optional[int] = None,
        epoch: Optional[int] = None,
        batch: Optional[int] = None,
    ) -> None:
        super().__init__(message)
        self.step = step
        self.epoch = epoch
        self.batch = batch


class DivergenceError(NonFiniteError):
    """The simulated state left the valid envelope (non-finite or mass <= 0)."""

    def __init__(
        self, message: str, step: Optional[int] = None, series: Optional[int] = None
    ) -> None:
        super().__init__(message, step=step)
        self.series = series

    def __str__(self) -> str:
        msg = super().__str__()
        if self.series is not None:
            msg = f"series {self.series}: {msg}"
        return msg


class ZeroStdError(PotlineError, ValueError):
    """A training-set standard deviation used for normalization is zero."""


def exit_code_for(exc: BaseException) -> int:
    if isinstance(exc, ConfigError):
        return EXIT_CONFIG
    if isinstance(exc, NonFiniteError):
        return EXIT_DIVERGENCE
    if isinstance(exc, OSError):
        return EXIT_IO
    return 1
