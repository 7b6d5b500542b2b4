"""Exception hierarchy for spectralab.

Every error raised on purpose by the lab derives from :class:`SpectraError`
so the CLI can map it to an exit status without swallowing programming errors.
"""
from __future__ import annotations

from typing import Any


class SpectraError(Exception):
    """Base class for all lab errors."""


class ConfigurationError(SpectraError, ValueError):
    """Invalid disorder spec, experiment config or override."""

    def __init__(self, message: str, problems: list[str] | None = None):
        self.problems = list(problems or [])
        if self.problems:
            message = message + "\n" + "\n".join(f"  - {p}" for p in self.problems)
        super().__init__(message)


class SingularBondError(SpectraError, ValueError):
    """A transfer matrix was requested across a bond of weight zero."""


class UnboundedTransferError(SpectraError, ValueError):
    """No uniform transfer-matrix bound exists (alpha0 = 0)."""


class DegenerateEigenvalueError(SpectraError, ValueError):
    """The eigenvalue is not simple enough for first/second order perturbation."""

    def __init__(self, index: int, gap: float, threshold: float):
        self.index = index
        self.gap = gap
        self.threshold = threshold
        super().__init__(
            f"eigenvalue #{index} is not simple: gap={gap:.3e} <= threshold={threshold:.3e}"
        )


class ZeroEnergyError(SpectraError, ValueError):
    """A normalized form or closed form would divide by a zero energy."""


class SolverError(SpectraError, RuntimeError):
    """Eigensolver failure, tagged with what is needed to reproduce the field."""

    def __init__(self, message: str, source: dict[str, Any] | None = None):
        self.source = dict(source or {})
        if self.source:
            message = f"{message} (source={self.source})"
        super().__init__(message)


class LocalizationGateError(SpectraError, ValueError):
    """Reference energy failed the empirical localization certificate."""


class CheckpointMismatchError(SpectraError, RuntimeError):
    """Checkpoint or manifest belongs to a different configuration."""


class RunInterrupted(SpectraError, RuntimeError):
    """The runner stopped early on request; the checkpoint can be resumed."""
