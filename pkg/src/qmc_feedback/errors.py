"""Shared exception types."""

from __future__ import annotations


class SolverError(RuntimeError):
    """A numerical solve failed (non-convergence or a singular step matrix).

    Attributes carry enough context to locate the failure: ``step`` is the
    time-step or node index, ``residual`` the last residual norm, when known.
    """

    def __init__(self, message: str, step: int | None = None,
                 residual: float | None = None, node: int | None = None):
        super().__init__(message)
        self.step = step
        self.residual = residual
        self.node = node


class ConfigError(ValueError):
    """Invalid experiment configuration (maps to CLI exit status 2)."""
