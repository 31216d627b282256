"""
Error types raised by the evolving-domain toolkit
"""
from typing import Optional, Sequence


class EvolvingSpacesError(Exception):
    """Base class for numeric failures; the CLI maps these to exit code 3."""


class IntegrationError(EvolvingSpacesError):
    """Velocity field produced a non-finite value during flow integration."""

    def __init__(self, message: str, t: Optional[float] = None, x=None):
        super().__init__(message)
        self.t = t
        self.x = x


class DegenerateFlowError(EvolvingSpacesError):
    """Jacobian determinant of the flow map is not positive."""


class InversionError(EvolvingSpacesError):
    """Reverse-time integration did not reproduce the queried point."""

    def __init__(self, message: str, residual: float = float("nan")):
        super().__init__(message)
        self.residual = residual


class InvalidMeshError(EvolvingSpacesError, ValueError):
    """Mesh parameters or connectivity are invalid."""


class AssemblyError(EvolvingSpacesError):
    """Pushed geometry is tangled or a Gram matrix is singular."""


class DomainError(EvolvingSpacesError):
    """Evaluation point lies outside the evolved domain."""


class UnsupportedPivotError(EvolvingSpacesError):
    """Pivot space is not available for the mesh topology or operation."""


class NonConvergenceError(EvolvingSpacesError):
    """Newton iteration stagnated."""

    def __init__(self, message: str, residual: float, iterations: int):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations


class DivergedStateError(EvolvingSpacesError):
    """Nonlinear residual became non-finite."""


class ConfigError(Exception):
    """Scenario file could not be parsed or validated."""

    def __init__(self, message: str, lines: Sequence[int] = ()):
        self.lines = tuple(lines)
        if self.lines:
            where = ", ".join(str(n) for n in self.lines)
            label = "line" if len(self.lines) == 1 else "lines"
            message = f"{label} {where}: {message}"
        super().__init__(message)
