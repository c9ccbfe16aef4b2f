"""Exception hierarchy shared by all modules.

Each error carries the name of the module that raised it so the CLI can map
it onto an exit status with context.
"""
from __future__ import annotations


class DiracSCError(Exception):
    """Base class for all library errors."""

    module = "diracsc"
    exit_code = 3

    def __init__(self, *args, module: str | None = None):
        super().__init__(*args)
        if module is not None:
            self.module = module


class FieldConfigError(DiracSCError):
    """Non-finite field values or an inconsistent field declaration."""

    module = "fields"
    exit_code = 2


class IntegrationError(DiracSCError):
    """The adaptive integrator failed (step underflow, non-finite state)."""

    module = "dynamics"

    def __init__(self, message, time=None):
        super().__init__(message if time is None else f"{message} at t={time:.17g}")
        self.time = time


class ConjugatePointError(DiracSCError):
    """A singular position block of the stability matrix at an endpoint."""

    module = "dynamics"
    exit_code = 4


class ToleranceError(DiracSCError):
    """A conserved quantity drifted beyond the requested tolerance."""

    module = "spin"


class ModeConversionError(DiracSCError):
    """|B| vanishes, so the strong-coupling eigenvectors are undefined."""

    module = "pauli"
    exit_code = 4

    def __init__(self, message, times=()):
        super().__init__(message)
        self.times = tuple(times)


class ConvergenceError(DiracSCError):
    """Newton or quadrature iteration did not converge."""

    module = "orbits"


class DegenerateOrbitError(DiracSCError):
    """Orbit amplitude requested for a non-isolated orbit."""

    module = "orbits"
    exit_code = 4


class DomainError(DiracSCError):
    """Input outside the domain where an estimate is defined."""

    module = "trace"
    exit_code = 4


class InsufficientSpectrumError(DiracSCError):
    """The oracle spectrum does not reach far enough to bound the tail."""

    module = "trace"
    exit_code = 4


class ConfigError(DiracSCError):
    """Malformed or semantically invalid run configuration."""

    module = "cli"
    exit_code = 2

    def __init__(self, message, line=None, column=None, key=None):
        loc = []
        if line is not None:
            loc.append(f"line {line}")
        if column is not None:
            loc.append(f"column {column}")
        if key is not None:
            loc.append(f"key '{key}'")
        super().__init__(message + (f" ({', '.join(loc)})" if loc else ""))
        self.line = line
        self.column = column
        self.key = key
