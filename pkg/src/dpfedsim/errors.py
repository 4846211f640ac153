"""Exception types shared across the library."""

from __future__ import annotations

__all__ = ["ConfigError", "FitError", "CalibrationError", "SimulationError"]


class ConfigError(ValueError):
    """Invalid run configuration. Carries every violation found, not just the first."""

    def __init__(self, violations: list[str] | str):
        if isinstance(violations, str):
            violations = [violations]
        self.violations = list(violations)
        super().__init__("; ".join(self.violations))


class FitError(RuntimeError):
    """Curve fitting could not produce a usable result."""


class CalibrationError(RuntimeError):
    """Noise calibration could not reach the requested privacy target."""


class SimulationError(RuntimeError):
    """A simulation run failed in a way that cannot be recovered."""
