"""Exception taxonomy shared by every module.

Each simulation failure class carries a ``cause`` string. The CLI maps these
causes onto distinct exit codes, so a run's termination reason is visible
both in the summary JSON and in the process status.
"""

from __future__ import annotations


class VacuumStarError(Exception):
    """Base class for all package errors."""

    cause = "error"


class ConfigError(VacuumStarError):
    cause = "bad-config"


class IntegrationError(VacuumStarError):
    """The background ODE integration failed; ``t_last`` is the last valid time."""

    cause = "integration"

    def __init__(self, message: str, t_last: float):
        super().__init__(f"{message} (last valid t={t_last:.6g})")
        self.t_last = t_last


class RangeQueryError(VacuumStarError, ValueError):
    cause = "range"


class InsufficientDataError(VacuumStarError, ValueError):
    cause = "insufficient-data"


class OriginSingularityError(VacuumStarError, ValueError):
    cause = "origin-singularity"


class DegenerateProbeError(VacuumStarError, ValueError):
    cause = "degenerate-probe"


class InputDomainError(VacuumStarError, ValueError):
    cause = "input-domain"


class GaugeIncompatibilityError(VacuumStarError):
    """Total masses of data and reference profile disagree."""

    cause = "gauge-incompatibility"

    def __init__(self, mass: float, mass_ref: float):
        super().__init__(
            f"total mass M={mass:.12g} does not match reference mass M_ref={mass_ref:.12g}"
        )
        self.mass = mass
        self.mass_ref = mass_ref


class DiagnosticUnavailableError(VacuumStarError):
    cause = "diagnostic-unavailable"


class SimulationError(VacuumStarError):
    """Failure raised while evaluating or advancing a Lagrangian state.

    ``location`` is the index of the offending grid node when known, and
    ``tau`` and ``stage`` are filled in by the stepper.
    """

    cause = "simulation"

    def __init__(self, message: str, location: int | None = None):
        super().__init__(message)
        self.message = message
        self.location = location
        self.tau: float | None = None
        self.stage: int | None = None

    def __str__(self) -> str:
        parts = [self.message]
        if self.location is not None:
            parts.append(f"node={self.location}")
        if self.tau is not None:
            parts.append(f"tau={self.tau:.6g}")
        if self.stage is not None:
            parts.append(f"rk_stage={self.stage}")
        return ", ".join(parts)


class CausalityError(SimulationError):
    cause = "causality"


class CorrectorPositivityError(SimulationError):
    cause = "corrector-positivity"


class DiffeomorphismLossError(SimulationError):
    cause = "diffeomorphism-loss"


class ResolutionError(SimulationError):
    cause = "resolution"


class InstabilityError(SimulationError):
    cause = "instability"


class BootstrapViolation(SimulationError):
    cause = "bootstrap"


TERMINATION_CAUSES = (
    "causality",
    "corrector-positivity",
    "diffeomorphism-loss",
    "resolution",
    "instability",
    "bootstrap",
)
