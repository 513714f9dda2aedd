"""Exception types shared across the library."""

from __future__ import annotations


class AdhmcError(Exception):
    """Base class for all library-specific failures."""


class ModelValidationError(AdhmcError):
    """A model or certificate violates a structural invariant."""


class AuxiliarySamplingError(AdhmcError):
    """Rejection sampling of the auxiliary distribution failed.

    Carries the number of attempts made before giving up.
    """

    def __init__(self, message: str, attempts: int):
        super().__init__(message)
        self.attempts = attempts


class OracleConfigurationError(AdhmcError):
    """A gradient oracle was requested with inconsistent inputs."""


class IntegrationError(AdhmcError):
    """A leapfrog stage produced a non-finite state.

    ``stage`` names the offending update (``half_kick``, ``drift``,
    ``full_kick``).
    """

    def __init__(self, message: str, stage: str):
        super().__init__(message)
        self.stage = stage


class ReferenceFlowError(AdhmcError):
    """The high-accuracy reference integrator violated its energy-drift gate."""


class ConfigurationError(AdhmcError):
    """An experiment configuration is invalid.

    ``problems`` lists every detected issue, each prefixed with the offending
    configuration path.
    """

    def __init__(self, problems):
        self.problems = list(problems)
        super().__init__("invalid configuration:\n  " + "\n  ".join(self.problems))


class EstimatorError(AdhmcError):
    """A Monte Carlo estimator could not produce a usable result."""
