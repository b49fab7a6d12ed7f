from __future__ import annotations


class PricingError(ValueError):
    """Base class for every error raised by the slapricing package."""


class DomainError(PricingError):
    """An argument lies outside the domain of the operation it was passed to."""


class InfeasibleWaitError(DomainError):
    """A Pareto wait bound is below the smallest attainable expected wait."""

    def __init__(self, phi: float, attainable: float) -> None:
        super().__init__(
            f"wait bound {phi:g} is below the attainable minimum expected wait {attainable:g}"
        )
        self.phi = phi
        self.attainable = attainable


class ConfigError(PricingError):
    """A scenario file or simulation configuration is invalid."""


def require(condition: bool, message: str) -> None:
    if not condition:
        raise DomainError(message)


class ConvergenceError(PricingError):
    """An iterative numerical method did not reach its tolerance."""
