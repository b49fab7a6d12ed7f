"""
Closed-form queueing laws for a single FCFS server.

Two service-time laws are supported, each with its own QoS convention:

- exponential service with a percentile deadline: at most ``miss_target``
  of the jobs may wait longer than φ;
- Pareto service with an expected-wait bound φ.

For either law the model exposes Q₁ (``lambda_max``: the largest
per-server arrival rate that still meets φ) and Q₂ (``utilization``: the
server utilization at a given arrival rate). Everything here is a pure
function of immutable inputs.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable

import logfire
import numpy as np
from scipy import optimize

from .errors import ConvergenceError, InfeasibleWaitError, require
from .special import upper_incomplete_gamma, upper_incomplete_gamma_array

DEFAULT_MISS_TARGET = 0.05
RHO_SINGULAR_BAND = 1e-6
ROOT_RTOL = 1e-10
_ROOT_XTOL = 1e-300
_ROOT_MAXITER = 400
_SOLVE_RTOL = 4.0 * float(np.finfo(float).eps)


# ---------------------------------------------------------------------------
# Exponential service, percentile deadline
# ---------------------------------------------------------------------------


def exp_miss_fraction(rho: float, mu: float, phi: float) -> float:
    """Fraction of jobs whose queueing delay exceeds ``phi``.

    Args:
        rho: offered utilization λ/μ, > 0 (values above 1 are allowed).
        mu: service rate.
        phi: wait bound, >= 0.

    Returns:
        α_d = p₀·ρ·e^((ρ-1)μφ), evaluated without overflow for ρ > 1 and
        through a second-order expansion when |ρ - 1| < 1e-6.
    """
    require(rho > 0.0, f"utilization must be positive, got {rho}")
    require(mu > 0.0, f"service rate must be positive, got {mu}")
    require(phi >= 0.0, f"wait bound must be non-negative, got {phi}")

    mu_phi = mu * phi
    x = (rho - 1.0) * mu_phi
    near_one = abs(rho - 1.0) < RHO_SINGULAR_BAND

    if x > 0.0:
        # everything divided by e^x
        if near_one:
            shrink = 1.0 - x / 2.0 + x * x / 6.0
        else:
            shrink = -math.expm1(-x) / x
        scaled_inverse_p0 = (1.0 + rho) * math.exp(-x) + rho * rho * mu_phi * shrink
        return rho / scaled_inverse_p0

    if x == 0.0:
        growth = 1.0
    elif near_one:
        growth = 1.0 + x / 2.0 + x * x / 6.0
    else:
        growth = math.expm1(x) / x
    inverse_p0 = 1.0 + rho + rho * rho * mu_phi * growth
    return rho * math.exp(x) / inverse_p0


def exp_utilization(lam: float, mu: float) -> float:
    require(mu > 0.0, f"service rate must be positive, got {mu}")
    require(lam >= 0.0, f"arrival rate must be non-negative, got {lam}")
    return lam / mu


def exp_lambda_max(spec: "ExponentialQueueSpec", phi: float) -> float:
    """Largest per-server arrival rate whose miss fraction equals the target."""
    require(phi >= 0.0, f"wait bound must be non-negative, got {phi}")
    return _exp_rho_max(spec.mu * float(phi), spec.miss_target) * spec.mu


@lru_cache(maxsize=4096)
def _exp_rho_max(mu_phi: float, miss_target: float) -> float:
    # α_d depends on μ and φ only through μφ; evaluate at μ = 1
    def excess(rho: float) -> float:
        return exp_miss_fraction(rho, 1.0, mu_phi) - miss_target

    hi = 1.0
    while excess(hi) <= 0.0:
        hi *= 2.0
        if hi > 1e12:
            raise ConvergenceError(f"no utilization reaches miss target {miss_target} at μφ={mu_phi}")
    return _bisect(excess, 1e-12, hi)


# ---------------------------------------------------------------------------
# Pareto service, expected-wait bound
# ---------------------------------------------------------------------------


def pareto_stability_bound(spec: "ParetoQueueSpec") -> float:
    """Supremum of admissible arrival rates, (α-1)/(α·τ̲)."""
    return (spec.shape_alpha - 1.0) / (spec.shape_alpha * spec.min_runtime)


def _require_stable(lam: float, spec: "ParetoQueueSpec") -> None:
    bound = pareto_stability_bound(spec)
    require(
        0.0 < lam < bound,
        f"arrival rate {lam} is outside the Pareto stability region (0, {bound})",
    )


def _z_plus_expm1_neg(z: float) -> float:
    # z + e^-z - 1 without cancellation for small z
    if z < 1e-4:
        return z * z * (0.5 - z / 6.0 + z * z / 24.0)
    return z + math.expm1(-z)


def pareto_expected_wait(lam: float, spec: "ParetoQueueSpec") -> float:
    """Expected waiting time at arrival rate ``lam``.

    φ = (1/λ)·log(α(λτ̲)^α Γ(-α, λτ̲) / (1 - ατ̲λ/(α-1))). The ratio inside
    the logarithm is written as 1 + N/D, with N expanded through two steps
    of the incomplete-gamma recurrence so that small rates keep full
    relative precision.
    """
    _require_stable(lam, spec)
    alpha = spec.shape_alpha
    z = lam * spec.min_runtime

    bound = pareto_stability_bound(spec)
    denominator = (bound - lam) / bound
    tail = z**alpha * upper_incomplete_gamma(2.0 - alpha, z)
    numerator = (
        _z_plus_expm1_neg(z)
        + (tail - z * math.expm1(-z)) / (alpha - 1.0)
    )
    return math.log1p(numerator / denominator) / lam


def pareto_utilization(lam: float, spec: "ParetoQueueSpec") -> float:
    """Expected server utilization, 1 / (1 + α(λτ̲)^α Γ(-α-1, λτ̲))."""
    _require_stable(lam, spec)
    alpha = spec.shape_alpha
    z = lam * spec.min_runtime
    return 1.0 / (1.0 + alpha * z**alpha * upper_incomplete_gamma(-alpha - 1.0, z))


def pareto_min_wait(spec: "ParetoQueueSpec") -> float:
    """Smallest expected wait the root finder can resolve for this law."""
    return pareto_expected_wait(pareto_stability_bound(spec) * 1e-12, spec)


def pareto_lambda_max(phi: float, spec: "ParetoQueueSpec") -> float:
    """Arrival rate whose expected wait equals ``phi``.

    A bound beyond the largest wait representable below the stability bound
    gets the largest float below that bound, with a warning.

    Raises:
        InfeasibleWaitError: ``phi`` is below the attainable minimum wait.
    """
    require(phi > 0.0, f"expected-wait bound must be positive, got {phi}")
    return _pareto_lambda_max(float(phi), spec)


@lru_cache(maxsize=4096)
def _pareto_lambda_max(phi: float, spec: "ParetoQueueSpec") -> float:
    bound = pareto_stability_bound(spec)

    def excess(lam: float) -> float:
        return pareto_expected_wait(lam, spec) - phi

    lo = bound * 1e-3
    while excess(lo) >= 0.0:
        lo /= 10.0
        if lo < bound * 1e-12:
            raise InfeasibleWaitError(phi, pareto_min_wait(spec))

    mid = bound / 2.0
    if excess(mid) >= 0.0:
        return _solve(excess, lo, mid)

    top = math.nextafter(bound, 0.0)
    if excess(top) < 0.0:
        logfire.warn(
            "expected-wait bound is beyond the largest wait below the stability bound",
            phi=phi,
            max_wait=pareto_expected_wait(top, spec),
            rate=top,
        )
        return top

    def rate(log_gap: float) -> float:
        return min(bound - math.exp(log_gap), top)

    # the wait is close to linear in log(bound - λ)
    log_gap = _solve(lambda u: excess(rate(u)), math.log(bound - top), math.log(bound - mid))
    return rate(log_gap)


def _bisect(f: Callable[[float], float], lo: float, hi: float) -> float:
    return float(optimize.bisect(f, lo, hi, xtol=_ROOT_XTOL, rtol=ROOT_RTOL, maxiter=_ROOT_MAXITER))


def _solve(f: Callable[[float], float], lo: float, hi: float) -> float:
    return float(optimize.brentq(f, lo, hi, xtol=_ROOT_XTOL, rtol=_SOLVE_RTOL, maxiter=_ROOT_MAXITER))


# ---------------------------------------------------------------------------
# Queue models
# ---------------------------------------------------------------------------


class QueueModel:
    """A service-time law with its QoS convention; owner of Q₁ and Q₂."""

    kind: str = "abstract"

    def lambda_max(self, phi: float) -> float:  # pragma: no cover - interface
        """Q₁: maximum per-server arrival rate meeting wait bound ``phi``."""
        raise NotImplementedError

    def utilization(self, lam: float) -> float:  # pragma: no cover - interface
        """Q₂: server utilization at per-server arrival rate ``lam``."""
        raise NotImplementedError

    def utilization_array(self, lam: np.ndarray) -> np.ndarray:
        return np.vectorize(self.utilization, otypes=[float])(lam)

    @property
    def mean_service(self) -> float:  # pragma: no cover - interface
        raise NotImplementedError

    @property
    def stability_bound(self) -> float:  # pragma: no cover - interface
        raise NotImplementedError

    def sample_service(self, rng: np.random.Generator, size: int) -> np.ndarray:  # pragma: no cover - interface
        raise NotImplementedError


@dataclass(frozen=True)
class ExponentialQueueSpec(QueueModel):
    mu: float = 1.0
    miss_target: float = DEFAULT_MISS_TARGET

    kind = "exponential"

    def __post_init__(self) -> None:
        require(self.mu > 0.0, f"service rate must be positive, got {self.mu}")
        require(0.0 < self.miss_target < 1.0, f"miss target must lie in (0, 1), got {self.miss_target}")

    @property
    def mean_runtime(self) -> float:
        """ω, with μ·ω = 1."""
        return 1.0 / self.mu

    @property
    def mean_service(self) -> float:
        return self.mean_runtime

    @property
    def stability_bound(self) -> float:
        return self.mu

    def lambda_max(self, phi: float) -> float:
        return exp_lambda_max(self, phi)

    def utilization(self, lam: float) -> float:
        return exp_utilization(lam, self.mu)

    def utilization_array(self, lam: np.ndarray) -> np.ndarray:
        return np.asarray(lam, dtype=float) / self.mu

    def miss_fraction(self, lam: float, phi: float) -> float:
        return exp_miss_fraction(lam / self.mu, self.mu, phi)

    def sample_service(self, rng: np.random.Generator, size: int) -> np.ndarray:
        return rng.exponential(self.mean_runtime, size)


@dataclass(frozen=True)
class ParetoQueueSpec(QueueModel):
    shape_alpha: float = 1.4
    min_runtime: float = 1.0 / 6.0

    kind = "pareto"

    def __post_init__(self) -> None:
        require(self.shape_alpha > 1.0, f"Pareto shape must exceed 1, got {self.shape_alpha}")
        require(self.min_runtime > 0.0, f"minimum runtime must be positive, got {self.min_runtime}")

    @property
    def mean_service(self) -> float:
        return self.shape_alpha * self.min_runtime / (self.shape_alpha - 1.0)

    @property
    def stability_bound(self) -> float:
        return pareto_stability_bound(self)

    def lambda_max(self, phi: float) -> float:
        return pareto_lambda_max(phi, self)

    def utilization(self, lam: float) -> float:
        if lam == 0.0:
            return 0.0
        return pareto_utilization(lam, self)

    def utilization_array(self, lam: np.ndarray) -> np.ndarray:
        lam = np.asarray(lam, dtype=float)
        out = np.zeros_like(lam)
        busy = lam > 0.0
        if not busy.any():
            return out
        require(
            bool(np.all(lam[busy] < self.stability_bound)),
            "arrival rates must stay below the Pareto stability bound",
        )
        alpha = self.shape_alpha
        z = lam[busy] * self.min_runtime
        out[busy] = 1.0 / (1.0 + alpha * z**alpha * upper_incomplete_gamma_array(-alpha - 1.0, z))
        return out

    def expected_wait(self, lam: float) -> float:
        return pareto_expected_wait(lam, self)

    def sample_service(self, rng: np.random.Generator, size: int) -> np.ndarray:
        # inverse CDF; 1 - U keeps the draw in (0, 1]
        u = 1.0 - rng.random(size)
        return self.min_runtime * u ** (-1.0 / self.shape_alpha)


def pareto_rate_for_utilization(target: float, spec: ParetoQueueSpec) -> float:
    """Arrival rate at which the Pareto utilization equals ``target``."""
    bound = pareto_stability_bound(spec)
    lo, hi = bound * 1e-12, bound * (1.0 - 1e-12)

    def excess(lam: float) -> float:
        return pareto_utilization(lam, spec) - target

    require(
        excess(lo) < 0.0 < excess(hi),
        f"utilization {target} is not attainable under {spec}",
    )
    return _bisect(excess, lo, hi)


def match_pareto_waits(
    exp_model: ExponentialQueueSpec,
    exp_waits: tuple[float, ...],
    pareto_model: ParetoQueueSpec,
    first_wait: float = 0.05,
) -> tuple[float, ...]:
    """Pareto waits whose max-utilization ratios mirror the exponential menu.

    The first Pareto wait is fixed at ``first_wait``; every later wait is
    chosen so that Q₂(Q₁(φ′_l)) / Q₂(Q₁(φ′_1)) equals the same ratio for the
    exponential waits.
    """
    exp_peaks = [exp_model.utilization(exp_model.lambda_max(phi)) for phi in exp_waits]
    first_peak = pareto_model.utilization(pareto_model.lambda_max(first_wait))

    waits = [float(first_wait)]
    for peak in exp_peaks[1:]:
        lam = pareto_rate_for_utilization(first_peak * peak / exp_peaks[0], pareto_model)
        waits.append(pareto_expected_wait(lam, pareto_model))
    return tuple(waits)
