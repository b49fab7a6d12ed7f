"""
Users, their latency-sensitive utilities, the SLA menu and user choice.

Every user values a unit of workload served with waiting time φ at
``weight · shape(φ)``. Facing a priced menu, a user picks the SLA with the
largest surplus (utility minus price), or opts out when every surplus is
negative. SLA and user indices are 1-based throughout.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np

from .errors import DomainError, require

OPT_OUT = None
SURPLUS_RTOL = 1e-9


class UtilityShape:
    """Latency sensitivity 𝒫(φ): strictly decreasing and convex on [0, ∞)."""

    def value(self, phi: float) -> float:  # pragma: no cover - interface
        raise NotImplementedError

    def values(self, phis: Iterable[float]) -> np.ndarray:
        return np.array([self.value(phi) for phi in phis], dtype=float)

    def label(self) -> str:  # pragma: no cover - interface
        raise NotImplementedError


@dataclass(frozen=True)
class PowerShape(UtilityShape):
    """𝒫(φ) = (1 - β)⁻¹ · (1 + φ)^(β - 1)."""

    beta: float

    def __post_init__(self) -> None:
        require(0.0 < self.beta < 1.0, f"beta must lie in (0, 1), got {self.beta}")

    def value(self, phi: float) -> float:
        require(phi >= 0.0, f"waiting time must be non-negative, got {phi}")
        return (1.0 + phi) ** (self.beta - 1.0) / (1.0 - self.beta)

    def label(self) -> str:
        return f"power(beta={self.beta:g})"


@dataclass(frozen=True)
class LogShape(UtilityShape):
    """𝒫(φ) = log(1 + 1 / (ε + φ))."""

    epsilon: float

    def __post_init__(self) -> None:
        require(self.epsilon > 0.0, f"epsilon must be positive, got {self.epsilon}")

    def value(self, phi: float) -> float:
        require(phi >= 0.0, f"waiting time must be non-negative, got {phi}")
        return math.log1p(1.0 / (self.epsilon + phi))

    def label(self) -> str:
        return f"log(epsilon={self.epsilon:g})"


@dataclass(frozen=True)
class User:
    weight: float
    arrival_rate: float

    def __post_init__(self) -> None:
        require(self.weight > 0.0, f"user weight must be positive, got {self.weight}")
        require(self.arrival_rate > 0.0, f"user arrival rate must be positive, got {self.arrival_rate}")


@dataclass(frozen=True)
class UserPopulation:
    users: tuple[User, ...]
    shape: UtilityShape

    def __post_init__(self) -> None:
        require(len(self.users) > 0, "a population needs at least one user")
        for prev, cur in zip(self.users, self.users[1:]):
            if not prev.weight > cur.weight:
                raise DomainError(
                    f"user weights must be strictly decreasing, got {prev.weight} then {cur.weight}"
                )

    @classmethod
    def from_weights(
        cls, weights: Sequence[float], arrival_rate: float | Sequence[float], shape: UtilityShape
    ) -> "UserPopulation":
        if isinstance(arrival_rate, (int, float)):
            rates = [float(arrival_rate)] * len(weights)
        else:
            rates = [float(r) for r in arrival_rate]
        require(len(rates) == len(weights), "one arrival rate per user is required")
        return cls(tuple(User(float(w), r) for w, r in zip(weights, rates)), shape)

    def __len__(self) -> int:
        return len(self.users)

    @property
    def weights(self) -> np.ndarray:
        return np.array([u.weight for u in self.users], dtype=float)

    @property
    def arrival_rates(self) -> np.ndarray:
        return np.array([u.arrival_rate for u in self.users], dtype=float)


def compact_weights(count: int = 50, top: float = 100.0) -> list[float]:
    """Weights top, top-1, ..., one per user (100, 99, ..., 51 for 50 users)."""
    require(count >= 1, f"need at least one user, got {count}")
    require(top - (count - 1) > 0.0, f"top weight {top} is too small for {count} users")
    return [top - i for i in range(count)]


def loose_weights(count: int = 50, step: float = 0.4) -> list[float]:
    """User ``count + 1 - i`` gets weight 1 + (i - 1)·step."""
    require(count >= 1, f"need at least one user, got {count}")
    require(step > 0.0, f"weight step must be positive, got {step}")
    return [1.0 + (count - k) * step for k in range(1, count + 1)]


@dataclass(frozen=True)
class SlaMenu:
    """Posted (waiting time, price) pairs.

    ``prices`` is ``None`` for an unpriced menu; otherwise it holds one entry
    per SLA, with ``None`` marking an SLA that is not offered.
    """

    waits: tuple[float, ...]
    prices: Optional[tuple[Optional[float], ...]] = field(default=None)

    def __post_init__(self) -> None:
        require(len(self.waits) > 0, "a menu needs at least one SLA")
        require(self.waits[0] >= 0.0, f"waiting times must be non-negative, got {self.waits[0]}")
        for prev, cur in zip(self.waits, self.waits[1:]):
            if not prev < cur:
                raise DomainError(f"waiting times must be strictly increasing, got {prev} then {cur}")
        if self.prices is None:
            return
        require(len(self.prices) == len(self.waits), "one price entry per SLA is required")
        posted = [p for p in self.prices if p is not None]
        for p in posted:
            require(p > 0.0, f"prices must be positive, got {p}")
        for prev, cur in zip(posted, posted[1:]):
            if not prev > cur:
                raise DomainError(f"prices must be strictly decreasing, got {prev} then {cur}")

    def __len__(self) -> int:
        return len(self.waits)

    @property
    def is_priced(self) -> bool:
        return self.prices is not None

    @property
    def offered(self) -> tuple[int, ...]:
        if self.prices is None:
            return ()
        return tuple(l for l, p in enumerate(self.prices, start=1) if p is not None)

    def with_prices(self, prices: Sequence[Optional[float]]) -> "SlaMenu":
        return SlaMenu(self.waits, tuple(None if p is None else float(p) for p in prices))

    def price(self, sla: int) -> Optional[float]:
        require(self.prices is not None, "menu is not priced")
        return self.prices[sla - 1]

    def wait(self, sla: int) -> float:
        return self.waits[sla - 1]


def unit_utility(user: User, shape: UtilityShape, phi: float) -> float:
    """Utility per unit workload, weight · 𝒫(φ)."""
    return user.weight * shape.value(phi)


def choose_sla(user: User, shape: UtilityShape, menu: SlaMenu) -> Optional[int]:
    """Return the surplus-maximizing SLA index, or ``OPT_OUT``.

    Zero surplus counts as participation and equal surpluses go to the lower
    index; both comparisons allow a relative slack of ``SURPLUS_RTOL`` of the
    user's top utility.
    """
    require(menu.is_priced, "choose_sla needs a priced menu")
    slack = SURPLUS_RTOL * unit_utility(user, shape, 0.0)

    best: Optional[int] = OPT_OUT
    best_surplus = 0.0
    for sla in menu.offered:
        surplus = unit_utility(user, shape, menu.wait(sla)) - menu.price(sla)
        if best is None:
            if surplus >= -slack:
                best, best_surplus = sla, surplus
        elif surplus > best_surplus + slack:
            best, best_surplus = sla, surplus
    return best


def user_choices(pop: UserPopulation, menu: SlaMenu) -> tuple[Optional[int], ...]:
    return tuple(choose_sla(user, pop.shape, menu) for user in pop.users)


def aggregate_arrivals(pop: UserPopulation, menu: SlaMenu) -> tuple[float, ...]:
    """Per-SLA arrival rates Λ₁…Λ_L of the users choosing each SLA."""
    totals = [0.0] * len(menu)
    for user, sla in zip(pop.users, user_choices(pop, menu)):
        if sla is not OPT_OUT:
            totals[sla - 1] += user.arrival_rate
    return tuple(totals)
