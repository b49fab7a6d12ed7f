"""
Capacity planning for a fixed fleet of ``m`` identical servers.

Each SLA's offered traffic is split into two virtual queues: the part that
fills whole servers at λ_max and the remainder that needs at most one more
server. Virtual queues are admitted greedily by unit revenue until the
fleet runs out; siblings are then merged back into per-SLA totals.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace
from enum import Enum
from typing import Optional, Sequence

import logfire

from .errors import require
from .market import SlaMenu
from .queueing import QueueModel

CEIL_RTOL = 1e-9


class QueueKind(str, Enum):
    full_servers = "FullServers"
    remainder = "Remainder"


@dataclass(frozen=True)
class VirtualQueue:
    sla_index: int
    kind: QueueKind
    rate: float
    unit_revenue: float
    lambda_max: float
    servers: int

    @property
    def sort_key(self) -> tuple[float, int, int]:
        # highest unit revenue first, then lower SLA index, FullServers first
        return (-self.unit_revenue, self.sla_index, 0 if self.kind is QueueKind.full_servers else 1)


@dataclass(frozen=True)
class CapacityPlan:
    fleet_size: int
    offered_rates: tuple[float, ...]
    accepted_rates: tuple[float, ...]
    servers: tuple[int, ...]
    per_server_rates: tuple[float, ...]
    utilizations: tuple[float, ...]
    lambda_max: tuple[Optional[float], ...]
    total_unit_revenue: float

    @classmethod
    def empty(cls, fleet_size: int, sla_count: int) -> "CapacityPlan":
        zeros = (0.0,) * sla_count
        return cls(fleet_size, zeros, zeros, (0,) * sla_count, zeros, zeros, (None,) * sla_count, 0.0)

    @property
    def servers_used(self) -> int:
        return sum(self.servers)

    @property
    def fleet_utilization(self) -> float:
        """Σ m*_l ρ_l / m, the busy fraction of the whole fleet."""
        if self.fleet_size == 0:
            return 0.0
        return sum(m * rho for m, rho in zip(self.servers, self.utilizations)) / self.fleet_size


def _split_rate(rate: float, lambda_max: float) -> tuple[int, float]:
    full = math.floor(rate / lambda_max * (1.0 + CEIL_RTOL))
    rest = rate - full * lambda_max
    if rest <= CEIL_RTOL * rate:
        rest = 0.0
    return full, rest


def min_servers(rate: float, lambda_max: float) -> int:
    """⌈rate / lambda_max⌉, guarded against float noise at integer boundaries."""
    require(lambda_max > 0.0, f"per-server cap must be positive, got {lambda_max}")
    require(rate >= 0.0, f"arrival rate must be non-negative, got {rate}")
    if rate == 0.0:
        return 0
    full, rest = _split_rate(rate, lambda_max)
    return full + (1 if rest > 0.0 else 0)


def split_virtual_queues(
    rates: Sequence[float],
    caps: Sequence[Optional[float]],
    prices: Sequence[Optional[float]],
    model: QueueModel,
) -> list[VirtualQueue]:
    """Return the FullServers and Remainder queue of every SLA, in SLA order.

    An SLA that is not offered (``None`` price) contributes two empty queues.
    """
    queues: list[VirtualQueue] = []
    for sla, (rate, cap, price) in enumerate(zip(rates, caps, prices), start=1):
        if price is None or cap is None or rate == 0.0:
            cap_value = cap or 0.0
            queues.append(VirtualQueue(sla, QueueKind.full_servers, 0.0, 0.0, cap_value, 0))
            queues.append(VirtualQueue(sla, QueueKind.remainder, 0.0, 0.0, cap_value, 0))
            continue

        full, rest = _split_rate(rate, cap)
        peak_revenue = model.utilization(cap) * price
        queues.append(VirtualQueue(sla, QueueKind.full_servers, full * cap, peak_revenue, cap, full))
        if rest > 0.0:
            queues.append(
                VirtualQueue(sla, QueueKind.remainder, rest, model.utilization(rest) * price, cap, 1)
            )
        else:
            queues.append(VirtualQueue(sla, QueueKind.remainder, 0.0, 0.0, cap, 0))
    return queues


def plan_capacity(
    m: int,
    rates: Sequence[float],
    menu: SlaMenu,
    model: QueueModel,
) -> CapacityPlan:
    """Admission rates and server counts maximizing unit revenue on ``m`` servers."""
    require(m >= 0, f"fleet size must be non-negative, got {m}")
    require(menu.is_priced, "capacity planning needs a priced menu")
    require(len(rates) == len(menu), "one arrival rate per SLA is required")
    for rate in rates:
        require(rate >= 0.0, f"arrival rates must be non-negative, got {rate}")

    sla_count = len(menu)
    caps: list[Optional[float]] = [
        model.lambda_max(phi) if price is not None else None
        for phi, price in zip(menu.waits, menu.prices)
    ]
    if m == 0:
        return CapacityPlan.empty(0, sla_count)

    queues = split_virtual_queues(rates, caps, menu.prices, model)
    needed = sum(q.servers for q in queues)

    full_taken = [0] * sla_count
    rest_taken = [0] * sla_count
    if needed <= m:
        for q in queues:
            if q.kind is QueueKind.full_servers:
                full_taken[q.sla_index - 1] = q.servers
            else:
                rest_taken[q.sla_index - 1] = q.servers
    else:
        free = m
        for q in sorted(queues, key=lambda q: q.sort_key):
            if free == 0:
                break
            take = min(q.servers, free)
            if q.kind is QueueKind.full_servers:
                full_taken[q.sla_index - 1] = take
            else:
                rest_taken[q.sla_index - 1] = take
            free -= take

    accepted: list[float] = []
    servers: list[int] = []
    for sla in range(1, sla_count + 1):
        full_q, rest_q = queues[2 * sla - 2], queues[2 * sla - 1]
        f, r = full_taken[sla - 1], rest_taken[sla - 1]
        if f == full_q.servers and r == rest_q.servers:
            accepted.append(float(rates[sla - 1]) if f + r > 0 else 0.0)
        else:
            accepted.append(f * full_q.lambda_max + (rest_q.rate if r else 0.0))
        servers.append(f + r)

    plan = _assemble(m, rates, accepted, servers, caps, menu, model)
    logfire.debug(
        "capacity plan",
        fleet_size=m,
        servers=plan.servers,
        accepted=plan.accepted_rates,
        revenue=plan.total_unit_revenue,
    )
    return plan


def _assemble(
    m: int,
    rates: Sequence[float],
    accepted: Sequence[float],
    servers: Sequence[int],
    caps: Sequence[Optional[float]],
    menu: SlaMenu,
    model: QueueModel,
) -> CapacityPlan:
    per_server = tuple(a / s if s > 0 else 0.0 for a, s in zip(accepted, servers))
    utilizations = tuple(model.utilization(lam) if lam > 0.0 else 0.0 for lam in per_server)
    partial = CapacityPlan(
        fleet_size=m,
        offered_rates=tuple(float(r) for r in rates),
        accepted_rates=tuple(accepted),
        servers=tuple(servers),
        per_server_rates=per_server,
        utilizations=utilizations,
        lambda_max=tuple(caps),
        total_unit_revenue=0.0,
    )
    return replace(partial, total_unit_revenue=total_unit_revenue(partial, menu.prices))


def total_unit_revenue(plan: CapacityPlan, prices: Sequence[Optional[float]]) -> float:
    """Σ m*_l · ρ_l · θ_l over the SLAs that received servers."""
    total = 0.0
    for servers, rho, price in zip(plan.servers, plan.utilizations, prices):
        if servers > 0 and price is not None:
            total += servers * rho * price
    return total
