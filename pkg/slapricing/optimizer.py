"""
Revenue-maximizing SLA prices.

The search enumerates every non-empty subset of SLAs to offer and, for a
subset of size r, every increasing r-tuple of cut users i₁ < … < i_r. The
l-th offered SLA is meant for users i_{l-1}+1 … i_l; its price is the
largest one that keeps those users (and only those) on it, computed by a
back-recursion from the last offered SLA. Each candidate is scored with the
capacity planner and the best one wins.

Candidates are scored in numpy batches that replay the planner's greedy
admission row by row; the winner is rebuilt through the scalar path
(``breakpoint_prices`` → ``choose_sla`` → ``plan_capacity``) and checked
for self-consistency.
"""
from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from itertools import chain, combinations, islice
from typing import Iterator, Optional, Sequence

import logfire
import numpy as np
from tqdm.auto import tqdm

from .errors import DomainError, PricingError, require
from .market import OPT_OUT, SlaMenu, UserPopulation, aggregate_arrivals, user_choices
from .planner import CEIL_RTOL, CapacityPlan, plan_capacity
from .queueing import QueueModel

CHUNK_SIZE = 200_000
REVENUE_RTOL = 1e-9
EPSILON_UNDERCUT = 1e-6


@dataclass(frozen=True)
class Breakpoints:
    """Offered SLAs (1-based, ascending) and the last user of each block."""

    offered: tuple[int, ...]
    cut_users: tuple[int, ...]

    def __post_init__(self) -> None:
        require(len(self.offered) > 0, "at least one SLA must be offered")
        require(len(self.offered) == len(self.cut_users), "one cut user per offered SLA is required")
        require(self.offered[0] >= 1 and self.cut_users[0] >= 1, "SLA and user indices are 1-based")
        for seq, what in ((self.offered, "offered SLAs"), (self.cut_users, "cut users")):
            for prev, cur in zip(seq, seq[1:]):
                if not prev < cur:
                    raise DomainError(f"{what} must be strictly increasing, got {seq}")

    def block(self, position: int) -> range:
        """1-based user indices intended for the ``position``-th offered SLA."""
        start = self.cut_users[position - 2] + 1 if position > 1 else 1
        return range(start, self.cut_users[position - 1] + 1)

    def intended_choices(self, user_count: int) -> tuple[Optional[int], ...]:
        choices: list[Optional[int]] = [OPT_OUT] * user_count
        lower = 0
        for sla, cut in zip(self.offered, self.cut_users):
            for i in range(lower, cut):
                choices[i] = sla
            lower = cut
        return tuple(choices)


@dataclass(frozen=True)
class PricingSolution:
    breakpoints: Optional[Breakpoints]
    menu: SlaMenu
    choices: tuple[Optional[int], ...]
    plan: CapacityPlan
    revenue: float
    evaluations: int = 0

    @property
    def offered(self) -> tuple[int, ...]:
        return self.menu.offered

    @property
    def prices(self) -> tuple[float, ...]:
        return tuple(p for p in self.menu.prices if p is not None)


def breakpoint_prices(
    bp: Breakpoints,
    pop: UserPopulation,
    waits: Sequence[float],
    epsilon: float = 0.0,
) -> Optional[tuple[float, ...]]:
    """Prices for the offered SLAs that make the cut users indifferent.

    ``waits`` holds one waiting time per offered SLA. θ for the last offered
    SLA is the last cut user's full utility; every earlier price adds that
    block's cut user's utility gap to the next SLA. With ``epsilon > 0`` all
    prices are scaled by ``1 - epsilon`` so every intended user has a strictly
    positive margin.

    Returns ``None`` when the candidate violates strictly decreasing positive
    prices, or when some user past a cut would also want the SLA.
    """
    require(len(waits) == len(bp.offered), "one waiting time per offered SLA is required")
    require(bp.cut_users[-1] <= len(pop), f"cut user {bp.cut_users[-1]} exceeds population size {len(pop)}")
    shape = pop.shape
    profile = [shape.value(phi) for phi in waits]
    weight = [u.weight for u in pop.users] + [0.0]

    r = len(bp.offered)
    prices = [0.0] * r
    prices[-1] = weight[bp.cut_users[-1] - 1] * profile[-1]
    for j in range(r - 2, -1, -1):
        prices[j] = weight[bp.cut_users[j] - 1] * (profile[j] - profile[j + 1]) + prices[j + 1]
    if epsilon:
        prices = [p * (1.0 - epsilon) for p in prices]

    if prices[-1] <= 0.0:
        return None
    if prices[-1] <= weight[bp.cut_users[-1]] * profile[-1]:
        return None
    for j in range(r - 1):
        step = prices[j] - prices[j + 1]
        if step <= 0.0 or step <= weight[bp.cut_users[j]] * (profile[j] - profile[j + 1]):
            return None
    return tuple(prices)


def evaluate_breakpoints(
    bp: Breakpoints,
    m: int,
    pop: UserPopulation,
    waits: Sequence[float],
    model: QueueModel,
    epsilon: float = 0.0,
) -> Optional[PricingSolution]:
    """Price one candidate, let users choose, plan capacity and score it.

    ``waits`` is the full menu φ₁…φ_L. Returns ``None`` for an infeasible
    candidate.
    """
    offered_waits = [waits[l - 1] for l in bp.offered]
    prices = breakpoint_prices(bp, pop, offered_waits, epsilon=epsilon)
    if prices is None:
        return None

    posted: list[Optional[float]] = [None] * len(waits)
    for sla, price in zip(bp.offered, prices):
        posted[sla - 1] = price
    menu = SlaMenu(tuple(waits), tuple(posted))

    choices = user_choices(pop, menu)
    rates = aggregate_arrivals(pop, menu)
    plan = plan_capacity(m, rates, menu, model)
    return PricingSolution(bp, menu, choices, plan, plan.total_unit_revenue, evaluations=1)


# ---------------------------------------------------------------------------
# Batch search
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class _SearchTables:
    weights: np.ndarray  # K + 1 entries, the last one 0 for "no next user"
    cum_rates: np.ndarray  # K + 1 entries, cum_rates[0] = 0
    profile: np.ndarray  # 𝒫(φ_l) per SLA
    caps: np.ndarray  # λ_max per SLA
    peak_utilization: np.ndarray  # Q₂(λ_max) per SLA
    fleet_size: int
    model: QueueModel
    epsilon: float


def _score_batch(tables: _SearchTables, subset: tuple[int, ...], cuts: np.ndarray) -> np.ndarray:
    """Revenue of every candidate row in ``cuts``; -inf marks infeasible rows.

    ``subset`` holds 0-based SLA indices and ``cuts`` 0-based cut users, one
    column per offered SLA.
    """
    n, r = cuts.shape
    cols = list(subset)
    profile = tables.profile[cols]
    gaps = profile[:-1] - profile[1:]

    w_cut = tables.weights[cuts]
    w_next = tables.weights[cuts + 1]

    prices = np.empty((n, r))
    prices[:, -1] = w_cut[:, -1] * profile[-1]
    if r > 1:
        steps = w_cut[:, :-1] * gaps
        prices[:, :-1] = prices[:, -1:] + np.cumsum(steps[:, ::-1], axis=1)[:, ::-1]
    if tables.epsilon:
        prices *= 1.0 - tables.epsilon

    feasible = (prices[:, -1] > 0.0) & (prices[:, -1] > w_next[:, -1] * profile[-1])
    if r > 1:
        price_steps = prices[:, :-1] - prices[:, 1:]
        feasible &= np.all(price_steps > 0.0, axis=1)
        feasible &= np.all(price_steps > w_next[:, :-1] * gaps, axis=1)

    upper = tables.cum_rates[cuts + 1]
    lower = np.zeros_like(upper)
    lower[:, 1:] = upper[:, :-1]
    rates = upper - lower

    caps = tables.caps[cols]
    full = np.floor(rates / caps * (1.0 + CEIL_RTOL))
    rest = rates - full * caps
    rest = np.where(rest <= CEIL_RTOL * rates, 0.0, rest)
    rest_need = (rest > 0.0).astype(float)

    full_revenue = tables.peak_utilization[cols] * prices
    rest_revenue = tables.model.utilization_array(rest) * prices

    # columns interleaved as full_1, rest_1, full_2, rest_2, ... so a stable
    # sort breaks revenue ties by SLA index, FullServers first
    need = np.stack([full, rest_need], axis=2).reshape(n, 2 * r)
    unit_revenue = np.stack([full_revenue, rest_revenue], axis=2).reshape(n, 2 * r)
    order = np.argsort(-unit_revenue, axis=1, kind="stable")
    need_sorted = np.take_along_axis(need, order, axis=1)
    before = np.cumsum(need_sorted, axis=1) - need_sorted
    taken_sorted = np.clip(tables.fleet_size - before, 0.0, need_sorted)
    taken = np.empty_like(taken_sorted)
    np.put_along_axis(taken, order, taken_sorted, axis=1)
    taken = taken.reshape(n, r, 2)

    full_taken, rest_taken = taken[..., 0], taken[..., 1]
    servers = full_taken + rest_taken
    everything = (full_taken == full) & (rest_taken == rest_need)
    accepted = np.where(everything, rates, full_taken * caps + rest_taken * rest)
    per_server = np.divide(accepted, servers, out=np.zeros_like(accepted), where=servers > 0)
    utilization = tables.model.utilization_array(per_server)

    revenue = np.sum(servers * utilization * prices, axis=1)
    revenue[~feasible] = -np.inf
    return revenue


def _best_in_batch(tables: _SearchTables, subset: tuple[int, ...], cuts: np.ndarray) -> tuple[int, float]:
    revenue = _score_batch(tables, subset, cuts)
    top = float(revenue.max())
    if not math.isfinite(top):
        return -1, -math.inf
    # first row within tolerance of the maximum has the smallest cuts
    index = int(np.flatnonzero(revenue >= top - REVENUE_RTOL * abs(top))[0])
    return index, float(revenue[index])


def _cut_tuples(user_count: int, size: int) -> Iterator[np.ndarray]:
    source = combinations(range(user_count), size)
    while True:
        block = list(islice(source, CHUNK_SIZE))
        if not block:
            return
        yield np.fromiter(chain.from_iterable(block), dtype=np.int64, count=len(block) * size).reshape(-1, size)


def search_space_size(user_count: int, sla_count: int, slas: Optional[Sequence[int]] = None) -> int:
    """Number of candidates the price search scores, Σ_S C(K, |S|)."""
    allowed = len(slas) if slas is not None else sla_count
    return sum(math.comb(allowed, r) * math.comb(user_count, r) for r in range(1, allowed + 1))


def _subsets(allowed: Sequence[int]) -> Iterator[tuple[int, ...]]:
    for size in range(1, len(allowed) + 1):
        yield from combinations(allowed, size)


@dataclass(frozen=True)
class _Candidate:
    revenue: float
    subset: tuple[int, ...]
    cuts: tuple[int, ...]

    def beats(self, other: Optional["_Candidate"]) -> bool:
        if other is None:
            return math.isfinite(self.revenue)
        slack = REVENUE_RTOL * max(abs(self.revenue), abs(other.revenue))
        if self.revenue > other.revenue + slack:
            return True
        if self.revenue < other.revenue - slack:
            return False
        return (len(self.subset), self.cuts, self.subset) < (len(other.subset), other.cuts, other.subset)


def _run_task(tables: _SearchTables, subset: tuple[int, ...], cuts: np.ndarray) -> tuple[int, float]:
    return _best_in_batch(tables, subset, cuts)


def optimize_prices(
    m: int,
    pop: UserPopulation,
    waits: Sequence[float],
    model: QueueModel,
    parallel: int = 1,
    epsilon_pricing: bool = False,
    slas: Optional[Sequence[int]] = None,
    progress: bool = False,
) -> PricingSolution:
    """Search every offered subset and cut tuple for the highest revenue.

    Args:
        m: fleet size.
        pop: users sorted by decreasing weight.
        waits: the full menu φ₁…φ_L.
        model: queueing law used for λ_max and utilization.
        parallel: worker processes; 1 scores batches in-process.
        epsilon_pricing: undercut every price by a factor ``1 - 1e-6``.
        slas: 1-based SLAs allowed in the menu (all by default).
        progress: show a tqdm bar over the batches.

    Returns:
        The best solution. Ties go to fewer offered SLAs, then smaller cuts.
    """
    require(m >= 0, f"fleet size must be non-negative, got {m}")
    require(len(pop) >= 1, "at least one user is required")
    menu = SlaMenu(tuple(float(phi) for phi in waits))
    sla_count = len(menu)
    allowed = tuple(range(sla_count)) if slas is None else tuple(sorted(l - 1 for l in slas))
    require(all(0 <= l < sla_count for l in allowed), f"allowed SLAs {slas} are outside the menu")
    require(len(set(allowed)) == len(allowed), f"allowed SLAs {slas} contain duplicates")
    epsilon = EPSILON_UNDERCUT if epsilon_pricing else 0.0

    if m == 0:
        empty_menu = menu.with_prices([None] * sla_count)
        return PricingSolution(
            None, empty_menu, (OPT_OUT,) * len(pop), CapacityPlan.empty(0, sla_count), 0.0, evaluations=0
        )

    caps = np.zeros(sla_count)
    peaks = np.zeros(sla_count)
    for l in allowed:
        caps[l] = model.lambda_max(menu.waits[l])
        peaks[l] = model.utilization(caps[l])
    tables = _SearchTables(
        weights=np.append(pop.weights, 0.0),
        cum_rates=np.concatenate([[0.0], np.cumsum(pop.arrival_rates)]),
        profile=pop.shape.values(menu.waits),
        caps=caps,
        peak_utilization=peaks,
        fleet_size=int(m),
        model=model,
        epsilon=epsilon,
    )

    total = search_space_size(len(pop), sla_count, [l + 1 for l in allowed])
    with logfire.span("optimize prices", fleet_size=m, users=len(pop), slas=sla_count, candidates=total):
        best, evaluations = _search(tables, allowed, len(pop), parallel, progress, total)
        if best is None:
            raise PricingError("no feasible price vector was found")

        bp = Breakpoints(tuple(l + 1 for l in best.subset), tuple(i + 1 for i in best.cuts))
        solution = evaluate_breakpoints(bp, m, pop, menu.waits, model, epsilon=epsilon)
        if solution is None or solution.choices != bp.intended_choices(len(pop)):
            raise PricingError(f"best candidate {bp} is not self-consistent under user choice")
        if not math.isclose(solution.revenue, best.revenue, rel_tol=1e-6, abs_tol=1e-9):
            logfire.warn(
                "batch and scalar revenue disagree",
                batch=best.revenue,
                scalar=solution.revenue,
                breakpoints=str(bp),
            )
        logfire.info(
            "best prices",
            offered=bp.offered,
            cuts=bp.cut_users,
            prices=solution.prices,
            revenue=solution.revenue,
            evaluations=evaluations,
        )
    return PricingSolution(
        solution.breakpoints, solution.menu, solution.choices, solution.plan, solution.revenue, evaluations
    )


def _search(
    tables: _SearchTables,
    allowed: tuple[int, ...],
    user_count: int,
    parallel: int,
    progress: bool,
    total: int,
) -> tuple[Optional[_Candidate], int]:
    best: Optional[_Candidate] = None
    evaluations = 0
    bar = tqdm(total=total, desc="price search", unit="cand", disable=not progress)

    def tasks() -> Iterator[tuple[tuple[int, ...], np.ndarray]]:
        for size in range(1, len(allowed) + 1):
            if size > user_count:
                return
            batches = list(_cut_tuples(user_count, size))
            for subset in combinations(allowed, size):
                for cuts in batches:
                    yield subset, cuts

    def absorb(subset: tuple[int, ...], cuts: np.ndarray, index: int, revenue: float) -> None:
        nonlocal best, evaluations
        evaluations += len(cuts)
        bar.update(len(cuts))
        if index < 0:
            return
        candidate = _Candidate(revenue, subset, tuple(int(i) for i in cuts[index]))
        if candidate.beats(best):
            best = candidate

    try:
        if parallel <= 1:
            for subset, cuts in tasks():
                index, revenue = _best_in_batch(tables, subset, cuts)
                absorb(subset, cuts, index, revenue)
        else:
            with ProcessPoolExecutor(max_workers=parallel) as pool:
                work = list(tasks())
                futures = [pool.submit(_run_task, tables, subset, cuts) for subset, cuts in work]
                # reduce in submission order so the winner never depends on timing
                for (subset, cuts), future in zip(work, futures):
                    index, revenue = future.result()
                    absorb(subset, cuts, index, revenue)
    finally:
        bar.close()
    return best, evaluations


def optimize_on_demand(
    m: int,
    pop: UserPopulation,
    waits: Sequence[float],
    model: QueueModel,
    progress: bool = False,
) -> PricingSolution:
    """Best single price for SLA 1 alone, the standard on-demand offer."""
    return optimize_prices(m, pop, waits, model, slas=(1,), progress=progress)


def improvement_ratio(ours: float, baseline: float) -> float:
    """Relative revenue gain, ours / baseline - 1."""
    require(baseline > 0.0, f"baseline revenue must be positive, got {baseline}")
    return ours / baseline - 1.0
