"""
Discrete-event simulation of processing units.

A processing unit is a pool of identical FCFS servers fed by one Poisson
stream; every job is dispatched uniformly at random to a server. Waiting
time is the queueing delay (service start minus arrival).

A job whose wait would exceed the deadline φ is a miss. Under the default
``abandon`` policy it leaves unserved after waiting φ, which is the queue
the exponential miss-fraction law describes; under ``serve`` it stays and
is served late.

Random streams come from one ``SeedSequence``: arrivals, routing and every
server's service times use separate children, so resizing the pool never
changes the arrival stream.
"""
from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from enum import Enum
from typing import Optional

import logfire
import numpy as np
from scipy import stats

from .errors import ConfigError
from .market import SlaMenu
from .planner import CapacityPlan
from .queueing import QueueModel

DEFAULT_JOBS = 1_000_000
DEFAULT_SEED = 20190101


class LateJobPolicy(str, Enum):
    abandon = "abandon"
    serve = "serve"


@dataclass(frozen=True)
class SimConfig:
    arrival_rate: float
    servers: int
    model: QueueModel
    jobs: int = DEFAULT_JOBS
    time_budget: Optional[float] = None
    seed: int = DEFAULT_SEED
    spawn_key: tuple[int, ...] = ()
    warmup: float = 0.1
    batches: int = 20
    confidence: float = 0.95
    late_jobs: LateJobPolicy = LateJobPolicy.abandon

    def __post_init__(self) -> None:
        if self.servers < 1:
            raise ConfigError(f"a pool needs at least one server, got {self.servers}")
        if self.arrival_rate < 0.0:
            raise ConfigError(f"arrival rate must be non-negative, got {self.arrival_rate}")
        if self.time_budget is None and self.jobs <= 0:
            raise ConfigError(f"job horizon must be positive, got {self.jobs}")
        if self.time_budget is not None and self.time_budget <= 0.0:
            raise ConfigError(f"time budget must be positive, got {self.time_budget}")
        if not 0.0 <= self.warmup <= 0.5:
            raise ConfigError(f"warmup fraction must lie in [0, 0.5], got {self.warmup}")
        if self.batches < 2:
            raise ConfigError(f"batch means need at least two batches, got {self.batches}")
        if not 0.0 < self.confidence < 1.0:
            raise ConfigError(f"confidence level must lie in (0, 1), got {self.confidence}")

    @property
    def per_server_rate(self) -> float:
        return self.arrival_rate / self.servers

    @property
    def total_jobs(self) -> int:
        """Jobs to generate so that ``jobs`` remain after the warmup."""
        return math.ceil(self.jobs / (1.0 - self.warmup))


@dataclass(frozen=True)
class ServerStats:
    jobs: int
    utilization: float
    mean_wait: float
    miss_fraction: float
    utilization_ci: float = 0.0
    mean_wait_ci: float = 0.0
    miss_fraction_ci: float = 0.0


@dataclass(frozen=True)
class SimStats:
    phi: float
    servers: int
    jobs: int
    abandoned: int
    elapsed: float
    busy_time: float
    utilization: float
    utilization_ci: float
    mean_wait: float
    mean_wait_ci: float
    miss_fraction: float
    miss_fraction_ci: float
    per_server: tuple[ServerStats, ...]

    @classmethod
    def idle(cls, phi: float, servers: int) -> "SimStats":
        idle_server = ServerStats(0, 0.0, 0.0, 0.0)
        return cls(phi, servers, 0, 0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, (idle_server,) * servers)


@dataclass(frozen=True)
class PlanSimulation:
    per_sla: tuple[Optional[SimStats], ...]
    realized_revenue: float
    analytic_revenue: float


def _streams(cfg: SimConfig) -> list[np.random.Generator]:
    root = np.random.SeedSequence(cfg.seed, spawn_key=cfg.spawn_key)
    return [np.random.default_rng(child) for child in root.spawn(2 + cfg.servers)]


def _arrival_times(cfg: SimConfig, rng: np.random.Generator) -> np.ndarray:
    mean_gap = 1.0 / cfg.arrival_rate
    if cfg.time_budget is None:
        return np.cumsum(rng.exponential(mean_gap, cfg.total_jobs))

    expected = cfg.arrival_rate * cfg.time_budget
    block = int(expected + 10.0 * math.sqrt(expected) + 10.0)
    times = np.cumsum(rng.exponential(mean_gap, block))
    while times[-1] <= cfg.time_budget:
        more = times[-1] + np.cumsum(rng.exponential(mean_gap, block))
        times = np.concatenate([times, more])
    return times[times <= cfg.time_budget]


def route_arrivals(cfg: SimConfig) -> tuple[np.ndarray, np.ndarray]:
    """Poisson arrival times of the pool and the server each job goes to."""
    if cfg.arrival_rate == 0.0:
        return np.empty(0), np.empty(0, dtype=np.int64)
    arrival_rng, routing_rng = _streams(cfg)[:2]
    times = _arrival_times(cfg, arrival_rng)
    return times, routing_rng.integers(0, cfg.servers, size=len(times))


def _service_times(cfg: SimConfig, servers_rngs: list[np.random.Generator], route: np.ndarray) -> np.ndarray:
    counts = np.bincount(route, minlength=cfg.servers)
    draws = [cfg.model.sample_service(rng, int(n)) for rng, n in zip(servers_rngs, counts)]
    service = np.empty(len(route))
    # each server consumes its own stream in arrival order
    service[np.argsort(route, kind="stable")] = np.concatenate(draws) if draws else np.empty(0)
    return service


def _run_fcfs(
    arrivals: np.ndarray,
    route: np.ndarray,
    service: np.ndarray,
    servers: int,
    phi: float,
    policy: LateJobPolicy,
) -> tuple[np.ndarray, np.ndarray]:
    free_at = [0.0] * servers
    waits = [0.0] * len(arrivals)
    served = [True] * len(arrivals)
    abandon = policy is LateJobPolicy.abandon

    for k, (a, s, x) in enumerate(zip(arrivals.tolist(), route.tolist(), service.tolist())):
        f = free_at[s]
        w = f - a if f > a else 0.0
        if abandon and w > phi:
            waits[k] = phi
            served[k] = False
            continue
        waits[k] = w
        free_at[s] = a + w + x
    return np.array(waits), np.array(served, dtype=bool)


def _busy_until(t: float, starts: np.ndarray, service: np.ndarray) -> float:
    return float(np.clip(t - starts, 0.0, service).sum())


def _half_width(samples: np.ndarray, confidence: float) -> float:
    samples = samples[np.isfinite(samples)]
    if len(samples) < 2:
        return math.nan
    quantile = stats.t.ppf(0.5 + confidence / 2.0, len(samples) - 1)
    return float(quantile * samples.std(ddof=1) / math.sqrt(len(samples)))


def simulate_pool(cfg: SimConfig, phi: float) -> SimStats:
    """Simulate one processing unit and measure it after the warmup.

    Raises:
        ConfigError: late jobs are served and the per-server load is at or
            above the stability bound of the service law.
    """
    if phi < 0.0:
        raise ConfigError(f"deadline must be non-negative, got {phi}")
    if cfg.late_jobs is LateJobPolicy.serve and cfg.per_server_rate >= cfg.model.stability_bound:
        raise ConfigError(
            f"per-server rate {cfg.per_server_rate:g} is not below the stability bound "
            f"{cfg.model.stability_bound:g}; steady-state statistics do not exist"
        )
    if cfg.arrival_rate == 0.0:
        return SimStats.idle(phi, cfg.servers)

    rngs = _streams(cfg)
    arrivals = _arrival_times(cfg, rngs[0])
    route = rngs[1].integers(0, cfg.servers, size=len(arrivals))
    service = _service_times(cfg, rngs[2:], route)
    waits, served = _run_fcfs(arrivals, route, service, cfg.servers, phi, cfg.late_jobs)

    n = len(arrivals)
    first = int(n * cfg.warmup)
    if n - first < cfg.batches:
        raise ConfigError(f"horizon of {n} jobs is too short for {cfg.batches} batches")

    starts = (arrivals + waits)[served]
    lengths = service[served]
    t0, t_end = float(arrivals[first]), float(arrivals[-1])
    elapsed = t_end - t0

    edges = np.linspace(first, n, cfg.batches + 1).astype(int)
    edge_times = np.append(arrivals[edges[:-1]], t_end)
    busy_at = np.array([_busy_until(t, starts, lengths) for t in edge_times])
    spans = np.diff(edge_times)
    batch_util = np.divide(np.diff(busy_at), cfg.servers * spans, out=np.zeros(cfg.batches), where=spans > 0)

    measured_waits = waits[first:]
    missed = (measured_waits > phi) | ~served[first:]
    batch_wait = np.array([measured_waits[a - first:b - first].mean() for a, b in zip(edges[:-1], edges[1:])])
    batch_miss = np.array([missed[a - first:b - first].mean() for a, b in zip(edges[:-1], edges[1:])])

    busy_time = busy_at[-1] - busy_at[0]
    utilization = busy_time / (cfg.servers * elapsed) if elapsed > 0 else 0.0

    # per-server view over the same window and the same batches
    served_route = route[served]
    overlap = np.clip(np.minimum(starts + lengths, t_end) - np.maximum(starts, t0), 0.0, None)
    server_busy = np.bincount(served_route, weights=overlap, minlength=cfg.servers)
    measured_route = route[first:]
    server_jobs = np.bincount(measured_route, minlength=cfg.servers)
    server_wait = np.bincount(measured_route, weights=measured_waits, minlength=cfg.servers)
    server_miss = np.bincount(measured_route, weights=missed.astype(float), minlength=cfg.servers)

    cells = cfg.batches * cfg.servers
    cell = np.repeat(np.arange(cfg.batches), np.diff(edges)) * cfg.servers + measured_route
    cell_jobs = np.bincount(cell, minlength=cells).reshape(cfg.batches, cfg.servers)
    cell_wait = np.bincount(cell, weights=measured_waits, minlength=cells).reshape(cfg.batches, cfg.servers)
    cell_miss = np.bincount(cell, weights=missed.astype(float), minlength=cells).reshape(cfg.batches, cfg.servers)
    # nan marks a batch in which the server saw no job
    empty = np.full((cfg.batches, cfg.servers), np.nan)
    server_batch_wait = np.divide(cell_wait, cell_jobs, out=empty.copy(), where=cell_jobs > 0)
    server_batch_miss = np.divide(cell_miss, cell_jobs, out=empty.copy(), where=cell_jobs > 0)
    server_busy_at = np.array(
        [np.bincount(served_route, weights=np.clip(t - starts, 0.0, lengths), minlength=cfg.servers) for t in edge_times]
    )
    server_batch_util = np.divide(
        np.diff(server_busy_at, axis=0),
        spans[:, None],
        out=np.zeros((cfg.batches, cfg.servers)),
        where=spans[:, None] > 0,
    )

    per_server = tuple(
        ServerStats(
            jobs=int(j),
            utilization=float(min(b / elapsed, 1.0)) if elapsed > 0 else 0.0,
            mean_wait=float(w / j) if j else 0.0,
            miss_fraction=float(x / j) if j else 0.0,
            utilization_ci=_half_width(server_batch_util[:, k], cfg.confidence),
            mean_wait_ci=_half_width(server_batch_wait[:, k], cfg.confidence),
            miss_fraction_ci=_half_width(server_batch_miss[:, k], cfg.confidence),
        )
        for k, (j, b, w, x) in enumerate(zip(server_jobs, server_busy, server_wait, server_miss))
    )

    result = SimStats(
        phi=phi,
        servers=cfg.servers,
        jobs=n - first,
        abandoned=int((~served[first:]).sum()),
        elapsed=elapsed,
        busy_time=float(busy_time),
        utilization=float(min(utilization, 1.0)),
        utilization_ci=_half_width(batch_util, cfg.confidence),
        mean_wait=float(measured_waits.mean()),
        mean_wait_ci=_half_width(batch_wait, cfg.confidence),
        miss_fraction=float(missed.mean()),
        miss_fraction_ci=_half_width(batch_miss, cfg.confidence),
        per_server=per_server,
    )
    logfire.debug(
        "pool simulated",
        servers=cfg.servers,
        arrival_rate=cfg.arrival_rate,
        jobs=result.jobs,
        utilization=result.utilization,
        miss_fraction=result.miss_fraction,
    )
    return result


def server_interarrival_pvalues(cfg: SimConfig) -> list[float]:
    """Kolmogorov–Smirnov p-values of each server's interarrival times
    against an exponential law with rate Λ/m."""
    times, route = route_arrivals(cfg)
    scale = cfg.servers / cfg.arrival_rate
    pvalues = []
    for server in range(cfg.servers):
        gaps = np.diff(times[route == server])
        pvalues.append(float(stats.kstest(gaps, "expon", args=(0.0, scale)).pvalue))
    return pvalues


def _simulate_unit(args: tuple[SimConfig, float]) -> SimStats:
    cfg, phi = args
    return simulate_pool(cfg, phi)


def simulate_plan(
    plan: CapacityPlan,
    menu: SlaMenu,
    model: QueueModel,
    horizon: int = DEFAULT_JOBS,
    seed: int = DEFAULT_SEED,
    late_jobs: LateJobPolicy = LateJobPolicy.abandon,
    parallel: int = 1,
) -> PlanSimulation:
    """Simulate every processing unit of ``plan`` and measure its revenue.

    Realized revenue is Σ_l busy-time_l · θ_l / elapsed_l over the units.
    """
    work: list[tuple[int, SimConfig, float]] = []
    for sla, (rate, servers) in enumerate(zip(plan.accepted_rates, plan.servers), start=1):
        if servers > 0 and rate > 0.0:
            cfg = SimConfig(
                arrival_rate=rate,
                servers=servers,
                model=model,
                jobs=horizon,
                seed=seed,
                spawn_key=(sla,),
                late_jobs=late_jobs,
            )
            work.append((sla, cfg, menu.wait(sla)))

    with logfire.span("simulate plan", units=len(work), horizon=horizon):
        if parallel > 1 and len(work) > 1:
            with ProcessPoolExecutor(max_workers=parallel) as pool:
                results = list(pool.map(_simulate_unit, [(cfg, phi) for _, cfg, phi in work]))
        else:
            results = [simulate_pool(cfg, phi) for _, cfg, phi in work]

    per_sla: list[Optional[SimStats]] = [None] * len(menu)
    realized = 0.0
    for (sla, _, _), result in zip(work, results):
        per_sla[sla - 1] = result
        if result.elapsed > 0:
            realized += result.busy_time / result.elapsed * menu.price(sla)
    return PlanSimulation(tuple(per_sla), realized, plan.total_unit_revenue)
