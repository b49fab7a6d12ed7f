"""
Experiment battery: QoS curves, optimal solutions per scenario cell,
simulation cross-checks, and their tabular output.

Every ``run_*`` function returns full-precision values; rounding happens
only in ``format_table`` and the per-SLA tuple strings of
``records_frame``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Optional, Sequence

import logfire
import numpy as np
import pandas as pd
from tqdm.auto import tqdm

from .market import OPT_OUT, UtilityShape
from .optimizer import PricingSolution, improvement_ratio, optimize_on_demand, optimize_prices
from .queueing import QueueModel, match_pareto_waits, pareto_expected_wait
from .scenario import Cell, Scenario
from .simulator import LateJobPolicy, SimConfig, SimStats, simulate_plan, simulate_pool


def run_qos_curve(model: QueueModel, phi_grid: Iterable[float]) -> pd.DataFrame:
    """Maximum utilization and per-server rate for each waiting time."""
    rows = []
    for phi in phi_grid:
        lam = model.lambda_max(phi)
        rows.append({"model": model.kind, "phi": float(phi), "rho_max": model.utilization(lam), "lambda_max": lam})
    return pd.DataFrame(rows, columns=["model", "phi", "rho_max", "lambda_max"])


def run_utility_curve(shapes: Sequence[UtilityShape], phi_grid: Iterable[float]) -> pd.DataFrame:
    """𝒫(φ) and 𝒫(φ)/𝒫(0) for each shape."""
    grid = [float(phi) for phi in phi_grid]
    rows = []
    for shape in shapes:
        top = shape.value(0.0)
        for phi in grid:
            value = shape.value(phi)
            rows.append({"shape": shape.label(), "phi": phi, "utility": value, "relative": value / top})
    return pd.DataFrame(rows, columns=["shape", "phi", "utility", "relative"])


@dataclass(frozen=True)
class SlaOutcome:
    sla: int
    cut_user: int
    price: float
    accepted_rate: float
    servers: int

    def as_tuple(self) -> str:
        return f"({self.cut_user}, {self.price:.2f}, {self.accepted_rate:.1f}, {self.servers})"


@dataclass(frozen=True)
class RunRecord:
    scenario: str
    model: str
    weights: str
    fleet_size: int
    beta: Optional[float]
    probe: bool
    slas: tuple[SlaOutcome, ...]
    revenue: float
    baseline_revenue: float
    baseline_price: float
    baseline_cut: int
    improvement: float
    fleet_utilization: float
    baseline_fleet_utilization: float
    evaluations: int

    @property
    def offered(self) -> tuple[int, ...]:
        return tuple(s.sla for s in self.slas)

    @property
    def cuts(self) -> tuple[int, ...]:
        return tuple(s.cut_user for s in self.slas)

    @property
    def prices(self) -> tuple[float, ...]:
        return tuple(s.price for s in self.slas)

    @property
    def servers(self) -> tuple[int, ...]:
        return tuple(s.servers for s in self.slas)

    @property
    def accepted_rates(self) -> tuple[float, ...]:
        return tuple(s.accepted_rate for s in self.slas)


def make_record(
    scenario: str,
    cell: Cell,
    model: QueueModel,
    solution: PricingSolution,
    baseline: PricingSolution,
) -> RunRecord:
    bp = solution.breakpoints
    outcomes = tuple(
        SlaOutcome(
            sla=sla,
            cut_user=cut,
            price=solution.menu.price(sla),
            accepted_rate=solution.plan.accepted_rates[sla - 1],
            servers=solution.plan.servers[sla - 1],
        )
        for sla, cut in zip(bp.offered, bp.cut_users)
    ) if bp is not None else ()
    base_bp = baseline.breakpoints
    return RunRecord(
        scenario=scenario,
        model=model.kind,
        weights=cell.weights,
        fleet_size=cell.fleet_size,
        beta=cell.beta,
        probe=cell.probe,
        slas=outcomes,
        revenue=solution.revenue,
        baseline_revenue=baseline.revenue,
        baseline_price=baseline.prices[0] if baseline.prices else math.nan,
        baseline_cut=base_bp.cut_users[0] if base_bp is not None else 0,
        improvement=improvement_ratio(solution.revenue, baseline.revenue) if baseline.revenue > 0 else math.nan,
        fleet_utilization=solution.plan.fleet_utilization,
        baseline_fleet_utilization=baseline.plan.fleet_utilization,
        evaluations=solution.evaluations,
    )


def run_cell(
    scenario: Scenario,
    cell: Cell,
    model: Optional[QueueModel] = None,
    waits: Optional[Sequence[float]] = None,
    parallel: int = 1,
    epsilon_pricing: bool = False,
    progress: bool = False,
) -> RunRecord:
    """Optimal menu and on-demand baseline for one (weights, m, β) cell."""
    model = model or scenario.model.build()
    waits = tuple(waits) if waits is not None else scenario.waits
    pop = scenario.population_for(cell.weights, cell.beta)
    with logfire.span("scenario cell", cell=cell.label, model=model.kind):
        solution = optimize_prices(
            cell.fleet_size, pop, waits, model,
            parallel=parallel, epsilon_pricing=epsilon_pricing, progress=progress,
        )
        baseline = optimize_on_demand(cell.fleet_size, pop, waits, model)
    return make_record(scenario.name, cell, model, solution, baseline)


def run_optimal_solutions(
    scenario: Scenario,
    parallel: int = 1,
    epsilon_pricing: bool = False,
    include_probes: bool = True,
    progress: bool = False,
) -> list[RunRecord]:
    """Run every cell of the battery, probe β values included by default."""
    cells = scenario.cells(include_probes=include_probes)
    return [
        run_cell(scenario, cell, parallel=parallel, epsilon_pricing=epsilon_pricing)
        for cell in tqdm(cells, desc="cells", disable=not progress)
    ]


def pareto_menu(scenario: Scenario) -> tuple[float, ...]:
    """Pareto waits with the same utilization ratios as the scenario menu."""
    return match_pareto_waits(
        scenario.model.exponential(), scenario.waits, scenario.model.pareto(), scenario.menu.pareto_first_wait
    )


def run_pareto_variant(
    scenario: Scenario,
    cell: Optional[Cell] = None,
    parallel: int = 1,
    epsilon_pricing: bool = False,
    progress: bool = False,
) -> RunRecord:
    """One battery cell priced under Pareto service with the matched menu."""
    if cell is None:
        betas = scenario.population.betas
        beta = (0.45 if 0.45 in betas else betas[0]) if scenario.population.shape == "power" else None
        cell = Cell(scenario.population.weights[0], scenario.fleet.sizes[0], beta)
    return run_cell(
        scenario, cell,
        model=scenario.model.pareto(),
        waits=pareto_menu(scenario),
        parallel=parallel,
        epsilon_pricing=epsilon_pricing,
        progress=progress,
    )


def records_frame(records: Sequence[RunRecord]) -> pd.DataFrame:
    """One row per cell with per-SLA (cut, price, rate, servers) tuples."""
    rows = []
    for r in records:
        rows.append(
            {
                "scenario": r.scenario,
                "model": r.model,
                "weights": r.weights,
                "fleet_size": r.fleet_size,
                "beta": r.beta,
                "probe": r.probe,
                "offered": " ".join(str(sla) for sla in r.offered),
                "sla_tuples": " ".join(f"SLA{s.sla}={s.as_tuple()}" for s in r.slas),
                "revenue": r.revenue,
                "baseline_cut": r.baseline_cut,
                "baseline_price": r.baseline_price,
                "baseline_revenue": r.baseline_revenue,
                "improvement": r.improvement,
                "fleet_utilization": r.fleet_utilization,
                "baseline_fleet_utilization": r.baseline_fleet_utilization,
                "evaluations": r.evaluations,
            }
        )
    return pd.DataFrame(rows)


def sla_frame(records: Sequence[RunRecord]) -> pd.DataFrame:
    """Long format: one row per (cell, offered SLA)."""
    rows = [
        {
            "scenario": r.scenario,
            "model": r.model,
            "weights": r.weights,
            "fleet_size": r.fleet_size,
            "beta": r.beta,
            "sla": s.sla,
            "cut_user": s.cut_user,
            "price": s.price,
            "accepted_rate": s.accepted_rate,
            "servers": s.servers,
        }
        for r in records
        for s in r.slas
    ]
    return pd.DataFrame(
        rows, columns=["scenario", "model", "weights", "fleet_size", "beta", "sla", "cut_user", "price",
                       "accepted_rate", "servers"],
    )


CROSSCHECK_COLUMNS = [
    "unit", "model", "seed", "servers", "arrival_rate", "phi", "late_jobs",
    "analytic_utilization", "offered_load", "simulated_utilization", "utilization_ci",
    "analytic_miss", "simulated_miss", "miss_ci",
    "analytic_wait", "simulated_wait", "wait_ci", "within_ci",
]


def _crosscheck_row(
    unit: str,
    model: QueueModel,
    seed: int,
    cfg: SimConfig,
    sim: SimStats,
    analytic_utilization: float,
    analytic_miss: float,
    analytic_wait: float,
) -> dict:
    if sim.jobs == 0:
        within = True
    elif not math.isnan(analytic_wait):
        within = abs(sim.mean_wait - analytic_wait) <= sim.mean_wait_ci
    else:
        within = abs(sim.miss_fraction - analytic_miss) <= sim.miss_fraction_ci
    return {
        "unit": unit,
        "model": model.kind,
        "seed": seed,
        "servers": cfg.servers,
        "arrival_rate": cfg.arrival_rate,
        "phi": sim.phi,
        "late_jobs": cfg.late_jobs.value,
        "analytic_utilization": analytic_utilization,
        "offered_load": cfg.per_server_rate * model.mean_service,
        "simulated_utilization": sim.utilization,
        "utilization_ci": sim.utilization_ci,
        "analytic_miss": analytic_miss,
        "simulated_miss": sim.miss_fraction,
        "miss_ci": sim.miss_fraction_ci,
        "analytic_wait": analytic_wait,
        "simulated_wait": sim.mean_wait,
        "wait_ci": sim.mean_wait_ci,
        "within_ci": bool(within),
    }


def run_simulation_crosscheck(
    scenario: Scenario,
    seeds: Optional[Sequence[int]] = None,
    jobs: Optional[int] = None,
    progress: bool = False,
) -> pd.DataFrame:
    """Closed forms against simulation, one row per (unit, seed).

    Units are a single exponential server at λ_max(φ) for every menu wait, an
    idle server, and single Pareto servers (late jobs served) at fractions of
    the stability bound.
    """
    sim = scenario.simulation
    seeds = list(seeds) if seeds is not None else list(sim.seeds)
    jobs = jobs or sim.jobs
    exp_model = scenario.model.exponential()
    par_model = scenario.model.pareto()

    units: list[tuple[str, QueueModel, float, float, LateJobPolicy, float, float, float]] = []
    for phi in scenario.waits:
        lam = exp_model.lambda_max(phi)
        units.append(
            (f"exp phi={phi:g}", exp_model, lam, phi, sim.late_jobs,
             exp_model.utilization(lam), exp_model.miss_target, math.nan)
        )
    units.append(("idle", exp_model, 0.0, scenario.waits[0], sim.late_jobs, 0.0, 0.0, math.nan))
    for fraction in sim.pareto_load_fractions:
        lam = fraction * par_model.stability_bound
        wait = pareto_expected_wait(lam, par_model)
        units.append(
            (f"pareto load={fraction:g}", par_model, lam, wait, LateJobPolicy.serve,
             par_model.utilization(lam), math.nan, wait)
        )

    rows = []
    todo = [(u, seed) for u in units for seed in seeds]
    for (unit, model, lam, phi, policy, util, miss, wait), seed in tqdm(todo, desc="units", disable=not progress):
        cfg = SimConfig(
            arrival_rate=lam,
            servers=1,
            model=model,
            jobs=jobs,
            seed=seed,
            warmup=sim.warmup,
            batches=sim.batches,
            late_jobs=policy,
        )
        stats = simulate_pool(cfg, phi)
        rows.append(_crosscheck_row(unit, model, seed, cfg, stats, util, miss, wait))
    return pd.DataFrame(rows, columns=CROSSCHECK_COLUMNS)


def run_plan_simulation(
    scenario: Scenario,
    cell: Cell,
    seed: Optional[int] = None,
    jobs: Optional[int] = None,
    parallel: int = 1,
) -> pd.DataFrame:
    """Simulate the optimal plan of one cell.

    Revenue is measured with late jobs served (every accepted job is billed);
    miss fractions are measured with late jobs abandoned.
    """
    sim = scenario.simulation
    seed = seed if seed is not None else sim.seeds[0]
    jobs = jobs or sim.jobs
    model = scenario.model.build()
    pop = scenario.population_for(cell.weights, cell.beta)
    solution = optimize_prices(cell.fleet_size, pop, scenario.waits, model, parallel=parallel)

    served = simulate_plan(solution.plan, solution.menu, model, horizon=jobs, seed=seed,
                           late_jobs=LateJobPolicy.serve, parallel=parallel)
    abandoned = simulate_plan(solution.plan, solution.menu, model, horizon=jobs, seed=seed,
                              late_jobs=LateJobPolicy.abandon, parallel=parallel)

    rows = []
    for sla in solution.offered:
        paid, timed = served.per_sla[sla - 1], abandoned.per_sla[sla - 1]
        servers = solution.plan.servers[sla - 1]
        price = solution.menu.price(sla)
        rows.append(
            {
                "sla": str(sla),
                "servers": servers,
                "accepted_rate": solution.plan.accepted_rates[sla - 1],
                "price": price,
                "analytic_revenue": servers * solution.plan.utilizations[sla - 1] * price,
                "realized_revenue": paid.busy_time / paid.elapsed * price if paid else 0.0,
                "miss_fraction": timed.miss_fraction if timed else 0.0,
                "miss_ci": timed.miss_fraction_ci if timed else 0.0,
            }
        )
    rows.append(
        {
            "sla": "total",
            "servers": solution.plan.servers_used,
            "accepted_rate": float(np.sum(solution.plan.accepted_rates)),
            "price": math.nan,
            "analytic_revenue": served.analytic_revenue,
            "realized_revenue": served.realized_revenue,
            "miss_fraction": math.nan,
            "miss_ci": math.nan,
        }
    )
    return pd.DataFrame(rows)


def format_table(frame: pd.DataFrame, digits: int = 4) -> str:
    """Aligned text table; the only place numbers are rounded for display."""
    return frame.to_string(index=False, float_format=lambda v: f"{v:.{digits}f}")


def write_table(frame: pd.DataFrame, directory: str | Path, name: str) -> Path:
    """Write ``frame`` as ``<directory>/<name>.csv`` with one header row."""
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    path = out / f"{name}.csv"
    frame.to_csv(path, index=False)
    return path


def choice_blocks(choices: Sequence[Optional[int]]) -> list[tuple[int, int, Optional[int]]]:
    """Collapse per-user choices into (first user, last user, SLA) runs."""
    blocks: list[tuple[int, int, Optional[int]]] = []
    for user, sla in enumerate(choices, start=1):
        if blocks and blocks[-1][2] == sla:
            blocks[-1] = (blocks[-1][0], user, sla)
        else:
            blocks.append((user, user, sla))
    return blocks


def describe_choices(choices: Sequence[Optional[int]]) -> str:
    parts = []
    for first, last, sla in choice_blocks(choices):
        target = "opt out" if sla is OPT_OUT else f"SLA {sla}"
        parts.append(f"users {first}-{last}: {target}")
    return "; ".join(parts)
