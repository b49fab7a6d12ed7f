from __future__ import annotations

import argparse
import math
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import dotenv
import logfire
import pandas as pd

from .config import Settings, get_settings
from .errors import ConfigError, PricingError
from .experiments import (
    describe_choices,
    format_table,
    records_frame,
    run_cell,
    run_optimal_solutions,
    run_pareto_variant,
    run_plan_simulation,
    run_qos_curve,
    run_simulation_crosscheck,
    run_utility_curve,
    sla_frame,
    write_table,
)
from .logs import configure_logging
from .market import PowerShape, SlaMenu, aggregate_arrivals, user_choices
from .optimizer import Breakpoints, breakpoint_prices
from .planner import plan_capacity
from .scenario import Cell, Scenario, load_scenario


@dataclass
class RunContext:
    scenario: Scenario
    results_dir: Path
    seed: int
    jobs: int
    parallel: int
    epsilon_pricing: bool
    progress: bool


def _context(args: argparse.Namespace, settings: Settings) -> RunContext:
    scenario = load_scenario(args.scenario or settings.scenario)
    sim = scenario.simulation
    return RunContext(
        scenario=scenario,
        results_dir=Path(args.out or settings.results_dir or scenario.output.results_dir),
        seed=args.seed if args.seed is not None else (settings.seed if settings.seed is not None else sim.seeds[0]),
        jobs=args.jobs or settings.jobs or sim.jobs,
        parallel=args.parallel or settings.parallel,
        epsilon_pricing=args.epsilon_pricing,
        progress=settings.progress and not args.no_progress,
    )


def _emit(ctx: RunContext, frame, name: str, title: str) -> None:
    print(f"[slapricing] {title}")
    print(format_table(frame))
    path = write_table(frame, ctx.results_dir, name)
    print(f"[slapricing] wrote {path}")


def _cell(ctx: RunContext, args: argparse.Namespace) -> Cell:
    pop = ctx.scenario.population
    beta = args.beta if args.beta is not None else (pop.betas[0] if pop.shape == "power" else None)
    fleet = args.fleet if args.fleet is not None else ctx.scenario.fleet.sizes[0]
    return Cell(args.weights or pop.weights[0], fleet, None if pop.shape == "log" else beta)


def _parse_list(text: str, cast=float) -> list:
    return [None if item.strip() in {"-", ""} else cast(item) for item in text.split(",")]


def cmd_qos_curve(ctx: RunContext, args: argparse.Namespace) -> None:
    frames = []
    if args.model in ("exponential", "both"):
        frames.append(run_qos_curve(ctx.scenario.model.exponential(), ctx.scenario.waits))
    if args.model in ("pareto", "both"):
        frames.append(run_qos_curve(ctx.scenario.model.pareto(), ctx.scenario.menu.pareto_qos_grid))
    for frame in frames:
        model = frame["model"].iloc[0]
        _emit(ctx, frame, f"qos_curve_{model}", f"maximum utilization per waiting time ({model})")


def cmd_utility_curve(ctx: RunContext, args: argparse.Namespace) -> None:
    betas = sorted(set(ctx.scenario.population.betas), reverse=True)
    shapes = [PowerShape(b) for b in betas] if ctx.scenario.population.shape == "power" else [ctx.scenario.shape()]
    grid = [i * args.step for i in range(int(args.max_wait / args.step) + 1)]
    _emit(ctx, run_utility_curve(shapes, grid), "utility_curve", "relative utility per waiting time")


def _menu_from_args(ctx: RunContext, args: argparse.Namespace, pop) -> SlaMenu:
    waits = ctx.scenario.waits
    if args.prices:
        prices = _parse_list(args.prices)
        if len(prices) != len(waits):
            raise ConfigError(f"--prices needs {len(waits)} entries, use '-' for SLAs that are not offered")
        return SlaMenu(waits).with_prices(prices)
    if args.offered and args.cuts:
        bp = Breakpoints(tuple(_parse_list(args.offered, int)), tuple(_parse_list(args.cuts, int)))
        offered_prices = breakpoint_prices(bp, pop, [waits[l - 1] for l in bp.offered])
        if offered_prices is None:
            raise ConfigError(f"breakpoints {bp.offered}/{bp.cut_users} do not yield a valid price menu")
        posted: list[Optional[float]] = [None] * len(waits)
        for sla, price in zip(bp.offered, offered_prices):
            posted[sla - 1] = price
        return SlaMenu(waits).with_prices(posted)
    raise ConfigError("plan needs either --prices or both --offered and --cuts")


def cmd_plan(ctx: RunContext, args: argparse.Namespace) -> None:
    cell = _cell(ctx, args)
    pop = ctx.scenario.population_for(cell.weights, cell.beta)
    menu = _menu_from_args(ctx, args, pop)
    model = ctx.scenario.model.build()

    choices = user_choices(pop, menu)
    plan = plan_capacity(cell.fleet_size, aggregate_arrivals(pop, menu), menu, model)
    frame = pd.DataFrame(
        {
            "sla": list(range(1, len(menu) + 1)),
            "phi": list(menu.waits),
            "price": [math.nan if p is None else p for p in menu.prices],
            "lambda_max": [math.nan if c is None else c for c in plan.lambda_max],
            "offered_rate": list(plan.offered_rates),
            "accepted_rate": list(plan.accepted_rates),
            "servers": list(plan.servers),
            "utilization": list(plan.utilizations),
        }
    )
    print(f"[slapricing] {cell.label}: {describe_choices(choices)}")
    _emit(ctx, frame, "plan", f"capacity plan on {cell.fleet_size} servers")
    print(
        f"[slapricing] total unit revenue {plan.total_unit_revenue:.4f}, "
        f"servers used {plan.servers_used}/{cell.fleet_size}, "
        f"fleet utilization {plan.fleet_utilization:.2%}"
    )


def cmd_price(ctx: RunContext, args: argparse.Namespace) -> None:
    cell = _cell(ctx, args)
    use_pareto = args.model == "pareto" or (args.model == "scenario" and ctx.scenario.model.kind == "pareto")
    if use_pareto:
        record = run_pareto_variant(
            ctx.scenario, cell, parallel=ctx.parallel, epsilon_pricing=ctx.epsilon_pricing, progress=ctx.progress
        )
    else:
        record = run_cell(
            ctx.scenario, cell,
            model=ctx.scenario.model.exponential(),
            parallel=ctx.parallel, epsilon_pricing=ctx.epsilon_pricing, progress=ctx.progress,
        )
    _emit(ctx, records_frame([record]), "price", f"optimal menu for {cell.label}")
    print(f"[slapricing] {record.evaluations} candidates evaluated")


def cmd_simulate(ctx: RunContext, args: argparse.Namespace) -> None:
    seeds = [ctx.seed] if args.seed is not None else None
    crosscheck = run_simulation_crosscheck(ctx.scenario, seeds=seeds, jobs=ctx.jobs, progress=ctx.progress)
    _emit(ctx, crosscheck, "simulation_crosscheck", "closed forms against simulation")
    if args.plan:
        cell = _cell(ctx, args)
        frame = run_plan_simulation(ctx.scenario, cell, seed=ctx.seed, jobs=ctx.jobs, parallel=ctx.parallel)
        _emit(ctx, frame, "plan_simulation", f"simulated optimal plan for {cell.label}")


def cmd_reproduce(ctx: RunContext, args: argparse.Namespace) -> None:
    scenario = ctx.scenario
    with logfire.span("reproduce", scenario=scenario.name):
        _emit(ctx, run_qos_curve(scenario.model.exponential(), scenario.waits), "qos_curve_exponential",
              "maximum utilization per waiting time (exponential)")
        _emit(ctx, run_qos_curve(scenario.model.pareto(), scenario.menu.pareto_qos_grid), "qos_curve_pareto",
              "maximum utilization per waiting time (pareto)")
        if scenario.population.shape == "power":
            shapes = [PowerShape(b) for b in sorted(set(scenario.population.betas), reverse=True)]
            _emit(ctx, run_utility_curve(shapes, [0.5 * i for i in range(21)]), "utility_curve",
                  "relative utility per waiting time")

        records = run_optimal_solutions(
            scenario, parallel=ctx.parallel, epsilon_pricing=ctx.epsilon_pricing, progress=ctx.progress
        )
        records.append(
            run_pareto_variant(scenario, parallel=ctx.parallel, epsilon_pricing=ctx.epsilon_pricing)
        )
        _emit(ctx, records_frame(records), "optimal_solutions", "optimal solutions and on-demand baselines")
        write_table(sla_frame(records), ctx.results_dir, "optimal_solutions_by_sla")

        if not args.skip_simulation:
            crosscheck = run_simulation_crosscheck(scenario, jobs=ctx.jobs, progress=ctx.progress)
            _emit(ctx, crosscheck, "simulation_crosscheck", "closed forms against simulation")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--scenario", help="Scenario YAML file (default: bundled reference scenario)")
    common.add_argument("--out", help="Directory for CSV results")
    common.add_argument("--seed", type=int, help="Simulation seed")
    common.add_argument("--jobs", type=int, help="Simulation horizon in post-warmup jobs")
    common.add_argument("--parallel", type=int, help="Worker processes for the price search")
    common.add_argument("--epsilon-pricing", action="store_true", help="Undercut breakpoint prices by a factor 1-1e-6")
    common.add_argument("--no-progress", action="store_true", help="Hide progress bars")
    common.add_argument("--debug", action="store_true", help="Print debug log records")

    cell = argparse.ArgumentParser(add_help=False)
    cell.add_argument("--weights", choices=["compact", "loose"], help="Weight scheme of the population")
    cell.add_argument("--fleet", type=int, help="Fleet size m")
    cell.add_argument("--beta", type=float, help="Latency sensitivity of the power utility")

    parser = argparse.ArgumentParser(
        prog="slapricing", description="QoS-differentiated SLA pricing and capacity planning experiments"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("qos-curve", parents=[common], help="Maximum utilization for each waiting time")
    p.add_argument("--model", choices=["exponential", "pareto", "both"], default="both")
    p.set_defaults(handler=cmd_qos_curve)

    p = sub.add_parser("utility-curve", parents=[common], help="Relative utility for each waiting time")
    p.add_argument("--max-wait", type=float, default=10.0)
    p.add_argument("--step", type=float, default=0.5)
    p.set_defaults(handler=cmd_utility_curve)

    p = sub.add_parser("plan", parents=[common, cell], help="Plan capacity for a given price menu")
    p.add_argument("--prices", help="Comma-separated price per SLA, '-' for SLAs that are not offered")
    p.add_argument("--offered", help="Comma-separated offered SLAs (1-based), priced from --cuts")
    p.add_argument("--cuts", help="Comma-separated last user of each offered SLA")
    p.set_defaults(handler=cmd_plan)

    p = sub.add_parser("price", parents=[common, cell], help="Search the revenue-maximizing menu")
    p.add_argument("--model", choices=["scenario", "exponential", "pareto"], default="scenario")
    p.set_defaults(handler=cmd_price)

    p = sub.add_parser("simulate", parents=[common, cell], help="Check closed forms and plans by simulation")
    p.add_argument("--plan", action="store_true", help="Also simulate the optimal plan of one cell")
    p.set_defaults(handler=cmd_simulate)

    p = sub.add_parser("reproduce", parents=[common], help="Run the full experiment battery")
    p.add_argument("--skip-simulation", action="store_true", help="Leave out the simulation cross-check")
    p.set_defaults(handler=cmd_reproduce)
    return parser


def main(argv: list[str] | None = None) -> int:
    dotenv.load_dotenv()
    args = build_parser().parse_args(argv)
    settings = get_settings()
    configure_logging(debug=args.debug or settings.debug)

    try:
        ctx = _context(args, settings)
        args.handler(ctx, args)
    except PricingError as e:
        print(f"[slapricing] {e}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
