import math

import pandas as pd
import pytest

from slapricing.experiments import (
    CROSSCHECK_COLUMNS,
    choice_blocks,
    describe_choices,
    format_table,
    pareto_menu,
    records_frame,
    run_cell,
    run_plan_simulation,
    run_qos_curve,
    run_simulation_crosscheck,
    run_utility_curve,
    sla_frame,
    write_table,
)
from slapricing.market import OPT_OUT, PowerShape
from slapricing.queueing import ExponentialQueueSpec, ParetoQueueSpec
from slapricing.scenario import Cell, load_scenario
from utils import write_small_scenario


def test_exponential_qos_curve():
    frame = run_qos_curve(ExponentialQueueSpec(), [0.0, 1.0, 2.0, 4.0, 8.0])
    assert list(frame.columns) == ["model", "phi", "rho_max", "lambda_max"]
    assert frame["rho_max"].tolist() == pytest.approx([0.05263, 0.1362, 0.2863, 0.5883, 0.8534], abs=5e-4)
    assert frame["rho_max"].is_monotonic_increasing


def test_pareto_qos_curve():
    frame = run_qos_curve(ParetoQueueSpec(), [0.05, 0.5, 4.0])
    assert set(frame["model"]) == {"pareto"}
    assert frame["rho_max"].iloc[0] == pytest.approx(0.003168, abs=1e-4)
    assert frame["rho_max"].is_monotonic_increasing


def test_utility_curve_is_relative_to_no_wait():
    frame = run_utility_curve([PowerShape(0.75), PowerShape(0.25)], [0.0, 1.0, 4.0])
    assert len(frame) == 6
    assert frame[frame["phi"] == 0.0]["relative"].tolist() == [1.0, 1.0]
    at_four = frame[frame["phi"] == 4.0].set_index("shape")["relative"]
    # less latency-sensitive users keep more of their utility
    assert at_four["power(beta=0.75)"] > at_four["power(beta=0.25)"]


def test_choice_blocks():
    choices = (2, 2, 4, 4, 4, OPT_OUT)
    assert choice_blocks(choices) == [(1, 2, 2), (3, 5, 4), (6, 6, OPT_OUT)]
    assert describe_choices(choices) == "users 1-2: SLA 2; users 3-5: SLA 4; users 6-6: opt out"
    assert choice_blocks(()) == []


def test_write_table(tmp_path):
    frame = pd.DataFrame({"phi": [0.0, 1.0], "rho_max": [0.0526315789, 0.13619]})
    path = write_table(frame, tmp_path / "out", "qos")
    assert path.name == "qos.csv"
    lines = path.read_text().splitlines()
    assert lines[0] == "phi,rho_max"
    # full precision in files, rounding only in the display table
    assert pd.read_csv(path)["rho_max"].iloc[0] == 0.0526315789
    assert "0.0526" in format_table(frame)


def test_run_cell_on_small_scenario(tmp_path):
    scenario = load_scenario(write_small_scenario(tmp_path))
    record = run_cell(scenario, Cell("compact", 10, 0.45))
    assert record.revenue >= record.baseline_revenue > 0.0
    assert record.improvement >= 0.0
    assert sum(record.servers) <= 10
    assert list(record.offered) == sorted(record.offered)
    assert list(record.prices) == sorted(record.prices, reverse=True)

    table = records_frame([record])
    assert table["fleet_size"].tolist() == [10]
    long = sla_frame([record])
    assert len(long) == len(record.slas)
    assert long["servers"].sum() == sum(record.servers)


def test_pareto_menu_starts_at_first_wait(tmp_path):
    scenario = load_scenario(write_small_scenario(tmp_path))
    waits = pareto_menu(scenario)
    assert len(waits) == 3
    assert waits[0] == 0.05
    assert all(a < b for a, b in zip(waits, waits[1:]))


def test_simulation_crosscheck_rows(tmp_path):
    scenario = load_scenario(write_small_scenario(tmp_path))
    frame = run_simulation_crosscheck(scenario, seeds=[1, 2], jobs=5_000)
    assert list(frame.columns) == CROSSCHECK_COLUMNS
    # three menu waits, the idle unit and one Pareto load, for two seeds
    assert len(frame) == (3 + 1 + 1) * 2
    idle = frame[frame["unit"] == "idle"]
    assert (idle["simulated_utilization"] == 0.0).all()
    assert idle["within_ci"].all()
    pareto = frame[frame["model"] == "pareto"]
    assert (pareto["late_jobs"] == "serve").all()
    assert not math.isnan(pareto["analytic_wait"].iloc[0])


def test_plan_simulation_revenue(tmp_path):
    scenario = load_scenario(write_small_scenario(tmp_path))
    frame = run_plan_simulation(scenario, Cell("compact", 10, 0.45), seed=3, jobs=100_000)
    total = frame[frame["sla"] == "total"].iloc[0]
    assert total["servers"] <= 10
    assert total["realized_revenue"] == pytest.approx(total["analytic_revenue"], rel=0.1)
