import pandas as pd
import pytest

from slapricing.config import get_settings
from slapricing.runner import main
from utils import write_small_scenario


def test_qos_curve_writes_tables(tmp_path, capsys):
    assert main(["qos-curve", "--out", str(tmp_path), "--no-progress"]) == 0
    exp = pd.read_csv(tmp_path / "qos_curve_exponential.csv")
    assert exp["rho_max"].tolist() == pytest.approx([0.05263, 0.1362, 0.2863, 0.5883, 0.8534], abs=5e-4)
    assert (tmp_path / "qos_curve_pareto.csv").exists()
    assert "[slapricing] wrote" in capsys.readouterr().out


def test_plan_from_breakpoints(tmp_path, capsys):
    argv = [
        "plan", "--offered", "4,5", "--cuts", "18,26",
        "--weights", "compact", "--fleet", "800", "--beta", "0.45", "--out", str(tmp_path),
    ]
    assert main(argv) == 0
    plan = pd.read_csv(tmp_path / "plan.csv")
    assert plan["servers"].tolist() == [0, 0, 0, 612, 188]
    assert plan["accepted_rate"].tolist() == pytest.approx([0.0, 0.0, 0.0, 360.0, 160.0])
    out = capsys.readouterr().out
    assert "users 1-18: SLA 4; users 19-26: SLA 5; users 27-50: opt out" in out


def test_plan_from_prices(tmp_path):
    argv = ["plan", "--prices=-,-,-,57.93,40.73", "--fleet", "800", "--beta", "0.45", "--out", str(tmp_path)]
    assert main(argv) == 0
    assert pd.read_csv(tmp_path / "plan.csv")["servers"].sum() <= 800


def test_plan_without_menu_fails(tmp_path, capsys):
    assert main(["plan", "--out", str(tmp_path)]) == 2
    assert capsys.readouterr().err.startswith("[slapricing]")


def test_wrong_price_count_fails(tmp_path, capsys):
    assert main(["plan", "--prices", "10,5", "--out", str(tmp_path)]) == 2
    assert "--prices needs 5 entries" in capsys.readouterr().err


def test_missing_scenario_fails(tmp_path, capsys):
    assert main(["qos-curve", "--scenario", str(tmp_path / "nope.yaml")]) == 2
    assert "scenario file not found" in capsys.readouterr().err


def test_price_on_small_scenario(tmp_path):
    scenario = write_small_scenario(tmp_path)
    assert main(["price", "--scenario", scenario, "--out", str(tmp_path), "--no-progress"]) == 0
    table = pd.read_csv(tmp_path / "price.csv")
    assert table["fleet_size"].tolist() == [10]
    assert table["improvement"].iloc[0] >= 0.0


def test_simulate_on_small_scenario(tmp_path):
    scenario = write_small_scenario(tmp_path)
    assert main(["simulate", "--scenario", scenario, "--out", str(tmp_path), "--seed", "4", "--plan", "--no-progress"]) == 0
    crosscheck = pd.read_csv(tmp_path / "simulation_crosscheck.csv")
    assert set(crosscheck["seed"]) == {4}
    assert (tmp_path / "plan_simulation.csv").exists()


def test_reproduce_on_small_scenario(tmp_path):
    scenario = write_small_scenario(tmp_path)
    assert main(["reproduce", "--scenario", scenario, "--out", str(tmp_path), "--skip-simulation", "--no-progress"]) == 0
    solutions = pd.read_csv(tmp_path / "optimal_solutions.csv")
    # two weight schemes at one fleet size and one β, plus the Pareto variant
    assert len(solutions) == 3
    assert set(solutions["model"]) == {"exponential", "pareto"}
    assert (tmp_path / "optimal_solutions_by_sla.csv").exists()
    assert (tmp_path / "utility_curve.csv").exists()
    assert not (tmp_path / "simulation_crosscheck.csv").exists()


def test_settings_from_environment(monkeypatch):
    monkeypatch.setenv("SLAPRICING_SEED", "17")
    monkeypatch.setenv("SLAPRICING_PARALLEL", "3")
    monkeypatch.setenv("SLAPRICING_PROGRESS", "no")
    monkeypatch.delenv("SLAPRICING_JOBS", raising=False)
    settings = get_settings()
    assert settings.seed == 17
    assert settings.parallel == 3
    assert settings.progress is False
    assert settings.jobs is None


def test_results_dir_from_environment(tmp_path, monkeypatch):
    monkeypatch.setenv("SLAPRICING_RESULTS_DIR", str(tmp_path / "env"))
    assert main(["qos-curve", "--model", "exponential"]) == 0
    assert (tmp_path / "env" / "qos_curve_exponential.csv").exists()
