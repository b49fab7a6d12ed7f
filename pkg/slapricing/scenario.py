"""
Scenario files: YAML documents validated with pydantic.

A scenario names the queueing law, the SLA menu, the user population and
the fleet sizes of an experiment battery. Every field has a default that
mirrors the bundled ``scenarios/reference.yaml``, so an empty file is a valid
scenario.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Literal, Optional

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator

from .errors import ConfigError
from .market import LogShape, PowerShape, UserPopulation, UtilityShape, compact_weights, loose_weights
from .queueing import ExponentialQueueSpec, ParetoQueueSpec, QueueModel
from .simulator import LateJobPolicy

BUNDLED_SCENARIO = Path(__file__).resolve().parent / "scenarios" / "reference.yaml"

WeightScheme = Literal["compact", "loose"]


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class ModelSection(_Section):
    kind: Literal["exponential", "pareto"] = "exponential"
    service_rate: float = Field(1.0, gt=0)
    miss_target: float = Field(0.05, gt=0, lt=1)
    pareto_shape: float = Field(1.4, gt=1)
    pareto_min_runtime: float = Field(1.0 / 6.0, gt=0)

    def exponential(self) -> ExponentialQueueSpec:
        return ExponentialQueueSpec(mu=self.service_rate, miss_target=self.miss_target)

    def pareto(self) -> ParetoQueueSpec:
        return ParetoQueueSpec(shape_alpha=self.pareto_shape, min_runtime=self.pareto_min_runtime)

    def build(self) -> QueueModel:
        return self.exponential() if self.kind == "exponential" else self.pareto()


class MenuSection(_Section):
    waits: list[float] = Field(default_factory=lambda: [0.0, 1.0, 2.0, 4.0, 8.0])
    pareto_first_wait: float = Field(0.05, gt=0)
    pareto_qos_grid: list[float] = Field(default_factory=lambda: [0.05, 0.1, 0.25, 0.5, 1.0, 2.0, 4.0, 8.0])

    @field_validator("waits")
    @classmethod
    def _increasing(cls, waits: list[float]) -> list[float]:
        if not waits:
            raise ValueError("at least one waiting time is required")
        if waits[0] < 0 or any(a >= b for a, b in zip(waits, waits[1:])):
            raise ValueError("waiting times must be non-negative and strictly increasing")
        return waits


class PopulationSection(_Section):
    users: int = Field(50, ge=1)
    arrival_rate: float = Field(20.0, gt=0)
    weights: list[WeightScheme] = Field(default_factory=lambda: ["compact", "loose"])
    shape: Literal["power", "log"] = "power"
    betas: list[float] = Field(default_factory=lambda: [0.25, 0.45, 0.75])
    probe_betas: list[float] = Field(default_factory=lambda: [0.5, 0.2])
    log_epsilon: float = Field(1.0, gt=0)

    @field_validator("betas", "probe_betas")
    @classmethod
    def _unit_interval(cls, betas: list[float]) -> list[float]:
        for beta in betas:
            if not 0.0 < beta < 1.0:
                raise ValueError(f"beta must lie in (0, 1), got {beta}")
        return betas


class FleetSection(_Section):
    sizes: list[int] = Field(default_factory=lambda: [800, 1600, 2400])

    @field_validator("sizes")
    @classmethod
    def _positive(cls, sizes: list[int]) -> list[int]:
        if not sizes or any(m < 1 for m in sizes):
            raise ValueError("fleet sizes must be positive")
        return sizes


class SimulationSection(_Section):
    jobs: int = Field(1_000_000, ge=1)
    seeds: list[int] = Field(default_factory=lambda: [20190101])
    warmup: float = Field(0.1, ge=0, le=0.5)
    batches: int = Field(20, ge=2)
    late_jobs: LateJobPolicy = LateJobPolicy.abandon
    pareto_load_fractions: list[float] = Field(default_factory=lambda: [0.1, 0.3, 0.5, 0.7, 0.9])


class OutputSection(_Section):
    results_dir: str = "results"


class Scenario(_Section):
    name: str = "reference"
    model: ModelSection = Field(default_factory=ModelSection)
    menu: MenuSection = Field(default_factory=MenuSection)
    population: PopulationSection = Field(default_factory=PopulationSection)
    fleet: FleetSection = Field(default_factory=FleetSection)
    simulation: SimulationSection = Field(default_factory=SimulationSection)
    output: OutputSection = Field(default_factory=OutputSection)

    @property
    def waits(self) -> tuple[float, ...]:
        return tuple(self.menu.waits)

    def shape(self, beta: Optional[float] = None) -> UtilityShape:
        if self.population.shape == "log":
            return LogShape(self.population.log_epsilon)
        return PowerShape(self.population.betas[0] if beta is None else beta)

    def weights(self, scheme: WeightScheme) -> list[float]:
        if scheme == "compact":
            return compact_weights(self.population.users)
        return loose_weights(self.population.users)

    def population_for(self, scheme: WeightScheme, beta: Optional[float] = None) -> UserPopulation:
        return UserPopulation.from_weights(self.weights(scheme), self.population.arrival_rate, self.shape(beta))

    def cells(self, include_probes: bool = True) -> list["Cell"]:
        """Every (weights, fleet size, β) combination of the battery."""
        betas = [(b, False) for b in self.population.betas]
        if include_probes:
            betas += [(b, True) for b in self.population.probe_betas]
        if self.population.shape == "log":
            betas = [(None, False)]
        return [
            Cell(scheme, m, beta, probe)
            for scheme in self.population.weights
            for m in self.fleet.sizes
            for beta, probe in betas
        ]


@dataclass(frozen=True)
class Cell:
    weights: WeightScheme
    fleet_size: int
    beta: Optional[float]
    probe: bool = False

    @property
    def label(self) -> str:
        beta = "log" if self.beta is None else f"{self.beta:g}"
        return f"{self.weights}/m={self.fleet_size}/beta={beta}"


def load_scenario(path: str | Path | None = None) -> Scenario:
    """Read and validate a scenario file; ``None`` loads the bundled one."""
    path = Path(path) if path is not None else BUNDLED_SCENARIO
    try:
        with path.open() as f_in:
            raw = yaml.safe_load(f_in) or {}
    except FileNotFoundError as e:
        raise ConfigError(f"scenario file not found: {path}") from e
    except yaml.YAMLError as e:
        raise ConfigError(f"{path}: {e}") from e

    try:
        return Scenario.model_validate(raw)
    except ValidationError as e:
        raise ConfigError(f"{path}: {e}") from e
