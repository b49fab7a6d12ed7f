import itertools
import math

import numpy as np
from scipy import integrate

from slapricing.market import SlaMenu, UserPopulation
from slapricing.queueing import ExponentialQueueSpec


def gamma_by_quadrature(s: float, z: float) -> float:
    """Γ(s, z) straight from its integral definition, integrated in log x."""
    # x = e^t turns x^(s-1) e^(-x) dx into e^(s·t - e^t) dt
    lo, hi = math.log(z), math.log(z + 100.0)
    value, _ = integrate.quad(lambda t: math.exp(s * t - math.exp(t)), lo, hi, epsabs=0.0, epsrel=1e-12, limit=400)
    return value


def brute_force_revenue(m: int, rates, menu: SlaMenu, model: ExponentialQueueSpec) -> float:
    """Best revenue over every split of at most ``m`` servers (exponential service).

    An SLA given k servers accepts min(Λ, k·λ_max) and earns θ per unit of
    accepted workload.
    """
    offered = [l for l, p in enumerate(menu.prices) if p is not None]
    caps = {l: model.lambda_max(menu.waits[l]) for l in offered}
    best = 0.0
    for split in itertools.product(range(m + 1), repeat=len(offered)):
        if sum(split) > m:
            continue
        revenue = sum(
            min(rates[l], k * caps[l]) / model.mu * menu.prices[l] for l, k in zip(offered, split)
        )
        best = max(best, revenue)
    return best


def price_grid_revenue(
    m: int,
    pop: UserPopulation,
    waits: tuple[float, float],
    model: ExponentialQueueSpec,
    points: int = 400,
) -> tuple[float, float]:
    """Best revenue over a ``points`` × ``points`` grid of two-SLA price menus.

    Users choose by surplus (ties to SLA 1, zero surplus participates) and
    capacity is split between the two SLAs by enumeration. Returns the best
    revenue and the grid step.
    """
    utility = np.outer(pop.weights, pop.shape.values(waits))  # (K, 2)
    top = float(utility.max())
    step = top / points
    grid = np.arange(1, points + 1) * step
    theta1, theta2 = np.meshgrid(grid, grid, indexing="ij")
    theta1, theta2 = theta1.ravel(), theta2.ravel()
    valid = theta1 > theta2
    theta1, theta2 = theta1[valid], theta2[valid]

    s1 = utility[None, :, 0] - theta1[:, None]
    s2 = utility[None, :, 1] - theta2[:, None]
    pick1 = (s1 >= s2) & (s1 >= 0.0)
    pick2 = ~pick1 & (s2 >= 0.0)
    h = pop.arrival_rates
    rate1 = pick1 @ h
    rate2 = pick2 @ h

    cap1, cap2 = model.lambda_max(waits[0]), model.lambda_max(waits[1])
    best = np.zeros_like(rate1)
    for k1 in range(m + 1):
        k2 = m - k1
        revenue = (np.minimum(rate1, k1 * cap1) * theta1 + np.minimum(rate2, k2 * cap2) * theta2) / model.mu
        best = np.maximum(best, revenue)
    return float(best.max()), step


SMALL_SCENARIO = """
name: small

menu:
  waits: [0.0, 2.0, 8.0]
  pareto_qos_grid: [0.05, 0.5]

population:
  users: 8
  arrival_rate: 1.0
  betas: [0.45]
  probe_betas: []

fleet:
  sizes: [10]

simulation:
  jobs: 5000
  batches: 10
  pareto_load_fractions: [0.3]
"""


def write_small_scenario(directory) -> str:
    """A scenario small enough for the full price search to run in a test."""
    path = directory / "small.yaml"
    path.write_text(SMALL_SCENARIO)
    return str(path)
