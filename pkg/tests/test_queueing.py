import math

import numpy as np
import pytest

from slapricing.errors import DomainError, InfeasibleWaitError
from slapricing.queueing import (
    ExponentialQueueSpec,
    ParetoQueueSpec,
    exp_lambda_max,
    exp_miss_fraction,
    exp_utilization,
    match_pareto_waits,
    pareto_expected_wait,
    pareto_lambda_max,
    pareto_rate_for_utilization,
    pareto_stability_bound,
)
from slapricing.special import upper_incomplete_gamma

EXP = ExponentialQueueSpec()
PARETO = ParetoQueueSpec()


@pytest.mark.parametrize(
    "phi, rho",
    [(0.0, 0.05263), (1.0, 0.1362), (2.0, 0.2863), (4.0, 0.5883), (8.0, 0.8534)],
)
def test_exponential_max_utilization(phi, rho):
    lam = EXP.lambda_max(phi)
    assert EXP.utilization(lam) == pytest.approx(rho, abs=5e-4)


@pytest.mark.parametrize("phi", [0.0, 0.5, 1.0, 2.0, 4.0, 8.0, 30.0])
def test_exponential_cap_hits_miss_target(phi):
    lam = EXP.lambda_max(phi)
    assert EXP.miss_fraction(lam, phi) == pytest.approx(0.05, rel=1e-8)


def test_no_wait_allowed_is_closed_form():
    # at φ = 0 the miss fraction is ρ/(1+ρ)
    assert EXP.lambda_max(0.0) == pytest.approx(0.05 / 0.95, rel=1e-9)


def test_module_functions_agree_with_model():
    assert exp_lambda_max(EXP, 2.0) == EXP.lambda_max(2.0)
    assert exp_utilization(0.3, 2.0) == pytest.approx(0.15)
    with pytest.raises(DomainError):
        exp_utilization(-0.1, 1.0)


def test_cap_scales_with_service_rate():
    fast = ExponentialQueueSpec(mu=4.0)
    # α_d depends on μ and φ only through μφ
    assert fast.lambda_max(1.0) == pytest.approx(4.0 * EXP.lambda_max(4.0), rel=1e-9)


def test_cap_increases_with_wait():
    caps = [EXP.lambda_max(phi) for phi in (0.0, 0.5, 1.0, 2.0, 4.0, 8.0, 16.0)]
    assert all(a < b for a, b in zip(caps, caps[1:]))


def test_miss_fraction_is_continuous_at_critical_load():
    # ρ = 1 gives 1 / (2 + μφ)
    at_one = exp_miss_fraction(1.0, 1.0, 8.0)
    assert at_one == pytest.approx(0.1, rel=1e-12)
    for delta in (1e-9, 1e-7, 5e-7, 2e-6, 1e-5):
        assert exp_miss_fraction(1.0 + delta, 1.0, 8.0) == pytest.approx(at_one, abs=1e-5)
        assert exp_miss_fraction(1.0 - delta, 1.0, 8.0) == pytest.approx(at_one, abs=1e-5)


def test_miss_fraction_overload_does_not_overflow():
    value = exp_miss_fraction(3.0, 1.0, 1000.0)
    assert math.isfinite(value)
    assert value == pytest.approx(2.0 / 3.0, rel=1e-9)


def test_exponential_domain_errors():
    with pytest.raises(DomainError):
        EXP.lambda_max(-1.0)
    with pytest.raises(DomainError):
        exp_miss_fraction(0.0, 1.0, 1.0)
    with pytest.raises(DomainError):
        ExponentialQueueSpec(mu=0.0)
    with pytest.raises(DomainError):
        ExponentialQueueSpec(miss_target=1.0)


def test_pareto_anchor_point():
    lam = PARETO.lambda_max(0.05)
    assert lam == pytest.approx(0.011, abs=5e-4)
    assert PARETO.utilization(lam) == pytest.approx(0.003168, abs=1e-4)


@pytest.mark.parametrize("phi", [0.05, 0.2, 1.0, 4.0, 8.0])
def test_pareto_cap_round_trip(phi):
    lam = pareto_lambda_max(phi, PARETO)
    assert 0.0 < lam < pareto_stability_bound(PARETO)
    assert pareto_expected_wait(lam, PARETO) == pytest.approx(phi, rel=1e-9)


@pytest.mark.parametrize("phi", [10.0, 15.0, 18.0])
def test_pareto_cap_is_float_exact_near_stability_bound(phi):
    # a few ulps of λ move the wait here by more than 1e-9, so check the neighbours instead
    bound = pareto_stability_bound(PARETO)
    top = math.nextafter(bound, 0.0)
    lam = pareto_lambda_max(phi, PARETO)
    below = math.nextafter(math.nextafter(lam, 0.0), 0.0)
    above = min(math.nextafter(math.nextafter(lam, bound), bound), top)
    assert pareto_expected_wait(below, PARETO) <= phi <= pareto_expected_wait(above, PARETO)


@pytest.mark.parametrize("phi", [50.0, 1e6])
def test_pareto_cap_saturates_below_stability_bound(phi):
    bound = pareto_stability_bound(PARETO)
    top = math.nextafter(bound, 0.0)
    assert pareto_expected_wait(top, PARETO) < phi
    assert pareto_lambda_max(phi, PARETO) == top


def test_pareto_wait_is_finite_next_to_stability_bound():
    bound = pareto_stability_bound(PARETO)
    waits = [pareto_expected_wait(bound * (1.0 - g), PARETO) for g in (1e-4, 1e-8, 1e-12)]
    assert all(math.isfinite(w) for w in waits)
    assert waits[0] < waits[1] < waits[2]
    assert pareto_expected_wait(math.nextafter(bound, 0.0), PARETO) > waits[2]


@pytest.mark.parametrize("fraction", [0.2, 0.5, 0.8])
def test_pareto_wait_matches_direct_formula(fraction):
    # away from λ → 0 the unexpanded expression has no cancellation
    alpha, tau = PARETO.shape_alpha, PARETO.min_runtime
    lam = fraction * pareto_stability_bound(PARETO)
    z = lam * tau
    direct = math.log(alpha * z**alpha * upper_incomplete_gamma(-alpha, z) / (1.0 - alpha * tau * lam / (alpha - 1.0))) / lam
    assert pareto_expected_wait(lam, PARETO) == pytest.approx(direct, rel=1e-9)


def test_pareto_wait_and_utilization_increase_with_rate():
    bound = pareto_stability_bound(PARETO)
    rates = [bound * f for f in (1e-6, 1e-4, 1e-2, 0.1, 0.5, 0.9, 0.999)]
    waits = [PARETO.expected_wait(lam) for lam in rates]
    utils = [PARETO.utilization(lam) for lam in rates]
    assert all(a < b for a, b in zip(waits, waits[1:]))
    assert all(a < b for a, b in zip(utils, utils[1:]))
    assert all(0.0 < u < 1.0 for u in utils)


def test_pareto_utilization_array_matches_scalar():
    bound = pareto_stability_bound(PARETO)
    lam = np.array([0.0, bound * 1e-3, bound * 0.3, bound * 0.95])
    values = PARETO.utilization_array(lam)
    assert values[0] == 0.0
    for li, vi in zip(lam[1:], values[1:]):
        assert vi == pytest.approx(PARETO.utilization(float(li)), rel=1e-12)


def test_pareto_infeasible_wait():
    with pytest.raises(InfeasibleWaitError) as info:
        pareto_lambda_max(1e-9, PARETO)
    assert info.value.phi == 1e-9
    assert info.value.attainable > 1e-9


def test_pareto_domain_errors():
    bound = pareto_stability_bound(PARETO)
    with pytest.raises(DomainError):
        PARETO.lambda_max(0.0)
    with pytest.raises(DomainError):
        PARETO.utilization(bound)
    with pytest.raises(DomainError):
        PARETO.expected_wait(-0.1)
    with pytest.raises(DomainError):
        ParetoQueueSpec(shape_alpha=1.0)


def test_pareto_rate_for_utilization():
    lam = pareto_rate_for_utilization(0.01, PARETO)
    assert PARETO.utilization(lam) == pytest.approx(0.01, rel=1e-8)


def test_matched_pareto_waits_mirror_exponential_ratios():
    exp_waits = (0.0, 1.0, 2.0, 4.0, 8.0)
    waits = match_pareto_waits(EXP, exp_waits, PARETO, first_wait=0.05)
    assert waits[0] == 0.05
    assert all(a < b for a, b in zip(waits, waits[1:]))

    exp_peaks = [EXP.utilization(EXP.lambda_max(phi)) for phi in exp_waits]
    pareto_peaks = [PARETO.utilization(PARETO.lambda_max(phi)) for phi in waits]
    for e, p in zip(exp_peaks, pareto_peaks):
        assert p / pareto_peaks[0] == pytest.approx(e / exp_peaks[0], rel=1e-6)


def test_samplers_have_the_right_mean():
    rng = np.random.default_rng(7)
    assert EXP.sample_service(rng, 200_000).mean() == pytest.approx(1.0, rel=0.01)
    heavy = ParetoQueueSpec(shape_alpha=3.0, min_runtime=1.0)
    draws = heavy.sample_service(rng, 200_000)
    assert draws.min() >= 1.0
    assert draws.mean() == pytest.approx(heavy.mean_service, rel=0.01)
