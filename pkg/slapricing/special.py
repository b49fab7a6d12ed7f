"""
Upper incomplete gamma function for real (possibly negative) order.

Positive orders are delegated to scipy's regularized function. Negative
orders are reached either by the Legendre continued fraction (evaluated
with the modified Lentz method, as in Numerical Recipes' ``gcf``) when
``z > 1``, or by downward recurrence from an order in (0, 1] when ``z`` is
small and the recurrence is stable.
"""
from __future__ import annotations

import math
import sys

import numpy as np
from scipy import special

from .errors import ConvergenceError, require

_FPMIN = sys.float_info.min / sys.float_info.epsilon
_CF_ACCURACY = 1.0e-15
_CF_MAX_ITERATION = 10_000


def upper_incomplete_gamma(s: float, z: float) -> float:
    """Return Γ(s, z) = ∫_z^∞ x^(s-1) e^(-x) dx for real s and z > 0."""
    require(z > 0.0, f"incomplete gamma needs z > 0, got {z}")
    s = float(s)
    z = float(z)

    if s > 0.0:
        return float(special.gammaincc(s, z) * special.gamma(s))
    if z > 1.0:
        return _continued_fraction(s, z)
    return float(_downward_recurrence(s, z))


def upper_incomplete_gamma_array(s: float, z: np.ndarray) -> np.ndarray:
    """Γ(s, z) for one order and an array of z > 0."""
    z = np.asarray(z, dtype=float)
    require(bool(np.all(z > 0.0)), "incomplete gamma needs z > 0")
    s = float(s)

    if s > 0.0:
        return special.gammaincc(s, z) * special.gamma(s)
    out = np.empty_like(z)
    small = z <= 1.0
    out[small] = _downward_recurrence(s, z[small])
    out[~small] = [_continued_fraction(s, v) for v in z[~small]]
    return out


def _continued_fraction(s: float, z: float) -> float:
    b = z + 1.0 - s
    c = 1.0 / _FPMIN
    d = 1.0 / b
    h = d
    for i in range(1, _CF_MAX_ITERATION + 1):
        an = -i * (i - s)
        b += 2.0
        d = an * d + b
        if abs(d) < _FPMIN:
            d = _FPMIN
        c = b + an / c
        if abs(c) < _FPMIN:
            c = _FPMIN
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _CF_ACCURACY:
            return math.exp(-z + s * math.log(z)) * h

    raise ConvergenceError(f"continued fraction for Γ({s}, {z}) did not converge")


def _downward_recurrence(s: float, z):
    # Γ(t, z) = (Γ(t + 1, z) - z^t e^(-z)) / t; z may be a float or an array
    if s.is_integer():
        base = 0.0
        value = special.exp1(z)
        steps = int(-s)
    else:
        steps = math.floor(-s) + 1
        base = s + steps
        value = special.gammaincc(base, z) * special.gamma(base)

    log_z = np.log(z)
    for j in range(1, steps + 1):
        t = base - j
        value = (value - np.exp(t * log_z - z)) / t
    return value
