"""Special functions and log-domain helpers.

Probability weights are carried as plain floats holding natural logs, with
``-inf`` standing for an exact zero.
"""

from __future__ import annotations

import math

import numpy as np
from scipy.special import logsumexp

_EPS = 1e-16
_TINY = 1e-300
_MAX_ITER = 10_000


def _gamma_series(beta: float, x: float) -> float:
    # e^-x x^beta sum_k x^k / (beta (beta+1) ... (beta+k))
    term = 1.0 / beta
    total = term
    a = beta
    for _ in range(_MAX_ITER):
        a += 1.0
        term *= x / a
        total += term
        if abs(term) < abs(total) * _EPS:
            break
    else:
        raise ArithmeticError("incomplete gamma series did not converge")
    return total * math.exp(-x + beta * math.log(x))


def _upper_gamma_cf(beta: float, x: float) -> float:
    # modified Lentz on the continued fraction for Gamma(beta, x)
    b = x + 1.0 - beta
    c = 1.0 / _TINY
    d = 1.0 / b
    h = d
    for i in range(1, _MAX_ITER):
        an = -i * (i - beta)
        b += 2.0
        d = an * d + b
        if abs(d) < _TINY:
            d = _TINY
        c = b + an / c
        if abs(c) < _TINY:
            c = _TINY
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _EPS:
            break
    else:
        raise ArithmeticError("incomplete gamma continued fraction did not converge")
    return math.exp(-x + beta * math.log(x)) * h


def lower_incomplete_gamma(beta: float, x: float) -> float:
    """Unregularised lower incomplete gamma, integral of e^-t t^(beta-1) over [0, x].

    Uses the power series for ``x <= beta + 1`` and ``Gamma(beta)`` minus the
    continued fraction for the upper tail otherwise.
    """
    if not 0.0 < beta <= 1.0:
        raise ValueError(f"beta must lie in (0, 1], got {beta}")
    if not x > 0.0:
        raise ValueError(f"x must be positive, got {x}")
    if x <= beta + 1.0:
        return _gamma_series(beta, x)
    return math.gamma(beta) - _upper_gamma_cf(beta, x)


def log_gamma(x: float) -> float:
    if not x > 0.0:
        raise ValueError(f"log_gamma needs x > 0, got {x}")
    return math.lgamma(x)


def log_sum_exp(values) -> float:
    """``log(sum(exp(values)))``; ``-inf`` when every entry is ``-inf``."""
    arr = np.asarray(values, dtype=float)
    if arr.size == 0:
        raise ValueError("log_sum_exp of an empty list")
    if np.all(arr == -np.inf):
        return -math.inf
    return float(logsumexp(arr))
