"""Privacy bookkeeping for PPR-compressed mechanisms.

Privacy parameters are in nats. Communication bounds are in bits, and
``epsilon`` in :func:`comm_bound_ldp` is in bits as well.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

LOG2_3_56 = math.log2(3.56)


class VacuousGuaranteeError(ValueError):
    """The resulting delta would be >= 1, so the guarantee says nothing."""


@dataclass(frozen=True)
class PrivacyBudget:
    epsilon: float
    delta: float = 0.0

    def __post_init__(self):
        if not self.epsilon >= 0:
            raise ValueError(f"epsilon must be >= 0, got {self.epsilon}")
        if not 0.0 <= self.delta < 1.0:
            raise ValueError(f"delta must lie in [0, 1), got {self.delta}")


@dataclass(frozen=True)
class RenyiBudget:
    gamma: float
    epsilon: float

    def __post_init__(self):
        if not self.gamma > 1.0:
            raise ValueError(f"Renyi order must exceed 1, got {self.gamma}")
        if not self.epsilon >= 0:
            raise ValueError(f"epsilon must be >= 0, got {self.epsilon}")


@dataclass(frozen=True)
class TightDpKnobs:
    eps_tilde: float
    delta_tilde: float

    def __post_init__(self):
        if not 0.0 < self.eps_tilde <= 1.0:
            raise ValueError(f"eps_tilde must lie in (0, 1], got {self.eps_tilde}")
        if not 0.0 < self.delta_tilde <= 1.0 / 3.0:
            raise ValueError(f"delta_tilde must lie in (0, 1/3], got {self.delta_tilde}")


def _check_alpha(alpha: float):
    if not alpha > 1.0:
        raise ValueError(f"alpha must exceed 1, got {alpha}")


def _budget(epsilon: float, delta: float) -> PrivacyBudget:
    if delta >= 1.0:
        raise VacuousGuaranteeError(f"resulting delta {delta} >= 1 gives no guarantee")
    return PrivacyBudget(epsilon, delta)


def ppr_pure_dp(budget: PrivacyBudget, alpha: float) -> PrivacyBudget:
    """eps-DP mechanism compressed by PPR is 2*alpha*eps-DP."""
    _check_alpha(alpha)
    if budget.delta != 0:
        raise ValueError("pure DP transform needs delta = 0; use ppr_approx_dp")
    return PrivacyBudget(2.0 * alpha * budget.epsilon, 0.0)


def ppr_approx_dp(budget: PrivacyBudget, alpha: float) -> PrivacyBudget:
    """(eps, delta) becomes (2 alpha eps, 2 delta)."""
    _check_alpha(alpha)
    return _budget(2.0 * alpha * budget.epsilon, 2.0 * budget.delta)


def ppr_metric_dp(epsilon_metric: float, alpha: float) -> float:
    """eps * d_X privacy becomes 2 alpha eps * d_X privacy."""
    _check_alpha(alpha)
    if not epsilon_metric >= 0:
        raise ValueError("epsilon must be >= 0")
    return 2.0 * alpha * epsilon_metric


def tight_alpha_max(knobs: TightDpKnobs) -> float:
    """Largest alpha allowed by the tight (eps, delta) transform."""
    et, dt = knobs.eps_tilde, knobs.delta_tilde
    return math.exp(-4.2) * dt * et * et / -math.log(dt) + 1.0


def ppr_tight_dp(budget: PrivacyBudget, knobs: TightDpKnobs, alpha: float | None = None):
    """Returns ``(alpha_max, (alpha eps + eps~, 2 (delta + delta~)))``.

    ``alpha`` defaults to ``alpha_max`` and must not exceed it.
    """
    a_max = tight_alpha_max(knobs)
    a = a_max if alpha is None else alpha
    _check_alpha(a)
    if a > a_max:
        raise ValueError(f"alpha = {a} exceeds alpha_max = {a_max}")
    return a_max, _budget(a * budget.epsilon + knobs.eps_tilde,
                          2.0 * (budget.delta + knobs.delta_tilde))


def gaussian_sigma_for_dp(C: float, budget: PrivacyBudget) -> float:
    """Classical Gaussian-mechanism noise scale for sensitivity ``C``; valid for 0 < eps < 1."""
    eps, delta = budget.epsilon, budget.delta
    if not 0.0 < eps < 1.0:
        raise ValueError(f"classical Gaussian calibration needs 0 < epsilon < 1, got {eps}")
    if not 0.0 < delta < 1.0:
        raise ValueError(f"need 0 < delta < 1, got {delta}")
    if not C > 0:
        raise ValueError("C must be positive")
    return C * math.sqrt(2.0 * math.log(1.25 / delta)) / eps


def local_dp_of_gaussian_ppr(budget: PrivacyBudget, n: int, alpha: float) -> PrivacyBudget:
    """Per-client guarantee of the PPR-compressed Gaussian mechanism, valid for eps < 1/sqrt(n)."""
    _check_alpha(alpha)
    if n < 1:
        raise ValueError("n must be >= 1")
    root = math.sqrt(n)
    if not budget.epsilon < 1.0 / root:
        raise ValueError(
            f"local guarantee holds only for epsilon < 1/sqrt(n) = {1.0 / root:.6g}, "
            f"got {budget.epsilon}"
        )
    return _budget(2.0 * alpha * root * budget.epsilon, 2.0 * budget.delta)


def renyi_to_dp(renyi: RenyiBudget, delta: float) -> float:
    """(gamma, eps)-Renyi DP implies (eps', delta)-DP with this eps'."""
    if not 0.0 < delta < 1.0:
        raise ValueError(f"need 0 < delta < 1, got {delta}")
    g = renyi.gamma
    return renyi.epsilon + math.log(1.0 / (g * delta)) / (g - 1.0) + math.log1p(-1.0 / g)


def renyi_sigma_condition(C: float, gamma: float, epsilon: float) -> float:
    """Noise level ``sqrt(C gamma / (2 eps))`` required by the Renyi form of the Gaussian result."""
    if not (C > 0 and gamma > 0 and epsilon > 0):
        raise ValueError("C, gamma and epsilon must be positive")
    return math.sqrt(C * gamma / (2.0 * epsilon))


# Communication bounds (bits) -------------------------------------------------

def eta_alpha(alpha: float) -> float:
    """Bits of overhead ``log2(3.56) / min((alpha - 1) / 2, 1)``."""
    _check_alpha(alpha)
    return LOG2_3_56 / min((alpha - 1.0) / 2.0, 1.0)


def _from_ell(ell: float) -> float:
    if not ell > 0:
        raise ValueError(f"bound needs ell > 0, got {ell}")
    return ell + math.log2(ell + 1.0) + 2.0


def ell_ldp(epsilon_bits: float, alpha: float) -> float:
    if epsilon_bits < 0:
        raise ValueError("epsilon must be >= 0")
    return epsilon_bits + eta_alpha(alpha)


def ell_gaussian(C: float, n: int, d: int, sigma: float, alpha: float) -> float:
    if not (C > 0 and n >= 1 and d >= 1 and sigma > 0):
        raise ValueError("need C, sigma > 0 and n, d >= 1")
    return 0.5 * d * math.log2(C * C * n / (d * sigma * sigma) + 1.0) + eta_alpha(alpha)


def ell_laplace(C: float, d: int, epsilon: float, alpha: float) -> float:
    if not (C > 0 and d >= 1 and epsilon > 0):
        raise ValueError("need C, epsilon > 0 and d >= 1")
    main = 0.5 * d * math.log2(2.0 / math.e * (C * C * epsilon * epsilon / d + d + 1.0))
    gamma_term = (math.lgamma(d + 1.0) - math.lgamma(d / 2.0 + 1.0)) / math.log(2.0)
    return main - gamma_term + eta_alpha(alpha)


def comm_bound_ldp(epsilon_bits: float, alpha: float) -> float:
    return _from_ell(ell_ldp(epsilon_bits, alpha))


def comm_bound_gaussian(C: float, n: int, d: int, sigma: float, alpha: float) -> float:
    return _from_ell(ell_gaussian(C, n, d, sigma, alpha))


def comm_bound_gaussian_relaxed(budget: PrivacyBudget, n: int, d: int, alpha: float) -> float:
    """Bound with sigma at its calibrated minimum, in terms of (eps, delta) only."""
    eps, delta = budget.epsilon, budget.delta
    ell = 0.5 * d * math.log2(n * eps * eps / (2.0 * d * math.log(1.25 / delta)) + 1.0) + eta_alpha(alpha)
    return _from_ell(ell)


def comm_bound_laplace(C: float, d: int, epsilon: float, alpha: float) -> float:
    return _from_ell(ell_laplace(C, d, epsilon, alpha))
