"""Gaussian-mechanism calibration and the thresholds built on top of it.

Everything here is a pure function of its arguments. Noise scales are in
absolute units; the analytic Gaussian condition depends only on
``sigma / sensitivity``, which the bisection exploits.
"""

from __future__ import annotations

import dataclasses
import math

import numpy as np

from dpunion._normal import log_norm_cdf, norm_isf, one_minus_root

_BRACKET = (1e-6, 1e6)
_MAX_ITER = 200
_REL_TOL = 1e-12


class CalibrationError(ValueError):
    """Raised when no noise scale in the search bracket meets the target."""


@dataclasses.dataclass(frozen=True)
class PrivacyParams:
    """Privacy contract of one run.

    ``delta_mech`` and ``delta_spill`` default to an even split of ``delta``.
    """

    epsilon: float
    delta: float
    sensitivity: float = 1.0
    levels: int = 1
    delta_mech: float | None = None
    delta_spill: float | None = None

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ValueError(f"epsilon must be positive, got {self.epsilon}")
        if not 0 < self.delta < 1:
            raise ValueError(f"delta must lie in (0, 1), got {self.delta}")
        if not self.sensitivity > 0:
            raise ValueError(f"sensitivity must be positive, got {self.sensitivity}")
        if self.levels < 1:
            raise ValueError(f"levels must be >= 1, got {self.levels}")
        mech, spill = self.delta_mech, self.delta_spill
        if mech is None and spill is None:
            mech = spill = self.delta / 2
        elif mech is None:
            mech = self.delta - spill
        elif spill is None:
            spill = self.delta - mech
        if mech <= 0 or spill < 0 or not math.isclose(mech + spill, self.delta, rel_tol=1e-12):
            raise ValueError(
                f"delta split ({mech}, {spill}) must be positive and sum to {self.delta}")
        object.__setattr__(self, "delta_mech", mech)
        object.__setattr__(self, "delta_spill", spill)


@dataclasses.dataclass(frozen=True)
class CalibrationResult:
    sigma_star: float
    sigma_per_level: float


def bw_delta(sigma, epsilon, sensitivity=1.0):
    """Smallest delta for which Gaussian noise ``sigma`` is (epsilon, delta)-DP.

    This is the exact analytic Gaussian characterisation. The difference of
    the two CDF terms is taken in log space, so it does not cancel when both
    terms are tiny (large sigma).
    """
    if not sigma > 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    a = sensitivity / (2 * sigma)
    b = epsilon * sigma / sensitivity
    log_first = log_norm_cdf(a - b)
    log_second = epsilon + log_norm_cdf(-a - b)
    if log_second >= log_first:
        return 0.0
    return float(-math.exp(log_first) * math.expm1(log_second - log_first))


def calibrate_sigma(epsilon, delta_mech, sensitivity=1.0):
    """Minimal sigma with ``bw_delta(sigma, epsilon, sensitivity) <= delta_mech``.

    Geometric bisection over ``[1e-6, 1e6] * sensitivity``. The returned value
    is always the feasible end of the final bracket.
    """
    if not epsilon > 0 or not sensitivity > 0:
        raise ValueError("epsilon and sensitivity must be positive")
    if not 0 < delta_mech < 1:
        raise CalibrationError(f"delta_mech must lie in (0, 1), got {delta_mech}")
    lo, hi = _BRACKET
    if bw_delta(hi, epsilon) > delta_mech:
        raise CalibrationError(
            f"no sigma <= {hi} achieves delta={delta_mech} at epsilon={epsilon}")
    if bw_delta(lo, epsilon) <= delta_mech:
        raise CalibrationError(
            f"degenerate calibration: sigma={lo} already meets delta={delta_mech}")
    for _ in range(_MAX_ITER):
        if hi - lo <= _REL_TOL * hi:
            break
        mid = math.sqrt(lo * hi)
        if bw_delta(mid, epsilon) <= delta_mech:
            hi = mid
        else:
            lo = mid
    return hi * sensitivity


def compose_sigma(sigma_star, levels):
    """Per-level noise so that T equal Gaussian releases compose to ``sigma_star``."""
    if levels < 1:
        raise ValueError(f"levels must be >= 1, got {levels}")
    return sigma_star * math.sqrt(levels)


def calibrate(params: PrivacyParams) -> CalibrationResult:
    sigma_star = calibrate_sigma(params.epsilon, params.delta_mech, params.sensitivity)
    return CalibrationResult(sigma_star, compose_sigma(sigma_star, params.levels))


def _spill_terms(sigma, delta_spill, max_items):
    t = np.arange(1, max_items + 1, dtype=float)
    return 1 / np.sqrt(t) + sigma * norm_isf(one_minus_root(delta_spill, t))


def rho1(sigma1, delta_spill, delta1_max):
    """Level-1 spillover threshold.

    A removed user holding ``t <= delta1_max`` unique items gives each of them
    weight ``1/sqrt(t)``. The threshold is the largest ``1/sqrt(t) + sigma1 * z_t``
    with ``z_t`` the ``(1 - delta_spill)**(1/t)`` normal quantile.
    """
    if int(delta1_max) != delta1_max or delta1_max < 1:
        raise ValueError(f"delta1_max must be a positive integer, got {delta1_max}")
    return float(np.max(_spill_terms(sigma1, delta_spill, int(delta1_max))))


def rho_kgram_base(sigma_k, eta, prev_release_size, candidate_size):
    """Uniform threshold bounding expected spurious releases at level k >= 2."""
    if candidate_size < 1:
        raise ValueError("candidate_size must be >= 1")
    if not eta > 0:
        raise ValueError("eta must be positive")
    q = eta * min(prev_release_size / candidate_size, 1.0)
    if q >= 1:
        raise ValueError(f"eta * min(|S|/|V|, 1) = {q} leaves no valid quantile")
    if q == 0:
        return math.inf
    return float(sigma_k * norm_isf(q))


def rho_policy_gaussian(epsilon, delta, delta0):
    """Returns ``(rho_pg, rho_zero)`` for Policy Gaussian with an even delta split.

    ``rho_zero`` is the same spillover calculation with the fresh items
    carrying no histogram mass, at ``t = delta0``.
    """
    if int(delta0) != delta0 or delta0 < 1:
        raise ValueError(f"delta0 must be a positive integer, got {delta0}")
    sigma = calibrate_sigma(epsilon, delta / 2, 1.0)
    rho_pg = rho1(sigma, delta / 2, delta0)
    rho_zero = float(sigma * norm_isf(one_minus_root(delta / 2, delta0)))
    return rho_pg, rho_zero
