import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dpunion._normal import norm_cdf, norm_isf, norm_sf, one_minus_root
from dpunion.calibration import (CalibrationError, PrivacyParams, bw_delta, calibrate,
                                 calibrate_sigma, compose_sigma, rho1, rho_kgram_base,
                                 rho_policy_gaussian)

mpmath.mp.dps = 50
DELTA = math.exp(-10)


def mp_cdf(x):
    return mpmath.ncdf(mpmath.mpf(x))


def mp_isf(q):
    # Phi^{-1}(1 - q) by root finding on the upper tail, at 50 digits.
    q = mpmath.mpf(q)
    return mpmath.findroot(lambda x: mpmath.ncdf(-x) - q, -mpmath.sqrt(2) * mpmath.erfinv(2 * q - 1))


def mp_bw_delta(sigma, eps, sens=1.0):
    sigma, eps, sens = mpmath.mpf(sigma), mpmath.mpf(eps), mpmath.mpf(sens)
    a, b = sens / (2 * sigma), eps * sigma / sens
    return mpmath.ncdf(a - b) - mpmath.exp(eps) * mpmath.ncdf(-a - b)


# ---------------------------------------------------------------- normal tails

@pytest.mark.parametrize("q", [0.5, 0.1, 1e-3, 1e-6, 4.13e-5, 1e-10, DELTA / 2, 1e-15, 1e-30])
def test_norm_isf_matches_mpmath(q):
    assert norm_isf(q) == pytest.approx(float(mp_isf(q)), rel=1e-12)


@pytest.mark.parametrize("x", [-3.0, 0.0, 1.5, 5.0, 8.0, 12.0])
def test_norm_sf_matches_mpmath_in_tail(x):
    assert norm_sf(x) == pytest.approx(float(mp_cdf(-x)), rel=1e-12)
    assert norm_cdf(-x) == pytest.approx(float(mp_cdf(-x)), rel=1e-12)


@pytest.mark.parametrize("delta,t", [(DELTA / 2, 1), (DELTA / 2, 10), (1e-12, 100), (0.3, 7)])
def test_one_minus_root_avoids_cancellation(delta, t):
    exact = 1 - (1 - mpmath.mpf(delta)) ** (mpmath.mpf(1) / t)
    assert one_minus_root(delta, t) == pytest.approx(float(exact), rel=1e-13)


# ------------------------------------------------------------------- bw_delta

def test_bw_delta_vanishes_for_huge_sigma():
    assert bw_delta(1e6, 1.0, 1.0) < 1e-30


def test_bw_delta_rejects_nonpositive_sigma():
    with pytest.raises(ValueError):
        bw_delta(0.0, 1.0)
    with pytest.raises(ValueError):
        bw_delta(-1.0, 1.0)


def test_bw_delta_strictly_decreasing_on_grid():
    assert bw_delta(1.0, 1.0) > bw_delta(2.0, 1.0)
    # Below sigma ~ 0.1 the value is within 1e-16 of 1 and rounds to 1.0.
    grid = np.geomspace(0.2, 20.0, 100)
    vals = [bw_delta(s, 1.0) for s in grid]
    assert all(a > b for a, b in zip(vals, vals[1:]))


@pytest.mark.parametrize("sigma,eps", [(0.5, 0.5), (1.0, 1.0), (3.5, 1.0), (1.33, 3.0), (0.9, 8.0)])
def test_bw_delta_matches_mpmath(sigma, eps):
    assert bw_delta(sigma, eps) == pytest.approx(float(mp_bw_delta(sigma, eps)), rel=1e-9)


# ------------------------------------------------------------ calibrate_sigma

def test_calibrate_hits_target_delta():
    sigma = calibrate_sigma(1.0, DELTA / 2, 1.0)
    assert bw_delta(sigma, 1.0) == pytest.approx(DELTA / 2, rel=1e-6)


def test_calibrate_minimality_random_pairs():
    rng = np.random.default_rng(11)
    for _ in range(50):
        eps = float(rng.uniform(0.1, 10.0))
        delta = float(np.exp(rng.uniform(-25, -2)))
        sigma = calibrate_sigma(eps, delta)
        assert bw_delta(sigma, eps) <= delta
        assert bw_delta(0.999 * sigma, eps) > delta


def test_calibrate_sensitivity_scaling():
    s1 = calibrate_sigma(2.0, 1e-6, 1.0)
    assert calibrate_sigma(2.0, 1e-6, 2.0) == pytest.approx(2 * s1, rel=1e-11)


def test_calibrate_zero_mass_examples():
    for eps, d0, expected in [(1.0, 10, 16.25), (8.0, 100, 2.93)]:
        sigma = calibrate_sigma(eps, DELTA / 2, 1.0)
        z = float(mp_isf(1 - (1 - mpmath.mpf(DELTA) / 2) ** (mpmath.mpf(1) / d0)))
        assert sigma * z == pytest.approx(expected, abs=0.01)


@pytest.mark.parametrize("delta", [0.0, 1.0, 1.5, -1e-3])
def test_calibrate_bad_delta(delta):
    with pytest.raises(CalibrationError):
        calibrate_sigma(1.0, delta)


def test_calibrate_bracket_exhaustion():
    # epsilon so small that even sigma = 1e6 cannot reach delta.
    with pytest.raises(CalibrationError):
        calibrate_sigma(1e-9, 1e-300)


def test_compose_sigma():
    assert compose_sigma(2.0, 1) == 2.0
    assert compose_sigma(2.0, 4) == 4.0
    s = calibrate_sigma(1.0, DELTA / 2)
    assert sum(1 / compose_sigma(s, 6) ** 2 for _ in range(6)) == pytest.approx(1 / s**2, rel=1e-12)
    with pytest.raises(ValueError):
        compose_sigma(1.0, 0)


def test_privacy_params_split():
    p = PrivacyParams(1.0, 1e-5)
    assert p.delta_mech == p.delta_spill == 5e-6
    p = PrivacyParams(1.0, 1e-5, delta_spill=2e-6)
    assert p.delta_mech == pytest.approx(8e-6)
    with pytest.raises(ValueError):
        PrivacyParams(1.0, 1e-5, delta_mech=1e-5, delta_spill=1e-5)
    for bad in [dict(epsilon=0, delta=1e-5), dict(epsilon=1, delta=1.0),
                dict(epsilon=1, delta=1e-5, sensitivity=0), dict(epsilon=1, delta=1e-5, levels=0)]:
        with pytest.raises(ValueError):
            PrivacyParams(**bad)
    res = calibrate(PrivacyParams(1.0, DELTA, levels=4))
    assert res.sigma_per_level == pytest.approx(2 * res.sigma_star)


# ------------------------------------------------------------------------ rho1

def rho1_mp(sigma, delta_spill, dmax):
    best = None
    for t in range(1, dmax + 1):
        z = mp_isf(1 - (1 - mpmath.mpf(delta_spill)) ** (mpmath.mpf(1) / t))
        v = 1 / mpmath.sqrt(t) + sigma * z
        best = v if best is None or v > best else best
    return float(best)


def test_rho1_single_term():
    sigma = 3.0
    assert rho1(sigma, 1e-5, 1) == pytest.approx(1 + sigma * float(mp_isf(1e-5)), rel=1e-12)


@pytest.mark.parametrize("sigma,delta,dmax", [(3.54, DELTA / 2, 10), (0.4, 1e-3, 25), (1.33, 1e-8, 7)])
def test_rho1_matches_high_precision_loop(sigma, delta, dmax):
    assert rho1(sigma, delta, dmax) == pytest.approx(rho1_mp(sigma, delta, dmax), rel=1e-11)


def test_rho1_brute_force_randomised():
    from scipy.stats import norm
    rng = np.random.default_rng(5)
    for _ in range(20):
        sigma = float(rng.uniform(0.05, 6))
        delta = float(10 ** rng.uniform(-6, -1))
        dmax = int(rng.integers(1, 1001))
        loop = max(1 / math.sqrt(t) + sigma * norm.ppf((1 - delta) ** (1 / t))
                   for t in range(1, dmax + 1))
        assert rho1(sigma, delta, dmax) == pytest.approx(loop, rel=1e-6)


def test_rho1_table_value():
    sigma = calibrate_sigma(1.0, DELTA / 2)
    assert rho1(sigma, DELTA / 2, 10) == pytest.approx(16.56, abs=0.01)


def test_rho1_rejects_bad_bound():
    with pytest.raises(ValueError):
        rho1(1.0, 1e-5, 0)


# -------------------------------------------------------------- rho_kgram_base

def test_rho_kgram_examples():
    assert rho_kgram_base(2.0, 0.5, 10, 10) == pytest.approx(0.0, abs=1e-15)
    assert rho_kgram_base(1.0, 0.01, 100, 10**6) == pytest.approx(float(mp_isf(1e-6)), abs=1e-3)
    assert rho_kgram_base(1.0, 0.01, 100, 10**6) == pytest.approx(4.7534, abs=1e-3)


@given(st.integers(1, 1000), st.integers(1, 10**6), st.integers(1, 10**6))
@settings(max_examples=200, deadline=None)
def test_rho_kgram_monotone_in_candidates(prev, a, b):
    small, large = sorted((a, b))
    if prev >= small:
        return
    assert rho_kgram_base(1.7, 0.01, prev, small) <= rho_kgram_base(1.7, 0.01, prev, large)


def test_rho_kgram_errors():
    with pytest.raises(ValueError):
        rho_kgram_base(1.0, 1.0, 10, 10)
    with pytest.raises(ValueError):
        rho_kgram_base(1.0, 0.1, 10, 0)
    with pytest.raises(ValueError):
        rho_kgram_base(1.0, 0.0, 10, 10)


# ------------------------------------------------------------- policy gaussian

TABLE = [  # (eps, delta0, rho_pg, rho_zero, surcharge)
    (1.0, 10, 16.56, 16.25, 0.32), (1.0, 100, 17.97, 17.87, 0.10),
    (3.0, 10, 6.44, 6.11, 0.32), (3.0, 100, 6.82, 6.72, 0.10),
    (5.0, 10, 4.50, 3.94, 0.56), (5.0, 100, 4.50, 4.33, 0.17),
    (8.0, 10, 3.37, 2.66, 0.71), (8.0, 100, 3.37, 2.93, 0.44),
]


@pytest.mark.parametrize("eps,d0,pg,zero,sur", TABLE)
def test_rho_policy_gaussian_table(eps, d0, pg, zero, sur):
    got_pg, got_zero = rho_policy_gaussian(eps, DELTA, d0)
    assert got_pg == pytest.approx(pg, abs=0.01)
    assert got_zero == pytest.approx(zero, abs=0.01)
    assert got_pg - got_zero == pytest.approx(sur, abs=0.01)


@given(st.floats(0.2, 10), st.floats(-20, -2), st.integers(1, 300))
@settings(max_examples=60, deadline=None)
def test_surcharge_nonnegative(eps, log_delta, d0):
    pg, zero = rho_policy_gaussian(eps, math.exp(log_delta), d0)
    assert pg >= zero


def test_rho_policy_gaussian_bad_delta0():
    with pytest.raises(ValueError):
        rho_policy_gaussian(1.0, DELTA, 0)
