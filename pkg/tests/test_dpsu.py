import math

import numpy as np
import pytest
import sympy

from dpunion._normal import norm_cdf
from dpunion.calibration import PrivacyParams, calibrate_sigma, rho1
from dpunion.data import gen_item_sets
from dpunion.dpsu import (NonPrivatePolicyError, l1_counterexample_trace, run_policy_gaussian,
                          spillover_surcharge_table)
from dpunion.histogram import KNOWN_L1_INSTANCE

DELTA = math.exp(-10)


def exact_l1_replay(users, gamma):
    """l1-descent in exact arithmetic (sympy), for the symbolic reconstruction."""
    gamma = sympy.Integer(gamma)
    hist = {u: sympy.Integer(0) for u in "abc"}
    for items in users:
        gaps = sorted(((gamma - hist[u], u) for u in items if hist[u] < gamma),
                      key=lambda gu: float(gu[0]))
        if sum(g**2 for g, _ in gaps) <= 1:
            continue
        consumed, lam = sympy.Integer(0), None
        for j, (g, _) in enumerate(gaps):
            cand = sympy.sqrt((1 - consumed) / (len(gaps) - j))
            if float(cand) <= float(g):
                lam = cand
                break
            consumed += g**2
        for g, u in gaps:
            hist[u] = hist[u] + (g if float(g) <= float(lam) else lam)
    return [hist[u] for u in "abc"]


def test_counterexample_numbers():
    trace = l1_counterexample_trace()
    assert trace.norm == pytest.approx(1.032, abs=1e-3)
    assert trace.diff == pytest.approx((0.577, 0.050, 0.854), abs=1e-3)
    assert trace.log[6]["h1"] == pytest.approx((1.992, 4.820, 3.406), abs=1e-3)
    assert len(trace.log) == 8
    assert trace.log[0]["h2"] == (0.0, 0.0, 0.0)


def test_counterexample_symbolic_reconstruction():
    inst = KNOWN_L1_INSTANCE
    h1 = exact_l1_replay([inst["extra"]] + inst["shared"], inst["gamma"])
    h2 = exact_l1_replay(inst["shared"], inst["gamma"])
    diff = [sympy.simplify(a - b) for a, b in zip(h1, h2)]
    # Exact expressions: integers and square roots only, no floating-point atoms.
    for d in diff:
        assert d.free_symbols == set()
        assert not d.atoms(sympy.Float)
    trace = l1_counterexample_trace()
    for exact, got in zip(diff, trace.diff):
        assert float(sympy.N(exact, 30)) == pytest.approx(got, abs=1e-12)
    norm = sympy.sqrt(sum(d**2 for d in diff))
    assert float(sympy.N(norm, 30)) == pytest.approx(trace.norm, abs=1e-12)
    # Item a is never saturated, so the gap there is exactly the extra user's 1/sqrt(3).
    assert sympy.sqrtdenest(sympy.simplify(diff[0] - 1 / sympy.sqrt(3))) == 0
    assert sympy.simplify(diff[1] - (5 - 7 / sympy.sqrt(2))) == 0


def test_policy_gaussian_empty_corpus():
    rel = run_policy_gaussian([], PrivacyParams(1.0, DELTA), 10)
    assert rel.released == frozenset()
    assert rel.support_size == 0


def test_policy_gaussian_refuses_l1():
    with pytest.raises(NonPrivatePolicyError, match="1.032"):
        run_policy_gaussian([{"a"}], PrivacyParams(1.0, DELTA), 10, policy="l1")
    rel = run_policy_gaussian([{"a"}], PrivacyParams(1.0, DELTA), 10, policy="l1", allow_nonprivate=True)
    assert rel.private is False
    with pytest.raises(ValueError):
        run_policy_gaussian([{"a"}], PrivacyParams(1.0, DELTA), 10, policy="lx")


def test_released_subset_of_union():
    sets = gen_item_sets(n_users=3000, universe=5000, rng_seed=3)
    rel = run_policy_gaussian(sets, PrivacyParams(5.0, DELTA), 10, rng_seed=3)
    union = set().union(*sets)
    assert rel.released <= union
    assert len(rel.released) > 0


def test_heavy_item_released_with_tail_probability():
    params = PrivacyParams(3.0, DELTA)
    sigma = calibrate_sigma(3.0, params.delta_spill)
    rho = rho1(sigma, params.delta_spill, 10)
    n_users = int(math.ceil(rho + 7 * sigma)) + 1
    gamma = rho + 20 * sigma
    users = [{"hot"} for _ in range(n_users)] + [{"x", "y"}]
    weight = float(n_users)  # singletons add weight 1 each while below gamma
    hits = sum("hot" in run_policy_gaussian(users, params, 10, gamma=gamma, rng_seed=s).released
               for s in range(1000))
    oracle = norm_cdf((weight - rho) / sigma)
    assert oracle > 0.9999
    assert hits / 1000 >= 0.999


def test_zipf_output_size_directional():
    params = PrivacyParams(3.0, DELTA)
    sizes = [len(run_policy_gaussian(gen_item_sets(rng_seed=s), params, 10, rng_seed=s).released)
             for s in range(5)]
    for size in sizes:
        assert abs(size - 1091) <= 0.15 * 1091, sizes


def test_surcharge_table_rows():
    rows = spillover_surcharge_table()
    assert len(rows) == 8
    first = rows[0]
    assert (first.rho_pg, first.rho_zero, first.surcharge) == pytest.approx((16.56, 16.25, 0.32), abs=0.01)
    assert first.relative == pytest.approx(0.019, abs=0.001)
    last = rows[6]
    assert (last.epsilon, last.delta0) == (8.0, 10)
    assert (last.rho_pg, last.rho_zero, last.surcharge) == pytest.approx((3.37, 2.66, 0.71), abs=0.01)
    assert last.relative == pytest.approx(0.210, abs=0.001)
    assert all(r.surcharge >= 0 for r in rows)
    with pytest.raises(ValueError):
        spillover_surcharge_table(delta=1.0)


def test_runs_are_seed_deterministic():
    sets = gen_item_sets(n_users=2000, universe=3000, rng_seed=1)
    a = run_policy_gaussian(sets, PrivacyParams(4.0, DELTA), 10, rng_seed=8)
    b = run_policy_gaussian(sets, PrivacyParams(4.0, DELTA), 10, rng_seed=8)
    assert a == b
    assert np.isfinite(a.gamma)
