import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dpunion.histogram import (KNOWN_L1_INSTANCE, PolicyState, WeightedHistogram,
                               build_policy_histogram, build_weighted_histogram,
                               contractivity_probe, jacobian_spectral_norm, l1_descent_increments,
                               l1_descent_update, l1_jacobian_matrix, l2_descent_increments,
                               l2_descent_update, l2_diff, neighbour_ratio, solve_l1_lambda,
                               truncate_items, user_rng)

item_sets = st.lists(st.frozensets(st.integers(0, 6), min_size=0, max_size=5), min_size=0, max_size=12)


def power_iteration(mat, iters=5000):
    # Largest singular value from the dominant eigenvector of mat^T mat.
    ata = mat.T @ mat
    v = np.ones(ata.shape[0]) / math.sqrt(ata.shape[0])
    for _ in range(iters):
        w = ata @ v
        v = w / np.linalg.norm(w)
    return math.sqrt(v @ ata @ v)


def lambda_by_bisection(gaps):
    lo, hi = 0.0, max(gaps)
    for _ in range(200):
        mid = (lo + hi) / 2
        if sum(min(g, mid) ** 2 for g in gaps) < 1:
            lo = mid
        else:
            hi = mid
    return (lo + hi) / 2


# ----------------------------------------------------------- weighted scheme

def test_weighted_shared_singletons():
    h = build_weighted_histogram([{"a"}, {"a"}], bound=5)
    assert h["a"] == 2.0


def test_weighted_user_weights():
    h = build_weighted_histogram({"x": {"a", "b", "c", "d"}, "y": {"a"}}, bound=10)
    assert h["a"] == pytest.approx(1.5)
    assert h["b"] == pytest.approx(0.5)
    assert h.get("zzz") == 0.0


def test_weighted_truncation_keeps_bound():
    users = {"u": set(range(50))}
    h = build_weighted_histogram(users, bound=4, rng_seed=3)
    assert len(h) == 4
    assert all(v == pytest.approx(0.5) for v in h.values())
    assert sum(v * v for v in h.values()) == pytest.approx(1.0)


def test_weighted_empty_and_bad_bound():
    assert len(build_weighted_histogram([], bound=3)) == 0
    assert len(build_weighted_histogram([set()], bound=3)) == 0
    with pytest.raises(ValueError):
        build_weighted_histogram([{"a"}], bound=0)


def test_truncation_depends_only_on_user():
    items = set(range(40))
    a = truncate_items(items, 5, user_rng(9, "alice"))
    b = truncate_items(items, 5, user_rng(9, "alice"))
    c = truncate_items(items, 5, user_rng(9, "bob"))
    assert a == b
    assert a != c


@given(item_sets, st.integers(1, 4), st.randoms(use_true_random=False))
@settings(max_examples=100, deadline=None)
def test_weighted_order_independent(sets, bound, rnd):
    users = {f"u{i}": s for i, s in enumerate(sets)}
    keys = list(users)
    rnd.shuffle(keys)
    shuffled = {k: users[k] for k in keys}
    h1 = build_weighted_histogram(users, bound, rng_seed=1)
    h2 = build_weighted_histogram(shuffled, bound, rng_seed=1)
    assert set(h1) == set(h2)
    assert all(h1[k] == pytest.approx(h2[k], abs=1e-12) for k in h1)


@given(item_sets, st.frozensets(st.integers(0, 9), min_size=1, max_size=8), st.integers(1, 5))
@settings(max_examples=200, deadline=None)
def test_weighted_sensitivity(sets, extra, bound):
    base = {f"u{i}": s for i, s in enumerate(sets)}
    bigger = dict(base, extra=extra)
    diff = l2_diff(build_weighted_histogram(bigger, bound), build_weighted_histogram(base, bound))
    assert diff <= 1 + 1e-12


def test_weighted_histogram_is_read_only_mapping():
    h = WeightedHistogram({"a": 1.0, "b": 0.0})
    assert h.support() == frozenset({"a"})
    with pytest.raises(TypeError):
        h["c"] = 2.0  # type: ignore[index]


# --------------------------------------------------------------- l1 lambda

@given(st.lists(st.floats(0.01, 5.0), min_size=1, max_size=10))
@settings(max_examples=200, deadline=None)
def test_solve_l1_lambda(gaps):
    if math.sqrt(sum(g * g for g in gaps)) <= 1:
        with pytest.raises(ValueError):
            solve_l1_lambda(gaps)
        return
    lam = solve_l1_lambda(gaps)
    assert sum(min(g, lam) ** 2 for g in gaps) == pytest.approx(1.0, abs=1e-12)
    assert lam == pytest.approx(lambda_by_bisection(gaps), abs=1e-9)


def test_l1_increments_fill_small_gaps_first():
    hist = {"a": 4.9, "b": 0.0}
    incs = l1_descent_increments(hist, ["a", "b"], 5.0)
    assert incs["a"] == pytest.approx(0.1)
    assert incs["b"] == pytest.approx(math.sqrt(1 - 0.01))


def test_l1_skips_small_gap_vector():
    assert l1_descent_increments({"a": 4.5}, ["a"], 5.0) == {}


def test_l2_consumes_small_gap_vector():
    incs = l2_descent_increments({"a": 4.5}, ["a"], 5.0)
    assert incs == {"a": pytest.approx(0.5)}


@given(st.dictionaries(st.integers(0, 5), st.floats(0, 6)), st.frozensets(st.integers(0, 5), max_size=6),
       st.floats(0.5, 6))
@settings(max_examples=200, deadline=None)
def test_increments_bounded(hist, items, gamma):
    for fn in (l1_descent_increments, l2_descent_increments):
        incs = fn(hist, items, gamma)
        assert math.sqrt(sum(d * d for d in incs.values())) <= 1 + 1e-12
        assert all(d >= 0 for d in incs.values())
        assert all(hist.get(u, 0.0) + d <= gamma + 1e-12 for u, d in incs.items())


# ----------------------------------------------------------- policy updates

def test_policy_updates_are_pure_and_match_bulk_build():
    users = [("a", "b"), ("b", "c"), ("a",), ("a", "b", "c"), ("c",)] * 3
    for update, policy in ((l1_descent_update, "l1"), (l2_descent_update, "l2")):
        state = PolicyState(WeightedHistogram(), 2.0, 3)
        for items in users:
            new = update(state, items)
            assert new is state or new.histogram is not state.histogram
            state = new
        bulk = build_policy_histogram(users, policy, 2.0)
        assert l2_diff(state.histogram, bulk) < 1e-12


def test_policy_update_rejects_oversized_user():
    state = PolicyState(WeightedHistogram(), 2.0, 2)
    with pytest.raises(ValueError):
        l2_descent_update(state, ("a", "b", "c"))


def test_policy_state_validation():
    with pytest.raises(ValueError):
        PolicyState(WeightedHistogram(), 0.0, 2)
    with pytest.raises(ValueError):
        PolicyState(WeightedHistogram(), 1.0, 0)
    with pytest.raises(ValueError):
        build_policy_histogram([], "l3", 1.0)


@given(st.lists(st.frozensets(st.integers(0, 4), min_size=1, max_size=3), max_size=15),
       st.frozensets(st.integers(0, 4), min_size=1, max_size=3), st.floats(0.5, 6), st.data())
@settings(max_examples=300, deadline=None)
def test_l2_descent_contractive(shared, extra, gamma, data):
    pos = data.draw(st.integers(0, len(shared)))
    inst = {"gamma": gamma, "extra": tuple(extra), "shared": [tuple(s) for s in shared], "position": pos}
    assert neighbour_ratio("l2", inst) <= 1 + 1e-9


# ---------------------------------------------------------------- jacobian

def test_jacobian_critical_step():
    h1 = build_policy_histogram([KNOWN_L1_INSTANCE["extra"]] + KNOWN_L1_INSTANCE["shared"][:-1], "l1", 5.0)
    g_b = 5.0 - h1["b"]
    lam = math.sqrt(1 - g_b**2)
    assert jacobian_spectral_norm([g_b], lam, 1) == pytest.approx(1.016, abs=1e-3)


def test_jacobian_closed_form_vs_power_iteration():
    rng = np.random.default_rng(2)
    for _ in range(100):
        t, m = int(rng.integers(1, 5)), int(rng.integers(1, 5))
        gaps = rng.dirichlet(np.ones(t)) * rng.uniform(0.05, 0.95)
        gaps = np.sqrt(gaps)  # sum(gaps^2) < 1
        lam = math.sqrt((1 - gaps @ gaps) / m)
        closed = jacobian_spectral_norm(gaps, lam, m)
        oracle = power_iteration(l1_jacobian_matrix(gaps, lam, m))
        assert closed == pytest.approx(oracle, abs=1e-9)
        assert closed == pytest.approx(np.linalg.norm(l1_jacobian_matrix(gaps, lam, m), 2), abs=1e-9)


def test_jacobian_validation():
    with pytest.raises(ValueError):
        jacobian_spectral_norm([0.5], 0.5, 1)  # 0.25 + 0.25 != 1
    with pytest.raises(ValueError):
        jacobian_spectral_norm([0.5], 0.5, 0)


# --------------------------------------------------------------- probes

def test_probe_finds_l1_expansion():
    assert contractivity_probe("l1", trials=20, rng_seed=0) > 1.03


def test_probe_l2_stays_contractive():
    assert contractivity_probe("l2", trials=500, rng_seed=4) <= 1 + 1e-9


def test_probe_zero_trials():
    assert contractivity_probe("l2", trials=0) == 0.0
