"""Policy Gaussian set union, the l1-descent counterexample, and the spillover table."""

from __future__ import annotations

import dataclasses
import math

import numpy as np

from dpunion._normal import norm_isf, one_minus_root
from dpunion.calibration import PrivacyParams, calibrate_sigma, rho1, rho_policy_gaussian
from dpunion.histogram import (KNOWN_L1_INSTANCE, PolicyState, WeightedHistogram,
                               build_policy_histogram, l1_descent_update, l2_diff, truncate_items,
                               user_rng)


class NonPrivatePolicyError(ValueError):
    pass


@dataclasses.dataclass(frozen=True)
class PolicyGaussianRelease:
    released: frozenset
    sigma: float
    rho: float
    gamma: float
    support_size: int
    private: bool
    benchmark_size: int = 0  # items above rho_zero under the same noise; not a private output


def run_policy_gaussian(corpus_items, params: PrivacyParams, delta0, policy="l2", gamma=None,
                        rng_seed=0, allow_nonprivate=False) -> PolicyGaussianRelease:
    """Set union via a contractive policy histogram, Gaussian noise, and the spillover threshold.

    Users are truncated to ``delta0`` items and visited in a seeded random
    order. Noise ``sigma = sigma*(epsilon, delta_mech, 1)`` is added to
    support entries only. An item is released when its noisy weight exceeds
    ``rho = max_t 1/sqrt(t) + sigma * z_t``. ``gamma`` defaults to
    ``rho + 3 * sigma``.

    ``policy="l1"`` is refused because the l1-descent policy can push
    neighbouring histograms more than 1 apart (see :func:`l1_counterexample_trace`).
    ``allow_nonprivate=True`` runs it anyway and marks the result non-private.
    """
    if policy not in ("l1", "l2"):
        raise ValueError(f"unknown policy {policy!r}")
    if policy == "l1" and not allow_nonprivate:
        raise NonPrivatePolicyError(
            "the l1-descent policy is not l2-contractive (a 3-item, 8-user instance reaches "
            "sensitivity 1.032), so Gaussian calibration at sensitivity 1 is invalid; "
            "pass allow_nonprivate=True for experiments")
    sigma = calibrate_sigma(params.epsilon, params.delta_mech, 1.0)
    rho = rho1(sigma, params.delta_spill, delta0)
    gamma = rho + 3 * sigma if gamma is None else gamma

    items = corpus_items.items() if hasattr(corpus_items, "items") else enumerate(corpus_items)
    users = [truncate_items(its, delta0, user_rng(rng_seed, uid)) for uid, its in items]
    rng = np.random.default_rng([int(rng_seed), 0x5D5])
    order = rng.permutation(len(users))
    hist = build_policy_histogram([users[i] for i in order], policy, gamma)

    support = sorted(hist)
    noisy = np.fromiter((hist[u] for u in support), float, len(support))
    noisy += rng.normal(0.0, sigma, len(support))
    released = frozenset(u for u, v in zip(support, noisy) if v > rho)
    rho_zero = float(sigma * norm_isf(one_minus_root(params.delta_spill, delta0)))
    return PolicyGaussianRelease(released, sigma, rho, gamma, len(support), policy == "l2",
                                 int(np.count_nonzero(noisy > rho_zero)))


@dataclasses.dataclass(frozen=True)
class CounterexampleTrace:
    diff: tuple[float, float, float]
    norm: float
    log: list[dict]


def l1_counterexample_trace() -> CounterexampleTrace:
    """Replays the 3-item neighbouring pair through l1-descent, user by user.

    ``log[i]`` holds both histograms after user ``i`` of the larger database
    (user 0 exists only there), in item order ``(a, b, c)``.
    """
    inst = KNOWN_L1_INSTANCE
    gamma, bound = inst["gamma"], inst["bound"]
    s1 = PolicyState(WeightedHistogram(), gamma, bound)
    s2 = PolicyState(WeightedHistogram(), gamma, bound)
    order = ("a", "b", "c")

    def vec(state):
        return tuple(state.histogram.get(u, 0.0) for u in order)

    s1 = l1_descent_update(s1, inst["extra"])
    log = [{"user": 0, "items": inst["extra"], "h1": vec(s1), "h2": vec(s2),
            "diff_norm": l2_diff(s1.histogram, s2.histogram)}]
    for i, items in enumerate(inst["shared"], start=1):
        s1 = l1_descent_update(s1, items)
        s2 = l1_descent_update(s2, items)
        log.append({"user": i, "items": items, "h1": vec(s1), "h2": vec(s2),
                    "diff_norm": l2_diff(s1.histogram, s2.histogram)})
    diff = tuple(a - b for a, b in zip(vec(s1), vec(s2)))
    return CounterexampleTrace(diff, math.sqrt(sum(d * d for d in diff)), log)


@dataclasses.dataclass(frozen=True)
class SurchargeRow:
    epsilon: float
    delta0: int
    rho_pg: float
    rho_zero: float
    surcharge: float
    relative: float  # surcharge / rho_pg


def spillover_surcharge_table(eps_list=(1.0, 3.0, 5.0, 8.0), delta0_list=(10, 100),
                              delta=math.exp(-10)) -> list[SurchargeRow]:
    """Policy Gaussian threshold against the zero-mass benchmark, for every (epsilon, delta0) pair."""
    if not 0 < delta < 1:
        raise ValueError("delta must lie in (0, 1)")
    rows = []
    for eps in eps_list:
        for d0 in delta0_list:
            pg, zero = rho_policy_gaussian(eps, delta, d0)
            rows.append(SurchargeRow(eps, d0, pg, zero, pg - zero, (pg - zero) / pg))
    return rows
