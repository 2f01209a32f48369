"""Weighted histograms with unit l2 sensitivity and contractive update policies.

Two ways of turning per-user item sets into a histogram live here:

* the *weighted* scheme, where a user's (truncated) set of ``t`` items adds
  ``1/sqrt(t)`` to each item. It is an order-independent sum.
* *policy* histograms, where users are visited in a fixed order and each one
  moves the histogram toward a cutoff ``gamma`` by an update of l2 length <= 1.
  The l2-descent policy is contractive. The l1-descent policy is not, and
  :func:`dpunion.dpsu.l1_counterexample_trace` replays an instance where it fails.
"""

from __future__ import annotations

import dataclasses
import math
import zlib
from collections.abc import Hashable, Iterable, Mapping, Sequence

import numpy as np


class WeightedHistogram(Mapping):
    """Read-only sparse item -> weight map; absent items have weight 0."""

    __slots__ = ("_data",)

    def __init__(self, data=None):
        self._data = dict(data or {})

    def __getitem__(self, item):
        return self._data[item]

    def __iter__(self):
        return iter(self._data)

    def __len__(self):
        return len(self._data)

    def __repr__(self):
        return f"WeightedHistogram({self._data!r})"

    def get(self, item, default=0.0):
        return self._data.get(item, default)

    def support(self):
        return frozenset(k for k, v in self._data.items() if v > 0)

    def to_dict(self):
        return dict(self._data)


@dataclasses.dataclass(frozen=True)
class PolicyState:
    histogram: WeightedHistogram
    cutoff_gamma: float
    contribution_bound: int

    def __post_init__(self):
        if not self.cutoff_gamma > 0:
            raise ValueError(f"cutoff_gamma must be positive, got {self.cutoff_gamma}")
        if self.contribution_bound < 1:
            raise ValueError("contribution_bound must be >= 1")


def _sorted_items(items):
    try:
        return sorted(items)
    except TypeError:
        return sorted(items, key=repr)


def user_rng(rng_seed, *keys):
    """Independent generator for one (seed, key...) pair.

    Keys are hashed with crc32 of their repr so that a user's stream does not
    depend on who else is in the database.
    """
    entropy = [int(rng_seed) & 0xFFFFFFFF]
    entropy += [zlib.crc32(repr(k).encode()) for k in keys]
    return np.random.default_rng(entropy)


def truncate_items(items, bound, rng):
    """Uniform subsample of at most ``bound`` distinct items (sorted first for determinism)."""
    items = _sorted_items(set(items))
    if len(items) <= bound:
        return items
    keep = rng.choice(len(items), size=bound, replace=False)
    return [items[i] for i in sorted(keep)]


def _as_user_mapping(corpus_items):
    if isinstance(corpus_items, Mapping):
        return corpus_items.items()
    return enumerate(corpus_items)


def build_weighted_histogram(corpus_items, bound, rng_seed=0):
    """Sum of per-user contributions ``1/sqrt(|W'_i|)`` over truncated sets ``W'_i``.

    Args:
      corpus_items: mapping user_id -> iterable of items, or a sequence of item
        iterables (list position is then the user id).
      bound: maximum number of items kept per user.
      rng_seed: seed for the truncation subsample. Each user's stream depends
        only on ``(rng_seed, user_id)``, so shared users truncate identically
        in neighbouring databases.
    """
    if bound < 1:
        raise ValueError(f"bound must be >= 1, got {bound}")
    hist: dict = {}
    for user_id, items in _as_user_mapping(corpus_items):
        items = set(items)
        if not items:
            continue
        if len(items) > bound:
            kept = truncate_items(items, bound, user_rng(rng_seed, user_id))
        else:
            kept = items
        w = 1.0 / math.sqrt(len(kept))
        for item in kept:
            hist[item] = hist.get(item, 0.0) + w
    return WeightedHistogram(hist)


def l2_diff(h1, h2):
    keys = set(h1) | set(h2)
    return math.sqrt(sum((h1.get(k, 0.0) - h2.get(k, 0.0)) ** 2 for k in keys))


def solve_l1_lambda(gaps):
    """Exact ``lam >= 0`` with ``sum(min(g, lam)**2) == 1``, assuming ``||gaps||_2 > 1``.

    Gaps are sorted ascending; with the first ``j`` gaps fully consumed the
    remaining ``n - j`` share ``1 - sum(g_i**2)`` equally.
    """
    g = np.sort(np.asarray(gaps, dtype=float))
    n = len(g)
    consumed = 0.0
    for j in range(n):
        lam = math.sqrt((1.0 - consumed) / (n - j))
        if lam <= g[j]:
            return lam
        consumed += g[j] ** 2
    raise ValueError("gap vector has l2 norm <= 1; no update is needed")


def _gaps(hist, items, gamma):
    keys = [u for u in _sorted_items(set(items)) if hist.get(u, 0.0) < gamma]
    return keys, np.array([gamma - hist.get(u, 0.0) for u in keys])


def l1_descent_increments(hist, items, gamma):
    """Increments of the l1-descent policy (empty when no update happens)."""
    keys, gaps = _gaps(hist, items, gamma)
    if len(keys) == 0 or math.sqrt(float(gaps @ gaps)) <= 1:
        return {}
    lam = solve_l1_lambda(gaps)
    return {u: float(min(g, lam)) for u, g in zip(keys, gaps)}


def l2_descent_increments(hist, items, gamma):
    """Increments of the l2-descent policy: a step of length ``min(1, ||G||)`` along ``G``."""
    keys, gaps = _gaps(hist, items, gamma)
    if len(keys) == 0:
        return {}
    norm = math.sqrt(float(gaps @ gaps))
    scale = 1.0 if norm <= 1 else 1.0 / norm
    return {u: float(g * scale) for u, g in zip(keys, gaps)}


_POLICIES = {"l1": l1_descent_increments, "l2": l2_descent_increments}


def _apply(hist, incs, gamma):
    for u, d in incs.items():
        # A step that consumes the whole gap lands exactly on the cutoff.
        hist[u] = min(hist.get(u, 0.0) + d, gamma)


def _update(state, items, increments):
    if len(set(items)) > state.contribution_bound:
        raise ValueError(
            f"user holds {len(set(items))} items, above bound {state.contribution_bound}")
    incs = increments(state.histogram, items, state.cutoff_gamma)
    if not incs:
        return state
    hist = state.histogram.to_dict()
    _apply(hist, incs, state.cutoff_gamma)
    return dataclasses.replace(state, histogram=WeightedHistogram(hist))


def l1_descent_update(state: PolicyState, user_items) -> PolicyState:
    """Greedy fill: items with small gaps reach the cutoff first, the rest share what is left."""
    return _update(state, user_items, l1_descent_increments)


def l2_descent_update(state: PolicyState, user_items) -> PolicyState:
    return _update(state, user_items, l2_descent_increments)


def build_policy_histogram(users: Sequence[Iterable[Hashable]], policy, gamma):
    """Runs a descent policy over users in the given order; returns the histogram.

    Mutates a private dict in place, which is linear in the total number of
    items. Chaining :func:`l2_descent_update` would copy the histogram for every user.
    """
    try:
        increments = _POLICIES[policy]
    except KeyError:
        raise ValueError(f"unknown policy {policy!r}; expected 'l1' or 'l2'") from None
    hist: dict = {}
    for items in users:
        _apply(hist, increments(hist, items, gamma), gamma)
    return WeightedHistogram(hist)


def jacobian_spectral_norm(gaps_at_cutoff, lam, free_count):
    """Largest singular value of the l1-descent Jacobian at a point where
    ``t = len(gaps_at_cutoff)`` items hit the cutoff and ``free_count`` items move by ``lam``.
    """
    gaps = np.asarray(gaps_at_cutoff, dtype=float)
    if free_count < 1:
        raise ValueError("free_count must be >= 1")
    if not lam > 0:
        raise ValueError("lam must be positive")
    residual = float(gaps @ gaps) + free_count * lam**2 - 1.0
    if abs(residual) > 1e-9:
        raise ValueError(f"constraint sum(gaps^2) + free*lam^2 = 1 violated by {residual:.3g}")
    return 1.0 / math.sqrt(free_count * lam**2)


def l1_jacobian_matrix(gaps_at_cutoff, lam, free_count):
    """Explicit ``d x d`` Jacobian with the saturated coordinates first."""
    gaps = np.asarray(gaps_at_cutoff, dtype=float)
    t, m = len(gaps), int(free_count)
    jac = np.zeros((t + m, t + m))
    jac[t:, :t] = gaps / (m * lam)
    jac[t:, t:] = np.eye(m)
    return jac


# Neighbouring pair from the l1-descent counterexample: the extra user comes first.
KNOWN_L1_INSTANCE = {
    "gamma": 5.0,
    "bound": 3,
    "extra": ("a", "b", "c"),
    "shared": [("a", "b")] * 2 + [("b", "c")] * 5,
    "position": 0,
}


def _random_neighbours(rng):
    d = int(rng.integers(2, 6))
    bound = int(rng.integers(2, d + 1))
    gamma = float(rng.uniform(0.5, 6.0))
    n_shared = int(rng.integers(1, 16))
    universe = np.arange(d)

    def draw():
        size = int(rng.integers(1, bound + 1))
        return tuple(int(x) for x in rng.choice(universe, size=size, replace=False))

    shared = [draw() for _ in range(n_shared)]
    return {"gamma": gamma, "bound": bound, "extra": draw(), "shared": shared,
            "position": int(rng.integers(0, n_shared + 1))}


def neighbour_ratio(policy, instance):
    shared = list(instance["shared"])
    with_extra = shared[:instance["position"]] + [instance["extra"]] + shared[instance["position"]:]
    h1 = build_policy_histogram(with_extra, policy, instance["gamma"])
    h2 = build_policy_histogram(shared, policy, instance["gamma"])
    return l2_diff(h1, h2)


def contractivity_probe(policy, trials, rng_seed=0, include_known=True):
    """Max ``||H(D1) - H(D2)||_2`` over random neighbouring pairs.

    Instances are small universes (2-5 items) with many users and cutoffs of
    a few units, so items sit near the cutoff. That is where the l1-descent
    loses contractivity. With ``include_known`` the first trial is the
    3-item, 8-user counterexample instance.
    """
    if trials < 1:
        return 0.0
    rng = np.random.default_rng(rng_seed)
    worst = 0.0
    for i in range(trials):
        instance = KNOWN_L1_INSTANCE if include_known and i == 0 else _random_neighbours(rng)
        worst = max(worst, neighbour_ratio(policy, instance))
    return worst
