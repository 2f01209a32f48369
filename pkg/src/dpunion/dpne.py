"""Differentially private n-gram extraction with frequency-informed pruning
and heterogeneous thresholds (AFP-DPNE).

Level 1 is a set union over unigrams with a spillover-safe threshold. Each
level ``k >= 2`` then does the following:

1. builds structural candidates whose prefix and suffix were both released
   at level ``k - 1``;
2. scores each candidate by the smaller of its prefix/suffix margins
   (noisy count minus the previous threshold);
3. drops candidates whose margin is below ``-m * sigma`` (FIP);
4. discounts the threshold of high-margin candidates by up to half (HT);
5. only then reads the level-``k`` histogram and releases
   ``{w : H[w] + Z_w > tau(w)}``.

Steps 1-4 use only released outputs of earlier levels, so thresholds at
``k >= 2`` cost no privacy. Unobserved candidates are never materialised
with noise. They are sampled per group of identical thresholds with an
exact Binomial draw, which has the same output law as drawing noise for
every candidate.
"""

from __future__ import annotations

import dataclasses
import math
from collections import defaultdict
from collections.abc import Iterable, Iterator, Mapping

import numpy as np
from scipy import stats

from dpunion._normal import norm_cdf, norm_isf, norm_sf
from dpunion.calibration import calibrate_sigma, compose_sigma, rho1, rho_kgram_base
from dpunion.data import Corpus, ReleaseReport, ngram_truth
from dpunion.histogram import build_weighted_histogram
from dpunion.sampling import BinomialSampler

NGram = tuple


class ContractViolation(ValueError):
    """A level was run with inputs that break its preconditions."""


@dataclasses.dataclass(frozen=True)
class DpneConfig:
    """Run configuration. ``bounds`` is one contribution bound per level, or a single int for all."""

    epsilon: float
    bounds: tuple[int, ...] | int
    max_length: int = 6
    delta: float = math.exp(-10)
    fip_tolerance: float = 1.0
    ht_discount: float = 0.3
    spurious_fraction: float = 0.01
    rng_seed: int = 0
    noiseless: bool = False  # non-private sanity mode: sigma = 0, every threshold 0

    def __post_init__(self):
        if self.max_length < 1:
            raise ValueError("max_length must be >= 1")
        bounds = self.bounds
        if isinstance(bounds, (int, np.integer)):
            bounds = (int(bounds),) * self.max_length
        bounds = tuple(int(b) for b in bounds)
        if len(bounds) != self.max_length or min(bounds) < 1:
            raise ValueError(f"need {self.max_length} positive contribution bounds, got {bounds}")
        object.__setattr__(self, "bounds", bounds)
        if not self.epsilon > 0 or not 0 < self.delta < 1:
            raise ValueError("need epsilon > 0 and 0 < delta < 1")
        if not self.fip_tolerance >= 0:
            raise ValueError("fip_tolerance must be >= 0 (math.inf disables pruning)")
        if not 0 <= self.ht_discount <= 1:
            raise ValueError("ht_discount must lie in [0, 1]")
        if not self.spurious_fraction > 0:
            raise ValueError("spurious_fraction must be positive")

    def to_dict(self):
        d = dataclasses.asdict(self)
        d["bounds"] = list(self.bounds)
        return d

    @classmethod
    def from_dict(cls, d):
        fields = {f.name for f in dataclasses.fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in fields})


@dataclasses.dataclass(frozen=True)
class LevelRelease:
    level: int
    released: frozenset
    noisy_values: dict
    thresholds: dict
    rho_base: float
    candidate_count: int
    sigma: float
    observed_count: int = 0
    genuine_count: int | None = None
    spurious_count: int | None = None
    imputed_margins: int = 0

    def summary(self):
        return {
            "level": self.level, "released": len(self.released),
            "genuine": self.genuine_count, "spurious": self.spurious_count,
            "rho_base": self.rho_base, "sigma": self.sigma,
            "candidates": self.candidate_count, "observed": self.observed_count,
            "imputed_margins": self.imputed_margins,
        }


def extract_ngrams(tokens, k) -> set:
    if k < 1:
        raise ValueError("k must be >= 1")
    tokens = tuple(tokens)
    return {tokens[i:i + k] for i in range(len(tokens) - k + 1)}


def structural_candidates(s_prev: Iterable[NGram], s1: Iterable[NGram]) -> Iterator[NGram]:
    """Lazily yields ``p + (u,)`` for ``p`` in ``s_prev`` and unigram ``(u,)`` in ``s1``
    such that ``p[1:] + (u,)`` is also in ``s_prev``.

    Output order is deterministic (sorted prefixes, sorted extensions).
    """
    s_prev = sorted(set(s_prev))
    if not s_prev:
        return
    if len({len(g) for g in s_prev}) != 1:
        raise ValueError("s_prev mixes n-gram lengths")
    unigrams = {g[0] for g in s1}
    extend = defaultdict(list)
    for g in s_prev:
        if g[-1] in unigrams:
            extend[g[:-1]].append(g[-1])
    for p in s_prev:
        for u in extend.get(p[1:], ()):
            yield p + (u,)


def _margin_stream(candidates, noisy_prev, rho_prev):
    for w in candidates:
        pre, suf = noisy_prev.get(w[:-1]), noisy_prev.get(w[1:])
        imputed = pre is None or suf is None
        mp = 0.0 if pre is None else pre - rho_prev
        ms = 0.0 if suf is None else suf - rho_prev
        yield w, min(mp, ms), imputed


def compute_margins(candidates, noisy_prev: Mapping, rho_prev) -> dict:
    """``min(margin(prefix), margin(suffix))``; an absent noisy value counts as margin 0."""
    return {w: m for w, m, _ in _margin_stream(candidates, noisy_prev, rho_prev)}


def _fip_cutoff(m, sigma_prev):
    return -math.inf if math.isinf(m) else -m * sigma_prev


def fip_prune(candidates, margins, m, sigma_prev) -> list:
    """Keeps candidates with ``margin > -m * sigma_prev``; ``m = math.inf`` keeps all."""
    if m < 0:
        raise ValueError("m must be >= 0")
    cutoff = _fip_cutoff(m, sigma_prev)
    return [w for w in candidates if margins[w] > cutoff]


def ht_thresholds(candidates, margins, rho_base, gamma) -> dict:
    """Per-candidate thresholds ``rho_base - min(gamma * max(0, margin) / c, rho_base / 2)``.

    ``c`` is the median positive margin among the candidates (1.0 when none is
    positive). All thresholds are evaluated by one vectorised expression, so
    equal margins always map to bit-identical thresholds.
    """
    if not 0 <= gamma <= 1:
        raise ValueError("gamma must lie in [0, 1]")
    if rho_base < 0:
        raise ValueError("rho_base must be >= 0")
    cands = list(candidates)
    mg = np.fromiter((margins[w] for w in cands), dtype=float, count=len(cands))
    positive = mg[mg > 0]
    cbar = float(np.median(positive)) if positive.size else 1.0
    discount = np.minimum(gamma * (np.maximum(mg, 0.0) / cbar), rho_base / 2)
    tau = rho_base - discount
    return dict(zip(cands, tau.tolist()))


class _LevelPlan:
    """Threshold grouping for one level, computed once and reusable across draws.

    Observed items (``h > 0``) get explicit noise. Unobserved items are grouped
    by exact threshold. Each group releases ``Binomial(size, P[Z > tau])``
    members chosen uniformly, and each released member gets a noisy value
    drawn from ``N(0, sigma^2)`` conditioned on exceeding ``tau``.
    """

    def __init__(self, h, tau, sigma):
        self.sigma = float(sigma)
        self.obs = np.flatnonzero(h > 0)
        self.h_obs = h[self.obs]
        self.tau_obs = tau[self.obs]
        unobs = np.flatnonzero(h <= 0)
        levels, inverse, counts = np.unique(tau[unobs], return_inverse=True, return_counts=True)
        order = np.argsort(inverse, kind="stable")
        self.levels = levels
        self.counts = counts
        self.members = np.split(unobs[order], np.cumsum(counts)[:-1]) if unobs.size else []
        if sigma > 0:
            self.p = norm_sf(levels / sigma)
        else:
            self.p = (levels < 0).astype(float)
        self.binomial = BinomialSampler(counts, self.p)

    def draw(self, rng):
        """Returns ``(released_indices, noisy_values)``."""
        sigma = self.sigma
        noisy_obs = self.h_obs + (rng.normal(0.0, sigma, self.obs.size) if sigma > 0 else 0.0)
        keep = noisy_obs > self.tau_obs
        rel_idx = [self.obs[keep]]
        rel_val = [noisy_obs[keep]]
        if self.counts.size:
            draws = self.binomial(rng)
            hit = np.flatnonzero(draws)
            for g in hit:
                members, k = self.members[g], draws[g]
                rel_idx.append(members if k == members.size else
                               members[rng.permutation(members.size)[:k]])
            if hit.size:
                # Inverse CDF of N(0, sigma^2) restricted to (tau, inf), using the
                # group's P[Z > tau] directly.
                tail_mass = np.repeat(self.p[hit], draws[hit])
                if sigma > 0:
                    rel_val.append(sigma * norm_isf((1.0 - rng.random(tail_mass.size)) * tail_mass))
                else:
                    rel_val.append(np.zeros(tail_mass.size))
        return np.concatenate(rel_idx), np.concatenate(rel_val)


def _release_arrays(h, tau, sigma, rng):
    """Core of :func:`run_level` on aligned arrays.

    Returns the released indices, their noisy values, and the observed count.
    """
    plan = _LevelPlan(h, tau, sigma)
    idx, vals = plan.draw(rng)
    return idx, vals, plan.obs.size


def run_level(histogram: Mapping, tau: Mapping, sigma_k, rng, level=0, rho_base=None):
    """Releases ``{w in tau : H[w] + Z_w > tau[w]}`` without drawing noise for unobserved items.

    ``tau`` fixes the candidate set and its iteration order. Every item with
    positive histogram mass must be a candidate.
    """
    missing = [w for w in histogram if histogram[w] > 0 and w not in tau]
    if missing:
        raise ContractViolation(f"{len(missing)} observed items have no threshold, e.g. {missing[0]!r}")
    if sigma_k < 0:
        raise ValueError("sigma_k must be >= 0")
    cands = list(tau)
    t = np.fromiter(tau.values(), dtype=float, count=len(cands))
    h = np.fromiter((histogram.get(w, 0.0) for w in cands), dtype=float, count=len(cands))
    idx, vals, n_obs = _release_arrays(h, t, sigma_k, rng)
    released = [cands[i] for i in idx.tolist()]
    return LevelRelease(
        level=level, released=frozenset(released), noisy_values=dict(zip(released, vals.tolist())),
        thresholds=dict(tau), rho_base=float(np.max(t)) if rho_base is None and len(t) else rho_base,
        candidate_count=len(cands), sigma=float(sigma_k), observed_count=int(n_obs))


def dense_reference_level(candidates, histogram: Mapping, tau: Mapping, sigma_k, rng) -> frozenset:
    """Draws noise for every candidate and thresholds each one. Used as the test oracle."""
    cands = list(candidates)
    h = np.array([histogram.get(w, 0.0) for w in cands], dtype=float)
    t = np.array([tau[w] for w in cands], dtype=float)
    z = rng.normal(0.0, sigma_k, len(cands)) if sigma_k > 0 else np.zeros(len(cands))
    return frozenset(w for w, keep in zip(cands, h + z > t) if keep)


def equivalence_test(histogram: Mapping, tau: Mapping, sigma_k, trials, rng_seed=0,
                     min_cell=5):
    """Two-sample chi-square test of joint release outcomes, ``run_level`` vs the dense oracle.

    Outcomes are encoded as bitmasks over the (at most 16) candidates. Outcomes
    whose pooled expected count is below ``min_cell`` are merged into one
    bin. Returns ``(statistic, p_value, dof)``.
    """
    cands = list(tau)
    if len(cands) > 16:
        raise ValueError("equivalence test enumerates outcomes; use at most 16 candidates")
    rng_fast, rng_dense = (np.random.default_rng(s)
                           for s in np.random.SeedSequence(rng_seed).spawn(2))
    h = np.fromiter((histogram.get(w, 0.0) for w in cands), dtype=float, count=len(cands))
    t = np.fromiter((tau[w] for w in cands), dtype=float, count=len(cands))
    if np.any((h > 0) & ~np.isfinite(t)):
        raise ContractViolation("observed items need finite thresholds")
    powers = 1 << np.arange(len(cands), dtype=np.int64)
    size = 1 << len(cands)

    # Sparse path: one plan, one draw per trial (what run_level does per call).
    plan = _LevelPlan(h, t, sigma_k)
    codes = np.empty(trials, dtype=np.int64)
    for i in range(trials):
        codes[i] = powers[plan.draw(rng_fast)[0]].sum()
    fast = np.bincount(codes, minlength=size)

    # Dense oracle: noise for every candidate, in chunks of trials.
    dense = np.zeros(size, dtype=np.int64)
    for start in range(0, trials, 20000):
        n = min(20000, trials - start)
        z = rng_dense.normal(0.0, sigma_k, (n, len(cands))) if sigma_k > 0 else np.zeros((n, len(cands)))
        dense += np.bincount(((h + z) > t) @ powers, minlength=size)
    total = fast + dense
    seen = total > 0
    fast, dense, total = fast[seen], dense[seen], total[seen]
    rare = total / 2 < min_cell
    table = np.column_stack([fast[~rare], dense[~rare]])
    if rare.any():
        table = np.vstack([table, [fast[rare].sum(), dense[rare].sum()]])
    if table.shape[0] < 2:
        return 0.0, 1.0, 0
    res = stats.chi2_contingency(table, correction=False)
    return float(res.statistic), float(res.pvalue), int(res.dof)


@dataclasses.dataclass
class DpneResult:
    config: DpneConfig
    sigma_star: float
    sigma: float
    levels: list[LevelRelease]

    @property
    def released(self):
        return [lv.released for lv in self.levels]

    @property
    def total_released(self):
        return sum(len(lv.released) for lv in self.levels)

    def summary(self):
        per_level = [lv.summary() for lv in self.levels]
        return {
            "total_released": self.total_released,
            "total_genuine": sum(lv["genuine"] or 0 for lv in per_level),
            "total_spurious": sum(lv["spurious"] or 0 for lv in per_level),
            "sigma_star": self.sigma_star, "sigma": self.sigma,
            "levels": per_level,
        }

    def to_report(self, wall_clock=0.0) -> ReleaseReport:
        return ReleaseReport(config=self.config.to_dict(), levels=self.summary()["levels"],
                             wall_clock=wall_clock, seed=self.config.rng_seed)


def _level_seed(seed, level, stream):
    return np.random.SeedSequence([int(seed), level, stream])


def _empty_level(level, sigma, rho_base=math.inf):
    return LevelRelease(level=level, released=frozenset(), noisy_values={}, thresholds={},
                        rho_base=rho_base, candidate_count=0, sigma=sigma)


def run_afp_dpne(corpus: Corpus, config: DpneConfig) -> DpneResult:
    """Runs all levels and annotates each with genuine/spurious counts.

    Ground truth is the union of the users' k-grams before truncation. The
    margin of a level-``k`` candidate is measured against the previous
    level's base threshold.
    """
    T = config.max_length
    sigma_star = calibrate_sigma(config.epsilon, config.delta / 2, 1.0)
    sigma = 0.0 if config.noiseless else compose_sigma(sigma_star, T)
    truth = ngram_truth(corpus, T)
    users = corpus.users

    def user_grams(k, allowed=None):
        out = {}
        for uid, toks in users:
            grams = extract_ngrams(toks, k)
            out[uid] = grams if allowed is None else grams & allowed
        return out

    def rng_for(level):
        return np.random.default_rng(_level_seed(config.rng_seed, level, 0))

    def trunc_seed(level):
        return int(_level_seed(config.rng_seed, level, 1).generate_state(1)[0])

    h1 = build_weighted_histogram(user_grams(1), config.bounds[0], trunc_seed(1))
    rho_1 = 0.0 if config.noiseless else rho1(sigma, config.delta / 2, config.bounds[0])
    tau1 = {w: rho_1 for w in sorted(h1)}
    levels = [run_level(h1, tau1, sigma, rng_for(1), level=1, rho_base=rho_1)]

    for k in range(2, T + 1):
        prev, s1 = levels[-1], levels[0].released
        if not prev.released:
            levels.append(_empty_level(k, sigma))
            continue
        cutoff = _fip_cutoff(config.fip_tolerance, prev.sigma)
        margins, imputed = {}, 0
        cands = structural_candidates(prev.released, s1)
        for w, mg, was_imputed in _margin_stream(cands, prev.noisy_values, prev.rho_base):
            imputed += was_imputed
            if mg > cutoff:
                margins[w] = mg
        if not margins:
            levels.append(_empty_level(k, sigma))
            continue
        if config.noiseless:
            rho_base = 0.0
        else:
            rho_base = rho_kgram_base(sigma, config.spurious_fraction, len(prev.released),
                                      len(margins))
        tau = ht_thresholds(margins, margins, rho_base, config.ht_discount)
        # Thresholds are fixed; only now is level-k data read.
        hk = build_weighted_histogram(user_grams(k, tau.keys()), config.bounds[k - 1],
                                      trunc_seed(k))
        release = run_level(hk, tau, sigma, rng_for(k), level=k, rho_base=rho_base)
        levels.append(dataclasses.replace(release, imputed_margins=imputed))

    levels = [dataclasses.replace(lv, genuine_count=len(lv.released & truth[lv.level - 1]),
                                  spurious_count=len(lv.released - truth[lv.level - 1]))
              for lv in levels]
    return DpneResult(config=config, sigma_star=sigma_star, sigma=sigma, levels=levels)


@dataclasses.dataclass(frozen=True)
class AdaptiveRatio:
    p_in: float
    p_out: float
    ratio: float
    uniform_ratio: float


def adaptive_counterexample_ratio(sigma, rho, delta0, discount=None) -> AdaptiveRatio:
    """Per-item release-probability ratio when observed items get threshold ``rho - discount``.

    A user with ``delta0`` items holds a unique item of weight ``1/sqrt(delta0)``.
    With the user present the item is observed and faces the lowered
    threshold. Without the user it is unobserved and faces ``rho``.
    ``uniform_ratio`` is the same ratio when both cases use ``rho``.
    """
    if not sigma > 0 or not rho > 0 or delta0 < 1:
        raise ValueError("need sigma > 0, rho > 0, delta0 >= 1")
    discount = rho / 2 if discount is None else discount
    weight = 1 / math.sqrt(delta0)
    p_in = float(norm_cdf((weight - (rho - discount)) / sigma))
    p_out = float(norm_cdf(-rho / sigma))
    uniform_in = float(norm_cdf((weight - rho) / sigma))
    return AdaptiveRatio(p_in, p_out, p_in / p_out, uniform_in / p_out)


def equivalence_configs():
    """Small ``(histogram, tau, sigma)`` cases covering the threshold-grouping paths of :func:`run_level`.

    The cases are: shared-threshold groups, several groups, all-unobserved,
    all-observed, and negative thresholds (release probability above 1/2).
    """
    a, b, c, d, e, f, g, h = [(i,) for i in range(8)]
    return [
        ({a: 0.8, b: 1.5}, {a: 1.0, b: 1.0, c: 1.0, d: 1.0, e: 1.0, f: 1.0}, 1.0),
        ({a: 0.5, b: 2.0, c: 1.0},
         {a: 1.2, b: 2.0, c: 0.7, d: 1.2, e: 1.2, f: 0.7, g: 0.7, h: 0.7}, 1.0),
        ({}, {a: 0.0, b: 0.0, c: 0.5, d: 0.5, e: 0.5, f: 1.5, g: 1.5, h: 1.5}, 1.0),
        ({a: 0.3, b: 0.9, c: 1.4, d: 2.2}, {a: 1.0, b: 1.0, c: 1.5, d: 1.5}, 0.8),
        ({a: 1.0, b: 0.2}, {a: 0.5, b: 0.5, c: -0.4, d: -0.4, e: -0.4, f: 3.0, g: 0.5}, 1.0),
    ]
