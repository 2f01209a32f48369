"""One-run empirical privacy audit with planted canary users.

Each of ``m`` canaries is included with probability 1/2, and the pipeline
runs once. Canaries are ranked by how many of their n-grams were released.
The top ``r/2`` are guessed included and the bottom ``r/2`` excluded. If
the mechanism is (epsilon, delta)-DP, the number of correct guesses ``W``
satisfies ``P[W >= v] <= beta + 2 m delta alpha``, where
``beta = P[Bin(r, e^eps / (1 + e^eps)) >= v]``.
"""

from __future__ import annotations

import dataclasses
import math
from concurrent.futures import ThreadPoolExecutor

import numpy as np
from scipy.special import expit, gammaln, logsumexp

from dpunion.data import Corpus
from dpunion.dpne import DpneConfig, extract_ngrams, run_afp_dpne

PASS_LEVEL = 0.05


@dataclasses.dataclass(frozen=True)
class AuditRecord:
    """One audit run. ``guesses`` holds ``(canary_index, guessed_included)`` pairs."""

    m: int
    inclusion_bits: tuple[bool, ...]
    scores: tuple[float, ...]
    guesses: tuple[tuple[int, bool], ...]
    correct: int
    total_guesses: int
    p_value: float


@dataclasses.dataclass(frozen=True)
class AuditResult:
    runs: tuple[AuditRecord, ...]
    correct: int
    total: int
    p_value: float
    epsilon: float

    @property
    def fraction(self):
        return self.correct / self.total if self.total else 0.0

    @property
    def passed(self):
        return self.p_value >= PASS_LEVEL


def plant_canaries(corpus: Corpus, m, rng_seed=0, length=8):
    """Appends each of ``m`` canary users with probability 1/2.

    Canary tokens (``<canary{i}_{j}>``) are unique and disjoint from every
    existing vocabulary entry.

    Returns:
      ``(corpus_with_canaries, inclusion_bits, canary_texts)``. Canary texts
      are token strings, because excluded canaries have no ids in the new vocabulary.
    """
    if m < 1:
        raise ValueError("need at least one canary")
    rng = np.random.default_rng([int(rng_seed), 0xCA7])
    bits = tuple(bool(b) for b in rng.random(m) < 0.5)
    vocab = set(corpus.vocab)
    texts = []
    for i in range(m):
        toks = [f"<canary{i}_{j}>" for j in range(length)]
        if vocab.intersection(toks):
            raise ValueError("canary tokens collide with the corpus vocabulary")
        texts.append(tuple(toks))
    kept = [i for i in range(m) if bits[i]]
    planted = corpus.with_users([texts[i] for i in kept], [f"canary{i}" for i in kept])
    return planted, bits, texts


def score_canaries(releases, canary_texts, vocab):
    """Counts each canary's distinct n-grams (k = 1..len(releases)) found in the releases.

    ``releases[k-1]`` is the level-k release over token ids from ``vocab``.
    """
    index = {w: i for i, w in enumerate(vocab)}
    scores = []
    for text in canary_texts:
        if any(w not in index for w in text):
            # Some token never entered the corpus, so no n-gram holding it was released.
            ids = [index.get(w, -1) for w in text]
        else:
            ids = [index[w] for w in text]
        score = 0
        for k, released in enumerate(releases, start=1):
            score += sum(1 for g in extract_ngrams(ids, k) if -1 not in g and g in released)
        scores.append(float(score))
    return scores


def guess_from_scores(scores, r):
    """Guesses "included" for the ``r/2`` highest scores and "excluded" for the ``r/2`` lowest.

    Ties are broken by canary index, lower first.
    """
    m = len(scores)
    if not 0 <= r <= m:
        raise ValueError(f"need 0 <= r <= m, got r={r}, m={m}")
    ranked = sorted(range(m), key=lambda i: (-scores[i], i))
    half = r // 2
    top = [(i, True) for i in ranked[:half]]
    bottom = [(i, False) for i in ranked[m - (r - half):]] if r - half else []
    return top + bottom


def score_and_guess(releases, canary_texts, r, vocab):
    return guess_from_scores(score_canaries(releases, canary_texts, vocab), r)


def _log_binom_pmf(k, n, q):
    k = np.asarray(k, dtype=float)
    return (gammaln(n + 1) - gammaln(k + 1) - gammaln(n - k + 1)
            + k * math.log(q) + (n - k) * math.log1p(-q))


def binom_upper_tail(v, r, q):
    """``P[Bin(r, q) >= v]`` by explicit log-space summation of the pmf."""
    if v <= 0:
        return 1.0
    if v > r:
        return 0.0
    return float(math.exp(min(logsumexp(_log_binom_pmf(np.arange(v, r + 1), r, q)), 0.0)))


def audit_alpha(v, r, q):
    """Largest average pmf mass per step below ``v``: ``max_i P[v-i <= Bin(r,q) < v] / i``."""
    if v <= 0:
        return 0.0
    pmf = np.exp(_log_binom_pmf(np.arange(v - 1, -1, -1), r, q))  # P[v-1], P[v-2], ..., P[0]
    i = np.arange(1, v + 1)
    return float(np.max(np.cumsum(pmf) / i))


def audit_pvalue(v, r, epsilon, delta, m, alpha=None):
    """Upper bound on ``P[W >= v]`` under (epsilon, delta)-DP, capped at 1.

    ``alpha=None`` evaluates the step-mass term exactly (:func:`audit_alpha`).
    ``alpha=1.0`` gives the loosest valid bound.
    """
    if not 0 <= v <= r:
        raise ValueError(f"need 0 <= v <= r, got v={v}, r={r}")
    q = float(expit(epsilon))
    beta = binom_upper_tail(v, r, q)
    if alpha is None:
        alpha = audit_alpha(v, r, q)
    return min(beta + 2 * m * delta * alpha, 1.0)


def _one_run(corpus, config, m, guesses, seed):
    planted, bits, texts = plant_canaries(corpus, m, rng_seed=seed)
    result = run_afp_dpne(planted, dataclasses.replace(config, rng_seed=seed))
    scores = score_canaries(result.released, texts, planted.vocab)
    gs = guess_from_scores(scores, guesses)
    correct = sum(bits[i] == g for i, g in gs)
    p = audit_pvalue(correct, len(gs), config.epsilon, config.delta, m)
    return AuditRecord(m, bits, tuple(scores), tuple(gs), correct, len(gs), p)


def run_audit(corpus: Corpus, config: DpneConfig, m=200, runs=3, rng_seed=0, guesses=None,
              threads=1) -> AuditResult:
    """Runs ``runs`` independent audits and pools their guesses.

    The pooled p-value treats all runs as one audit with ``m * runs``
    canaries. The audit passes when that p-value is at least 0.05.
    """
    guesses = m // 2 if guesses is None else guesses
    seeds = [int(s.generate_state(1)[0]) for s in np.random.SeedSequence(rng_seed).spawn(runs)]
    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        records = tuple(pool.map(lambda s: _one_run(corpus, config, m, guesses, s), seeds))
    correct = sum(rec.correct for rec in records)
    total = sum(rec.total_guesses for rec in records)
    p = audit_pvalue(correct, total, config.epsilon, config.delta, m * runs)
    return AuditResult(records, correct, total, p, config.epsilon)
