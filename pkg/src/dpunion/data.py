"""Corpora: synthetic generators, NDJSON persistence, and release reports.

Corpus NDJSON, one user per line::

    {"user_id": "u17", "tokens": ["the", "cat"], "format_version": 1}

``format_version`` is optional on read and always written. Reports are a
single JSON document carrying ``format_version`` at the top level.
"""

from __future__ import annotations

import dataclasses
import json
import math
import os
import zlib
from collections.abc import Iterator, Sequence

import numpy as np

FORMAT_VERSION = 1


class CorpusFormatError(ValueError):
    pass


@dataclasses.dataclass(frozen=True)
class Corpus:
    """Users' token sequences; token ids index into ``vocab``."""

    users: tuple[tuple[str, tuple[int, ...]], ...]
    vocab: tuple[str, ...]

    def __post_init__(self):
        ids = [u for u, _ in self.users]
        if len(set(ids)) != len(ids):
            raise ValueError("user ids must be unique")
        n = len(self.vocab)
        for uid, toks in self.users:
            if any(not 0 <= t < n for t in toks):
                raise ValueError(f"user {uid!r} references a token outside the vocabulary")

    def __len__(self):
        return len(self.users)

    @property
    def user_ids(self):
        return [u for u, _ in self.users]

    def texts(self) -> Iterator[tuple[int, ...]]:
        return (toks for _, toks in self.users)

    def decode(self, tokens):
        return [self.vocab[t] for t in tokens]

    @classmethod
    def from_texts(cls, texts: Sequence[Sequence[str]], user_ids=None):
        """Builds a corpus from string tokens, assigning ids in first-seen order."""
        index: dict[str, int] = {}
        users = []
        for i, words in enumerate(texts):
            toks = tuple(index.setdefault(w, len(index)) for w in words)
            users.append((str(user_ids[i]) if user_ids is not None else f"u{i}", toks))
        return cls(tuple(users), tuple(index))

    def with_users(self, extra_texts, extra_ids):
        """New corpus with extra users whose string tokens may extend the vocabulary."""
        index = {w: i for i, w in enumerate(self.vocab)}
        vocab = list(self.vocab)
        users = list(self.users)
        for uid, words in zip(extra_ids, extra_texts):
            toks = []
            for w in words:
                if w not in index:
                    index[w] = len(vocab)
                    vocab.append(w)
                toks.append(index[w])
            users.append((uid, tuple(toks)))
        return Corpus(tuple(users), tuple(vocab))


def ngram_truth(corpus: Corpus, max_length: int) -> list[set]:
    """Per-level union of the users' distinct k-grams, k = 1..max_length."""
    truth = [set() for _ in range(max_length)]
    for toks in corpus.texts():
        for k in range(1, max_length + 1):
            truth[k - 1].update(tuple(toks[i:i + k]) for i in range(len(toks) - k + 1))
    return truth


# ---------------------------------------------------------------- generators

def _zipf_pmf(size, alpha):
    p = np.arange(1, size + 1, dtype=float) ** -alpha
    return p / p.sum()


def _lengths(rng, n_users, mean_length, min_length):
    # Lognormal keeps a long right tail of verbose users.
    sigma = 0.6
    mu = math.log(max(mean_length - min_length, 1)) - sigma**2 / 2
    return min_length + np.floor(rng.lognormal(mu, sigma, n_users)).astype(int)


def _markov_zipf_texts(rng, lengths, pmf, local_prob, window):
    """Metropolis chains whose stationary law is ``pmf`` over ranks.

    Each step either proposes a neighbouring rank (within ``window``) and
    accepts it with the usual probability ratio, or redraws from ``pmf``
    directly. Both kernels leave ``pmf`` invariant and chains start from
    ``pmf``, so every position is exactly Zipf-distributed while consecutive
    tokens share structured, repeatable transitions.
    """
    n_users, size = len(lengths), len(pmf)
    steps = int(lengths.max())
    cdf = np.cumsum(pmf)
    out = np.empty((n_users, steps), dtype=np.int64)
    cur = np.minimum(np.searchsorted(cdf, rng.random(n_users), side="right"), size - 1)
    out[:, 0] = cur
    for s in range(1, steps):
        local = rng.random(n_users) < local_prob
        offset = rng.integers(1, window + 1, n_users) * rng.choice([-1, 1], n_users)
        prop = cur + offset
        inside = (prop >= 0) & (prop < size)
        prop_c = np.clip(prop, 0, size - 1)
        accept = inside & (rng.random(n_users) < pmf[prop_c] / pmf[cur])
        fresh = np.minimum(np.searchsorted(cdf, rng.random(n_users), side="right"), size - 1)
        cur = np.where(local, np.where(accept, prop_c, cur), fresh)
        out[:, s] = cur
    return [tuple(int(t) for t in out[i, :lengths[i]]) for i in range(n_users)]


def _clustered_texts(rng, lengths, vocab_size, n_topics, phrase_prob, phrases_per_topic,
                     alpha, shared_fraction):
    n_shared = max(1, int(vocab_size * shared_fraction))
    topical = np.arange(n_shared, vocab_size)
    topic_words = np.array_split(topical, n_topics)
    shared_pmf = _zipf_pmf(n_shared, alpha)
    phrase_pmf = _zipf_pmf(phrases_per_topic, alpha)
    phrases = []
    for words in topic_words:
        pool = np.concatenate([words, np.arange(n_shared)])
        topic = []
        for _ in range(phrases_per_topic):
            size = int(rng.integers(2, 6))
            topic.append(tuple(int(w) for w in rng.choice(pool, size=size)))
        phrases.append(topic)
    texts = []
    for length in lengths:
        topic = int(rng.integers(n_topics))
        words_pmf = _zipf_pmf(len(topic_words[topic]), alpha)
        toks: list[int] = []
        while len(toks) < length:
            r = rng.random()
            if r < phrase_prob:
                toks.extend(phrases[topic][rng.choice(phrases_per_topic, p=phrase_pmf)])
            elif r < phrase_prob + (1 - phrase_prob) / 2:
                toks.append(int(rng.choice(n_shared, p=shared_pmf)))
            else:
                toks.append(int(topic_words[topic][rng.choice(len(words_pmf), p=words_pmf)]))
        texts.append(tuple(toks[:length]))
    return texts


_DEFAULT_KNOBS = {
    "zipf": {"alpha": 1.07, "mean_length": 40, "min_length": 5, "local_prob": 0.6, "window": 2},
    "heavy_tail": {"alpha": 1.5, "mean_length": 40, "min_length": 5, "local_prob": 0.75,
                   "window": 3},
    "clustered": {"alpha": 1.07, "mean_length": 40, "min_length": 5, "n_topics": 10,
                  "phrase_prob": 0.3, "phrases_per_topic": 40, "shared_fraction": 0.2},
}


def gen_synthetic(kind, n_users, vocab_size, rng_seed=0, **knobs) -> Corpus:
    """Synthetic text corpus; a pure function of its arguments.

    ``zipf`` and ``heavy_tail`` draw Zipf(alpha) tokens from a chain biased
    toward adjacent ranks (alpha 1.07 and 1.5). ``clustered`` assigns each
    user one of ``n_topics`` topics that mix topical words, shared common
    words, and recurring topic phrases. Unrecognised knobs raise ValueError.
    """
    if kind not in _DEFAULT_KNOBS:
        raise ValueError(f"unknown corpus kind {kind!r}; choose from {sorted(_DEFAULT_KNOBS)}")
    if n_users < 1 or vocab_size < 2:
        raise ValueError("need n_users >= 1 and vocab_size >= 2")
    unknown = set(knobs) - set(_DEFAULT_KNOBS[kind])
    if unknown:
        raise ValueError(f"unknown knobs for {kind!r}: {sorted(unknown)}")
    cfg = {**_DEFAULT_KNOBS[kind], **knobs}
    if cfg["alpha"] <= 0 or cfg["mean_length"] < cfg["min_length"] or cfg["min_length"] < 1:
        raise ValueError(f"invalid knobs {cfg}")
    rng = np.random.default_rng([int(rng_seed), zlib.crc32(kind.encode())])
    lengths = _lengths(rng, n_users, cfg["mean_length"], cfg["min_length"])
    if kind == "clustered":
        if cfg["n_topics"] < 1 or not 0 <= cfg["phrase_prob"] <= 1:
            raise ValueError(f"invalid knobs {cfg}")
        texts = _clustered_texts(rng, lengths, vocab_size, cfg["n_topics"], cfg["phrase_prob"],
                                 cfg["phrases_per_topic"], cfg["alpha"], cfg["shared_fraction"])
    else:
        if not 0 <= cfg["local_prob"] <= 1 or cfg["window"] < 1:
            raise ValueError(f"invalid knobs {cfg}")
        texts = _markov_zipf_texts(rng, lengths, _zipf_pmf(vocab_size, cfg["alpha"]),
                                   cfg["local_prob"], cfg["window"])
    users = tuple((f"u{i}", t) for i, t in enumerate(texts))
    return Corpus(users, tuple(f"w{i}" for i in range(vocab_size)))


def gen_item_sets(n_users=20_000, universe=50_000, alpha=1.07, pareto_shape=1.5, size_min=6,
                  size_cap=1000, rng_seed=0):
    """Per-user item sets for set-union benchmarks.

    Set sizes are ``size_min * (1 + Pareto(shape))`` truncated at ``size_cap``.
    Items within a set are distinct draws from a Zipf(alpha) popularity
    over ``universe`` items. The defaults (tuned once on seed 0) give about
    30.5k distinct items and 13.8k singletons at 20k users.
    """
    rng = np.random.default_rng([int(rng_seed), 7])
    sizes = np.minimum(np.floor(size_min * (1 + rng.pareto(pareto_shape, n_users))), size_cap)
    sizes = sizes.astype(int)
    cdf = np.cumsum(_zipf_pmf(universe, alpha))
    draws = np.minimum(np.searchsorted(cdf, rng.random(int(sizes.sum())), side="right"),
                       universe - 1)
    bounds = np.concatenate([[0], np.cumsum(sizes)])
    return [frozenset(int(x) for x in draws[bounds[i]:bounds[i + 1]]) for i in range(n_users)]


# ----------------------------------------------------------------------- I/O

def save_corpus(corpus: Corpus, path):
    with open(path, "w", encoding="utf-8") as fh:
        for uid, toks in corpus.users:
            rec = {"user_id": uid, "tokens": corpus.decode(toks), "format_version": FORMAT_VERSION}
            fh.write(json.dumps(rec, ensure_ascii=False) + "\n")


def load_corpus(path) -> Corpus:
    """Reads a corpus NDJSON file. Malformed records raise CorpusFormatError naming the line."""
    ids, texts = [], []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorpusFormatError(f"{path}:{lineno}: invalid JSON ({exc.msg})") from None
            if not isinstance(rec, dict):
                raise CorpusFormatError(f"{path}:{lineno}: record must be an object")
            if rec.get("format_version", FORMAT_VERSION) != FORMAT_VERSION:
                raise CorpusFormatError(
                    f"{path}:{lineno}: unsupported format_version {rec['format_version']!r}")
            if "user_id" not in rec or "tokens" not in rec:
                missing = "tokens" if "user_id" in rec else "user_id"
                raise CorpusFormatError(f"{path}:{lineno}: missing field {missing!r}")
            toks = rec["tokens"]
            if not isinstance(toks, list) or not all(isinstance(t, str) for t in toks):
                raise CorpusFormatError(f"{path}:{lineno}: 'tokens' must be a list of strings")
            ids.append(str(rec["user_id"]))
            texts.append(toks)
    try:
        return Corpus.from_texts(texts, ids)
    except ValueError as exc:
        raise CorpusFormatError(f"{path}: {exc}") from None


def load_text_corpus(path, limit=None) -> Corpus:
    """One document per line, lowercased and split on whitespace (Webis-TLDR-17 style dumps).

    Blank lines are skipped. The user id is the 0-based index among kept lines.
    """
    texts = []
    with open(path, encoding="utf-8", errors="replace") as fh:
        for line in fh:
            words = line.lower().split()
            if not words:
                continue
            texts.append(words)
            if limit is not None and len(texts) >= limit:
                break
    return Corpus.from_texts(texts)


# ------------------------------------------------------------------- reports

@dataclasses.dataclass
class ReleaseReport:
    config: dict
    levels: list[dict]
    wall_clock: float
    seed: int
    kind: str = "dpne"
    extra: dict = dataclasses.field(default_factory=dict)

    def __post_init__(self):
        for lv in self.levels:
            counts = (lv.get("released", 0), lv.get("genuine", 0), lv.get("spurious", 0))
            if min(counts) < 0:
                raise ValueError("report counts must be non-negative")
            if lv.get("genuine") is not None and lv["genuine"] + lv["spurious"] != lv["released"]:
                raise ValueError(f"level {lv.get('level')}: genuine + spurious != released")

    def to_dict(self):
        return {"format_version": FORMAT_VERSION, **dataclasses.asdict(self)}

    @classmethod
    def from_dict(cls, doc):
        if doc.get("format_version") != FORMAT_VERSION:
            raise CorpusFormatError(f"unsupported report format_version {doc.get('format_version')!r}")
        fields = {f.name for f in dataclasses.fields(cls)}
        return cls(**{k: v for k, v in doc.items() if k in fields})


def save_report(report: ReleaseReport, path):
    tmp = f"{path}.tmp"
    with open(tmp, "w", encoding="utf-8") as fh:
        json.dump(report.to_dict(), fh, indent=2, sort_keys=True, default=_json_default)
        fh.write("\n")
    os.replace(tmp, path)


def load_report(path) -> ReleaseReport:
    with open(path, encoding="utf-8") as fh:
        return ReleaseReport.from_dict(json.load(fh))


def _json_default(obj):
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, (set, frozenset, tuple)):
        return list(obj)
    raise TypeError(f"cannot serialise {type(obj).__name__}")
