"""Exact Binomial and tail-conditioned Gaussian draws."""

import math

import numpy as np

from dpunion._normal import norm_isf, norm_sf

_INVERSION_LIMIT = 30.0


_SCALAR_LOOP_MAX = 64


def _inversion_scalar(u, n, p):
    out = np.empty(len(n), dtype=np.int64)
    for i, (ui, ni, pi) in enumerate(zip(u.tolist(), n.tolist(), p.tolist())):
        pmf = math.exp(ni * math.log1p(-pi))
        cdf, x, ratio = pmf, 0, pi / (1.0 - pi)
        while ui > cdf and x < ni and pmf > 0:
            pmf *= (ni - x) / (x + 1.0) * ratio
            x += 1
            cdf += pmf
        out[i] = x
    return out


def _binomial_inversion(rng, n, p):
    # Sequential search on the CDF. P[X=0] = exp(n*log1p(-p)) keeps its
    # precision for p far below machine epsilon, where 1 - p would round to 1.
    u = rng.random(n.shape)
    if n.size <= _SCALAR_LOOP_MAX:
        return _inversion_scalar(u, n, p)
    pmf = np.exp(n * np.log1p(-p))
    cdf = pmf.copy()
    ratio = p / (1.0 - p)
    x = np.zeros(n.shape, dtype=np.int64)
    active = (u > cdf) & (x < n)
    while active.any():
        idx = np.flatnonzero(active)
        pmf[idx] *= (n[idx] - x[idx]) / (x[idx] + 1.0) * ratio[idx]
        x[idx] += 1
        cdf[idx] += pmf[idx]
        # Float round-off can leave u above a CDF that should be 1. Stopping
        # once the pmf underflows has probability below 2**-53.
        active[idx] = (u[idx] > cdf[idx]) & (x[idx] < n[idx]) & (pmf[idx] > 0)
    return x


class BinomialSampler:
    """Exact ``Binomial(n, p)`` draws for fixed arrays ``n`` and ``p``, set up once.

    Uses inversion when ``n * p <= 30`` and numpy's BTPE rejection sampler
    otherwise. Both are exact: neither uses a normal approximation.
    ``p > 1/2`` is drawn as ``n - Binomial(n, 1 - p)``.
    """

    def __init__(self, n, p):
        n_arr = np.asarray(n, dtype=np.int64)
        p_arr = np.asarray(p, dtype=float)
        if n_arr.shape != p_arr.shape:
            n_arr, p_arr = np.broadcast_arrays(n_arr, p_arr)
        if n_arr.size and (n_arr.min() < 0 or not 0 <= p_arr.min() <= p_arr.max() <= 1):
            raise ValueError("need n >= 0 and 0 <= p <= 1")
        self.shape = n_arr.shape
        self.n = n_arr.ravel()
        flip = p_arr.ravel() > 0.5
        q = np.where(flip, 1.0 - p_arr.ravel(), p_arr.ravel())
        nq = self.n * q
        self.small = np.flatnonzero((nq <= _INVERSION_LIMIT) & (nq > 0))
        self.large = np.flatnonzero(nq > _INVERSION_LIMIT)
        self.n_small, self.q_small = self.n[self.small], q[self.small]
        self.n_large, self.q_large = self.n[self.large], q[self.large]
        self.flip = np.flatnonzero(flip)

    def __call__(self, rng):
        out = np.zeros(self.n.size, dtype=np.int64)
        if self.small.size:
            out[self.small] = _binomial_inversion(rng, self.n_small, self.q_small)
        if self.large.size:
            out[self.large] = rng.binomial(self.n_large, self.q_large)
        if self.flip.size:
            out[self.flip] = self.n[self.flip] - out[self.flip]
        return out.reshape(self.shape)


def sample_binomial(rng, n, p):
    """Draws ``Binomial(n, p)`` exactly, elementwise over broadcast ``n`` and ``p``."""
    out = BinomialSampler(n, p)(rng)
    return out if out.ndim else int(out)


def sample_tail_normal(rng, lower, sigma, size=None):
    """Draws ``Z ~ N(0, sigma^2)`` conditioned on ``Z > lower``, by inverse CDF on the upper tail."""
    a = np.asarray(lower, dtype=float) / sigma
    u = 1.0 - rng.random(size if size is not None else a.shape)  # in (0, 1]
    return sigma * norm_isf(u * norm_sf(a))
