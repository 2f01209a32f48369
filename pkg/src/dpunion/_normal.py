"""Standard normal CDF/quantile helpers that stay accurate deep in the tails."""

import numpy as np
from scipy import special

norm_cdf = special.ndtr
log_norm_cdf = special.log_ndtr


def norm_sf(x):
    """Upper tail 1 - Φ(x), evaluated as Φ(-x) so small values keep full precision."""
    return special.ndtr(np.negative(x))


def norm_ppf(p):
    return special.ndtri(p)


def norm_isf(q):
    """Φ⁻¹(1 - q) without forming 1 - q."""
    return -special.ndtri(q)


def one_minus_root(delta, t):
    """Returns 1 - (1 - delta)**(1/t), computed without cancellation."""
    return -np.expm1(np.log1p(-np.asarray(delta, dtype=float)) / t)
