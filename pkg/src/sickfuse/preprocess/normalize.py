"""Feature standardization."""

import numpy as np

from ..errors import EmptyError, ZeroVariance


def zscore_normalize(column):
    """Standardize a sequence to mean 0 / population std 1.

    Returns (normalized, (mu, sigma)); the returned statistics are meant to
    be stored and re-applied to held-out data from the same source.
    """
    x = np.asarray(column, dtype=np.float64)
    if x.size == 0:
        raise EmptyError("cannot normalize an empty sequence")
    mu = float(x.mean())
    sigma = float(x.std())  # population (ddof=0)
    if sigma == 0.0:
        raise ZeroVariance(f"constant sequence (value {mu}) cannot be standardized")
    return (x - mu) / sigma, (mu, sigma)


def apply_zscore(values, mu, sigma):
    return (np.asarray(values, dtype=np.float64) - mu) / sigma
