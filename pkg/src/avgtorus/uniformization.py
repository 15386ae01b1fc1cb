"""Matrix exponentials of sparse generators by uniformization.

    exp(tQ) = sum_m Poisson(rate*t)(m) * P^m,   P = I + Q/rate

The series is truncated once the remaining Poisson tail mass drops below
``tol``; because P is stochastic this bounds the L^1 error of every
column (or row) being propagated.
"""
from __future__ import annotations

import numpy as np
import scipy.sparse as sp
from scipy.stats import poisson

MAX_TERMS = 200_000


class TruncationError(RuntimeError):
    """The Poisson series needs more terms than the hard cap allows."""


def uniformization_rate(Q) -> float:
    diag = np.asarray(Q.diagonal() if sp.issparse(Q) else np.diag(Q))
    return float(np.max(-diag)) if diag.size else 0.0


def poisson_weights(mean: float, tol: float, max_terms: int = MAX_TERMS) -> np.ndarray:
    """Poisson(mean) weights up to the first index whose tail is below tol."""
    if mean == 0.0:
        return np.ones(1)
    # generous upper guess, then cut at the tolerance
    guess = int(mean + 12.0 * np.sqrt(mean) + 40.0 - np.log10(tol) * 2)
    n_terms = min(guess, max_terms)
    tail = poisson.sf(np.arange(n_terms), mean)
    hits = np.nonzero(tail < tol)[0]
    if hits.size == 0:
        raise TruncationError(
            f"rate*t = {mean:.3g} needs more than {max_terms} uniformization terms"
        )
    m = int(hits[0])
    return poisson.pmf(np.arange(m + 1), mean)


def expm_multiply(Q, V, t: float, tol: float = 1e-12, rate: float | None = None,
                  max_terms: int = MAX_TERMS) -> np.ndarray:
    """Return exp(tQ) @ V for a generator Q (rows summing to zero).

    Parameters
    ----------
    Q : sparse or dense (n, n) generator
    V : (n,) or (n, k) array
    t : nonnegative time
    tol : Poisson tail cut-off
    rate : uniformization constant, defaults to the largest exit rate
    """
    if t < 0:
        raise ValueError("time must be nonnegative")
    V = np.asarray(V, dtype=float)
    if t == 0.0:
        return V.copy()
    if rate is None:
        rate = uniformization_rate(Q)
    if rate <= 0.0:
        return V.copy()
    w = poisson_weights(rate * t, tol, max_terms)
    n = Q.shape[0]
    P = sp.identity(n, format="csr") + sp.csr_matrix(Q) / rate
    term = V
    acc = w[0] * term
    for m in range(1, len(w)):
        term = P @ term
        acc = acc + w[m] * term
    return acc
