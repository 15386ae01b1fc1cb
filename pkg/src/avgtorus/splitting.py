"""Binomial splitting process: k indistinguishable particles on the torus.

When the clock of edge {x, y} rings, the zeta(x) + zeta(y) particles on
its endpoints are redistributed as (B, n - B) with B ~ Binomial(n, 1/2).
The state space is small enough to be enumerated, and everything here is
exact: the generator, its reversible Multinomial(k, uniform) law, the
worst-case total-variation curve and the spectral gap.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property
from typing import Sequence

import numpy as np
import scipy.sparse as sp
from scipy.special import comb, gammaln

from .diff_kernel import crw_pair_path, return_excess
from .heat import spectral_data
from .simulate import McEstimate, simulate_ensemble
from .torus import TorusSpec
from .uniformization import expm_multiply

STATE_CAP = 20_000
DENSE_CAP = 2_000
START_BLOCK = 256


class StateSpaceTooLarge(ValueError):
    pass


@dataclass(frozen=True)
class StateIndex:
    """Lexicographic (descending) list of occupancy vectors with a reverse lookup."""

    spec: TorusSpec
    k: int
    states: np.ndarray

    @cached_property
    def lookup(self) -> dict[tuple[int, ...], int]:
        return {tuple(int(c) for c in s): i for i, s in enumerate(self.states)}

    def index(self, config: Sequence[int]) -> int:
        return self.lookup[tuple(int(c) for c in config)]

    def __len__(self):
        return len(self.states)


def _compositions(k: int, parts: int):
    if parts == 1:
        yield (k,)
        return
    for first in range(k, -1, -1):
        for rest in _compositions(k - first, parts - 1):
            yield (first,) + rest


def state_count(spec: TorusSpec, k: int) -> int:
    return int(comb(k + spec.n_vertices - 1, k, exact=True))


def enumerate_states(spec: TorusSpec, k: int) -> StateIndex:
    if k < 1:
        raise ValueError("need at least one particle")
    n = state_count(spec, k)
    if n > STATE_CAP:
        raise StateSpaceTooLarge(f"{n} configurations exceed the exact-mode cap {STATE_CAP}")
    states = np.array(list(_compositions(k, spec.n_vertices)), dtype=np.int64)
    states.flags.writeable = False
    return StateIndex(spec, k, states)


def multinomial_pmf(states: np.ndarray, probs) -> np.ndarray:
    """Multinomial(k, probs) mass of each configuration (rows of ``states``).

    ``probs`` may carry leading batch axes: shape (..., V) gives (..., n_states).
    """
    probs = np.asarray(probs, dtype=float)
    k = int(states[0].sum())
    logcoef = gammaln(k + 1) - gammaln(states + 1).sum(axis=-1)
    with np.errstate(divide="ignore", invalid="ignore"):
        logp = np.log(probs)
        # 0 * log 0 = 0
        terms = np.where(states > 0, states * logp[..., None, :], 0.0)
    return np.exp(logcoef + terms.sum(axis=-1))


def uniform_multinomial_pmf(states: np.ndarray) -> np.ndarray:
    """Multinomial(k, uniform) law, each entry a correctly rounded rational."""
    V = states.shape[1]
    k = int(states[0].sum())
    fact = [math.factorial(j) for j in range(k + 1)]
    total = V**k
    return np.array([fact[k] // math.prod(fact[int(c)] for c in s) / total for s in states])


@dataclass(frozen=True)
class SplittingModel:
    spec: TorusSpec
    k: int
    index: StateIndex
    generator: sp.csr_matrix
    stationary: np.ndarray

    @property
    def n_states(self) -> int:
        return len(self.index)

    @property
    def rate(self) -> float:
        return float(self.spec.n_edges)


def build_splitting_generator(spec: TorusSpec, k: int) -> SplittingModel:
    index = enumerate_states(spec, k)
    lookup = index.lookup
    rows, cols, vals = [], [], []
    for i, s in enumerate(index.states):
        for a, b in spec.edges:
            n = int(s[a] + s[b])
            if n == 0:
                continue
            pmf = comb(n, np.arange(n + 1)) / 2.0**n
            for left in range(n + 1):
                if left == s[a]:
                    continue
                new = list(s)
                new[a], new[b] = left, n - left
                rows.append(i)
                cols.append(lookup[tuple(int(c) for c in new)])
                vals.append(pmf[left])
    n = len(index)
    M = sp.coo_matrix((vals, (rows, cols)), shape=(n, n)).tocsr()
    exit_rates = np.asarray(M.sum(axis=1)).ravel()
    Q = (M - sp.diags(exit_rates)).tocsr()
    mu = uniform_multinomial_pmf(index.states)
    return SplittingModel(spec, k, index, Q, mu)


def detailed_balance_error(model: SplittingModel) -> float:
    """max |mu(a)Q(a,b) - mu(b)Q(b,a)|."""
    F = sp.diags(model.stationary) @ model.generator
    return float(abs(F - F.T).max())


# --------------------------------------------------------------------------
# semigroup and total variation


def propagate(model: SplittingModel, dist: np.ndarray, t: float, tol: float = 1e-12) -> np.ndarray:
    """Row distribution(s) pushed through exp(tQ); ``dist`` has shape (n,) or (n, m)."""
    return expm_multiply(model.generator.T.tocsr(), dist, t, tol=tol, rate=model.rate)


def _tv_columns(mu: np.ndarray, D: np.ndarray) -> np.ndarray:
    """TV between mu and each column of D, in its better-conditioned form.

    sum (mu - D)^+ is accurate when the distance is small and 1 - sum min(mu, D)
    when it is close to one (at a Dirac start it returns exactly 1 - mu(a)).
    """
    D = D.reshape(len(mu), -1)
    small = np.maximum(mu[:, None] - D, 0.0).sum(axis=0)
    large = 1.0 - np.minimum(mu[:, None], D).sum(axis=0)
    return np.where(small > 0.5, large, small)


def exact_tv_curve(model: SplittingModel, times: Sequence[float], tol: float = 1e-12,
                   block: int = START_BLOCK) -> np.ndarray:
    """Worst-case TV distance d_k(t): max over Dirac starts of ||delta P_t - mu||_TV."""
    times = np.asarray(times, dtype=float)
    order = np.argsort(times, kind="stable")
    sorted_t = times[order]
    if sorted_t.size and sorted_t[0] < 0:
        raise ValueError("times must be nonnegative")
    n = model.n_states
    QT = model.generator.T.tocsr()
    mu = model.stationary
    worst = np.zeros(len(times))
    for start in range(0, n, block):
        cols = np.arange(start, min(start + block, n))
        D = np.zeros((n, len(cols)))
        D[cols, np.arange(len(cols))] = 1.0
        prev = 0.0
        for j, t in enumerate(sorted_t):
            D = expm_multiply(QT, D, t - prev, tol=tol, rate=model.rate)
            prev = t
            tv = _tv_columns(mu, D)
            worst[j] = max(worst[j], tv.max())
    out = np.empty_like(worst)
    out[order] = worst
    return out


def tv_from(model: SplittingModel, initial: np.ndarray, t: float, tol: float = 1e-12) -> float:
    law = propagate(model, initial, t, tol)
    return float(_tv_columns(model.stationary, law)[0])


@dataclass(frozen=True)
class GapReport:
    gap: float
    expected: float

    @property
    def passed(self) -> bool:
        return abs(self.gap - self.expected) <= 1e-8


def spectral_gap_check(model: SplittingModel) -> GapReport:
    """Smallest nonzero eigenvalue of -Q against 1 - cos(2 pi / N)."""
    if model.n_states > DENSE_CAP:
        raise StateSpaceTooLarge(f"{model.n_states} states exceed the dense eigensolve cap")
    s = np.sqrt(model.stationary)
    Q = model.generator.toarray()
    sym = (s[:, None] * Q) / s[None, :]
    ev = np.sort(np.linalg.eigvalsh(-0.5 * (sym + sym.T)))
    nonzero = ev[ev > 1e-9]
    return GapReport(float(nonzero[0]), spectral_data(model.spec.N).gap)


# --------------------------------------------------------------------------
# intertwining


@dataclass(frozen=True)
class IntertwiningReport:
    exact: np.ndarray
    mc_mean: np.ndarray
    mc_se: np.ndarray
    replicas: int

    @property
    def passed(self) -> bool:
        return bool(np.all(np.abs(self.exact - self.mc_mean) <= 3 * self.mc_se + 1e-12))


def intertwining_check(model: SplittingModel, xi, t: float, replicas: int, seed: int,
                       threads: int = 1) -> IntertwiningReport:
    """Multinomial(k, xi) P_t against E[Multinomial(k, eta_t^xi)]."""
    xi = np.asarray(xi, dtype=float)
    states = model.index.states
    exact = propagate(model, multinomial_pmf(states, xi), t)

    def reduce(profiles):
        return multinomial_pmf(states, profiles)

    vals = simulate_ensemble(xi, [t], replicas, seed, model.spec, reducer=reduce,
                             threads=threads)[:, 0]
    est = [McEstimate.from_samples(vals[:, j]) for j in range(len(states))]
    return IntertwiningReport(exact, np.array([e.mean for e in est]),
                              np.array([e.std_error for e in est]), replicas)


# --------------------------------------------------------------------------
# cutoff


def cutoff_window(k: int, spec: TorusSpec) -> float:
    return max(1.0, math.log(k) / spec.n_vertices)


def cutoff_time(a: float, k: int, spec: TorusSpec) -> float:
    """T(a) = (t_rel / 2)(log k + a w_k); may be negative."""
    t_rel = spectral_data(spec.N).t_rel
    return 0.5 * t_rel * (math.log(k) + a * cutoff_window(k, spec))


def l2_mean_exact(times: Sequence[float], spec: TorusSpec) -> np.ndarray:
    """E||eta_t(0,.)/pi - 1||_2^2 = N^d P(X_t = Y_t) - 1.

    For N >= 4 this is N^d times the spectral return excess of the difference
    walk. N = 3 has no difference walk, so the pair kernel is used there.
    """
    if spec.N >= 4:
        return spec.n_vertices * return_excess(times, spec)
    pairs = crw_pair_path(times, spec)
    diag = np.einsum("tii->t", pairs)
    return spec.n_vertices * diag - 1.0


@dataclass(frozen=True)
class CutoffCurve:
    a: np.ndarray
    times: np.ndarray
    clipped: np.ndarray
    tv: np.ndarray
    l2_bound: np.ndarray


def cutoff_curve(model: SplittingModel, a_grid: Sequence[float]) -> CutoffCurve:
    """d_k(T(a)) and the bound sqrt(e k) * (E||eta/pi - 1||_2^2)^(1/2) at T(a)."""
    a = np.asarray(a_grid, dtype=float)
    raw = np.array([cutoff_time(x, model.k, model.spec) for x in a])
    clipped = raw < 0
    T = np.where(clipped, 0.0, raw)
    tv = exact_tv_curve(model, T)
    order = np.argsort(T, kind="stable")
    l2 = np.empty_like(T)
    l2[order] = l2_mean_exact(T[order], model.spec)
    bound = np.sqrt(math.e * model.k * np.maximum(l2, 0.0))
    return CutoffCurve(a, T, clipped, tv, bound)
