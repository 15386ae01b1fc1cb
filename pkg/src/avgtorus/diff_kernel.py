"""Difference walk of two coupled walkers, its kernel, and the renewal equation.

The difference Z = X - Y of the coupled walkers is the rate-1 simple random
walk with slow bonds next to the origin.  Its explicit rates are

* from 0: rate 1/2 to each of the 2d unit vectors;
* from a unit vector z: rate 1/2 to 0, rate 1/4 to -z, rate 1 to every
  other neighbour of z;
* elsewhere: rate 1 to each neighbour.

The scalar functions

    g(t) = S0_t(0,0) - S0_t(e,0)       u(t) = S_t(0,0) - S_t(e,0)

are linked by the renewal equation u = g + u * f, with f the closed form
returned by :func:`f_g_closed`.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.sparse as sp
from scipy import integrate

from .heat import KernelError, kernel_1d_vector, spectral_data
from .torus import TorusError, TorusSpec
from .uniformization import expm_multiply

DEFAULT_TOL = 1e-12
DEFAULT_STEP = 1.0 / 64
DEFAULT_HORIZON = 32.0
PAIR_STATE_CAP = 10_000


class RenewalDivergence(ArithmeticError):
    pass


class SeriesCapError(ArithmeticError):
    pass


class StateSpaceTooLarge(ValueError):
    pass


# --------------------------------------------------------------------------
# generators


@dataclass(frozen=True)
class DefectGenerator:
    spec: TorusSpec
    matrix: sp.csr_matrix
    rate: float

    @cached_property
    def dense(self) -> np.ndarray:
        return self.matrix.toarray()


def _assemble(spec: TorusSpec, rates: dict[tuple[int, int], float]) -> sp.csr_matrix:
    V = spec.n_vertices
    rows, cols, vals = [], [], []
    for (x, y), r in rates.items():
        if r != 0.0:
            rows.append(x)
            cols.append(y)
            vals.append(r)
    M = sp.coo_matrix((vals, (rows, cols)), shape=(V, V)).tocsr()
    exit_rates = np.asarray(M.sum(axis=1)).ravel()
    return (M - sp.diags(exit_rates)).tocsr()


def build_free_generator(spec: TorusSpec) -> DefectGenerator:
    """Rate-1 simple random walk, A0 = 2 L^RW."""
    rates: dict[tuple[int, int], float] = {}
    for x in range(spec.n_vertices):
        for y in spec.neighbor_table[x]:
            rates[(x, int(y))] = rates.get((x, int(y)), 0.0) + 1.0
    return DefectGenerator(spec, _assemble(spec, rates), 2.0 * spec.d)


def build_generator(spec: TorusSpec) -> DefectGenerator:
    """Generator A = A0 + R of the difference walk."""
    if spec.N < 4:
        raise TorusError("the difference walk needs N >= 4 (z and -z must not be adjacent)")
    rates: dict[tuple[int, int], float] = {}
    units = {int(y) for y in spec.neighbor_table[0]}
    for x in range(spec.n_vertices):
        if x == 0:
            for y in units:
                rates[(0, y)] = 0.5
            continue
        for y in spec.neighbor_table[x]:
            y = int(y)
            rates[(x, y)] = 0.5 if (x in units and y == 0) else 1.0
        if x in units:
            rates[(x, int(spec.negate(x)))] = 0.25
    return DefectGenerator(spec, _assemble(spec, rates), 2.0 * spec.d)


# --------------------------------------------------------------------------
# kernels


@dataclass(frozen=True)
class KernelVector:
    t: float
    values: np.ndarray


def _check_probability(v: np.ndarray, tol: float) -> np.ndarray:
    if v.min() < -1e-12:
        raise KernelError(f"kernel entry {v.min():.3e} is negative")
    return np.maximum(v, 0.0)


def kernel_vector(gen: DefectGenerator, t: float, tol: float = DEFAULT_TOL) -> KernelVector:
    """Column x -> exp(tA)(x, 0) by uniformization."""
    if not 0 < tol <= 1e-6:
        raise ValueError("tol must lie in (0, 1e-6]")
    start = np.zeros(gen.spec.n_vertices)
    start[0] = 1.0
    v = expm_multiply(gen.matrix, start, t, tol=tol, rate=gen.rate)
    return KernelVector(float(t), _check_probability(v, tol))


def kernel_path(gen: DefectGenerator, n_points: int, step: float,
                tol: float = DEFAULT_TOL, centered: bool = False) -> np.ndarray:
    """(n_points, V) array of exp(t_n A)(., 0) on the grid t_n = n*step.

    Propagates step by step, so truncation errors add up to at most
    ``n_points * tol`` in L^1.  With ``centered`` the rows are
    exp(t_n A)(., 0) - 1/V instead: the propagated vector then has zero mass
    and a shrinking norm, so each step's truncation error shrinks with it and
    late-time values keep their relative accuracy.
    """
    V = gen.spec.n_vertices
    out = np.empty((n_points, V))
    v = np.zeros(V)
    v[0] = 1.0
    if centered:
        v -= 1.0 / V
    out[0] = v
    for n in range(1, n_points):
        v = expm_multiply(gen.matrix, v, step, tol=tol, rate=gen.rate)
        out[n] = v
    return out


SPECTRAL_CAP = 4096


def return_excess(times, spec: TorusSpec) -> np.ndarray:
    """S_t(0,0) - 1/N^d at each of ``times``, free of cancellation.

    A is symmetric, so the excess is sum over nonzero modes of
    exp(-lambda t) phi(0)^2: a sum of positive terms that keeps full relative
    accuracy long after N^d S_t(0,0) - 1 has drowned in rounding.
    """
    V = spec.n_vertices
    if V > SPECTRAL_CAP:
        raise StateSpaceTooLarge(f"{V} states exceed the dense eigensolve cap {SPECTRAL_CAP}")
    lam, phi = np.linalg.eigh(-build_generator(spec).dense)
    weight = phi[0] ** 2
    # drop the constant mode (lambda = 0, weight 1/V)
    keep = np.ones(V, dtype=bool)
    keep[np.argmin(np.abs(lam))] = False
    t = np.asarray(times, dtype=float)
    return np.exp(-np.multiply.outer(t, np.maximum(lam[keep], 0.0))) @ weight[keep]


# --------------------------------------------------------------------------
# sampled functions


@dataclass(frozen=True)
class SampledFunction:
    """Values on the uniform grid t_n = n*step, n = 0..len-1."""

    step: float
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if self.step <= 0:
            raise ValueError("grid step must be positive")
        if not np.all(np.isfinite(v)):
            raise ValueError("sampled values must be finite")
        object.__setattr__(self, "values", v)

    @property
    def times(self) -> np.ndarray:
        return self.step * np.arange(len(self.values))

    @property
    def horizon(self) -> float:
        return self.step * (len(self.values) - 1)

    def __len__(self):
        return len(self.values)

    def at(self, t: float) -> float:
        n = t / self.step
        k = int(round(n))
        if abs(n - k) > 1e-9 or not 0 <= k < len(self.values):
            raise ValueError(f"t={t} is not a grid point")
        return float(self.values[k])

    def same_grid(self, other: "SampledFunction") -> bool:
        return math.isclose(self.step, other.step, rel_tol=1e-12) and len(self) == len(other)


def grid_size(step: float, horizon: float) -> int:
    n = horizon / step
    if abs(n - round(n)) > 1e-9:
        raise ValueError("horizon must be a multiple of the step")
    return int(round(n)) + 1


def unit_index(spec: TorusSpec) -> int:
    return spec.unit_vector(0)


def u_exact(spec: TorusSpec, step: float = DEFAULT_STEP, horizon: float = DEFAULT_HORIZON,
            tol: float = DEFAULT_TOL, gen: DefectGenerator | None = None) -> SampledFunction:
    """u(t) = S_t(0,0) - S_t(e,0) from the exact difference-walk kernel."""
    gen = gen or build_generator(spec)
    path = kernel_path(gen, grid_size(step, horizon), step, tol, centered=True)
    e = unit_index(spec)
    return SampledFunction(step, path[:, 0] - path[:, e])


def f_g_closed(t, spec: TorusSpec):
    """Closed forms of (f(t), g(t)) from the one-dimensional kernel."""
    p = kernel_1d_vector(t, spec.N)
    p0, p1, p2 = p[..., 0], p[..., 1], p[..., 2]
    d = spec.d
    g = p0 ** (d - 1) * (p0 - p1)
    if d == 1:
        f = 1.5 * p0 - 2.0 * p1 + 0.5 * p2
    else:
        f = p0 ** (d - 2) * (d * (p0 - p1) ** 2 + 0.5 * (p0**2 - 2.0 * p1**2 + p0 * p2))
    # both are nonnegative; cancellation leaves ~1e-17 residue at large t
    if np.min(f) < -1e-12 or np.min(g) < -1e-12:
        raise KernelError("f or g came out negative")
    f, g = np.maximum(f, 0.0), np.maximum(g, 0.0)
    if np.ndim(f) == 0:
        return float(f), float(g)
    return f, g


def f_g_sampled(spec: TorusSpec, step: float = DEFAULT_STEP,
                horizon: float = DEFAULT_HORIZON) -> tuple[SampledFunction, SampledFunction]:
    t = step * np.arange(grid_size(step, horizon))
    f, g = f_g_closed(t, spec)
    return SampledFunction(step, f), SampledFunction(step, g)


def g_integral(spec: TorusSpec, horizon: float = 64.0) -> float:
    """int_0^infty g by adaptive quadrature on [0, horizon] plus the exponential tail.

    For t >= T, g(t) <= g(T) exp(-2(t-T)/t_rel), hence the tail g(T) t_rel / 2.
    """
    g = lambda s: f_g_closed(s, spec)[1]
    t_rel = spectral_data(spec.N).t_rel
    body, _ = integrate.quad(g, 0.0, horizon, epsabs=1e-13, epsrel=1e-12, limit=500)
    return body + g(horizon) * t_rel / 2.0


# --------------------------------------------------------------------------
# convolution and the renewal equation


def convolve(a: SampledFunction, b: SampledFunction) -> SampledFunction:
    """(a*b)(t_n) = int_0^{t_n} a(s) b(t_n - s) ds by the trapezoidal rule."""
    if not a.same_grid(b):
        raise ValueError("sampled functions live on different grids")
    x, y = a.values, b.values
    n = len(x)
    full = np.convolve(x, y)[:n]
    full -= 0.5 * (x[0] * y + y[0] * x)
    return SampledFunction(a.step, a.step * full)


def renewal_solve(g: SampledFunction, f: SampledFunction) -> SampledFunction:
    """Solve u = g + int_0^t u(s) f(t-s) ds with the trapezoidal rule."""
    if not g.same_grid(f):
        raise ValueError("g and f live on different grids")
    h = g.step
    gv, fv = g.values, f.values
    if np.any(gv < 0) or np.any(fv < 0):
        raise ValueError("renewal inputs must be nonnegative")
    n = len(gv)
    cap = 10.0 * max(gv.max(), 1e-300) * math.exp(min(fv[0] * g.horizon, 700.0))
    u = np.empty(n)
    u[0] = gv[0]
    denom = 1.0 - 0.5 * h * fv[0]
    if denom <= 0:
        raise RenewalDivergence("grid step too coarse for the kernel size")
    for k in range(1, n):
        # sum_{j=1}^{k-1} u_j f_{k-j}
        inner = np.dot(u[1:k], fv[k - 1:0:-1]) if k > 1 else 0.0
        u[k] = (gv[k] + h * (0.5 * u[0] * fv[k] + inner)) / denom
        if not abs(u[k]) <= cap:
            raise RenewalDivergence(f"renewal solution exceeded {cap:.3g} at t={k * h}")
    return SampledFunction(h, u)


def series_terms(gt: SampledFunction, tol: float = 1e-10, max_terms: int = 5000):
    """Yield g~, g~*g~, g~*g~*g~, ... until sup of the last term < tol."""
    if np.any(gt.values < 0):
        raise ValueError("series input must be nonnegative")
    term = gt
    for k in range(1, max_terms + 1):
        yield k, term
        if np.max(np.abs(term.values)) < tol:
            return
        term = convolve(term, gt)
    raise SeriesCapError(f"convolution powers still above {tol} after {max_terms} terms")


def series_sum(gt: SampledFunction, K: int | None = None, tol: float = 1e-10,
               max_terms: int = 5000) -> SampledFunction:
    """Partial sum sum_{k=1}^K gt^{*k}; with K=None run until the tail test passes."""
    acc = np.zeros(len(gt))
    for k, term in series_terms(gt, tol, max_terms if K is None else K):
        acc = acc + term.values
        if K is not None and k == K:
            break
    return SampledFunction(gt.step, acc)


def u_tilde(spec: TorusSpec, step: float = DEFAULT_STEP, horizon: float = DEFAULT_HORIZON,
            tol: float = 1e-10) -> SampledFunction:
    """Series majorant sum_k ((d+1/2) g)^{*k}."""
    _, g = f_g_sampled(spec, step, horizon)
    return series_sum(SampledFunction(step, (spec.d + 0.5) * g.values), tol=tol)


# --------------------------------------------------------------------------
# coupled random walks


def build_crw_generator(spec: TorusSpec) -> sp.csr_matrix:
    """Generator of the labelled pair (X, Y) on V*V states, state index X*V + Y."""
    V = spec.n_vertices
    if V * V > PAIR_STATE_CAP:
        raise StateSpaceTooLarge(f"{V * V} pair states exceed the exact-mode cap {PAIR_STATE_CAP}")
    incident: list[list[tuple[int, int]]] = [[] for _ in range(V)]
    for a, b in spec.edges:
        incident[a].append((int(a), int(b)))
        incident[b].append((int(a), int(b)))
    rows, cols, vals = [], [], []
    for X in range(V):
        for Y in range(V):
            s = X * V + Y
            touched = set(incident[X]) | set(incident[Y])
            for a, b in touched:
                other = {a: b, b: a}
                xs = [X, other[X]] if X in other else [X]
                ys = [Y, other[Y]] if Y in other else [Y]
                w = 1.0 / (len(xs) * len(ys))
                for x2 in xs:
                    for y2 in ys:
                        if (x2, y2) != (X, Y):
                            rows.append(s)
                            cols.append(x2 * V + y2)
                            vals.append(w)
    M = sp.coo_matrix((vals, (rows, cols)), shape=(V * V, V * V)).tocsr()
    exit_rates = np.asarray(M.sum(axis=1)).ravel()
    return (M - sp.diags(exit_rates)).tocsr()


def crw_pair_kernel(t: float, spec: TorusSpec, tol: float = DEFAULT_TOL,
                    Q: sp.csr_matrix | None = None) -> np.ndarray:
    """(V, V) matrix of P_{0,0}(X_t = x, Y_t = y)."""
    Q = build_crw_generator(spec) if Q is None else Q
    V = spec.n_vertices
    start = np.zeros(V * V)
    start[0] = 1.0
    # row vector start @ exp(tQ) = exp(tQ^T) start
    v = expm_multiply(Q.T.tocsr(), start, t, tol=tol, rate=2.0 * spec.d)
    return _check_probability(v, tol).reshape(V, V)


def crw_pair_path(times, spec: TorusSpec, tol: float = DEFAULT_TOL,
                  Q: sp.csr_matrix | None = None) -> np.ndarray:
    """Pair kernels at increasing ``times``; shape (len(times), V, V)."""
    Q = build_crw_generator(spec) if Q is None else Q
    QT = Q.T.tocsr()
    V = spec.n_vertices
    v = np.zeros(V * V)
    v[0] = 1.0
    out = np.empty((len(times), V, V))
    prev = 0.0
    for i, t in enumerate(times):
        if t < prev:
            raise ValueError("times must be nondecreasing")
        v = expm_multiply(QT, v, t - prev, tol=tol, rate=2.0 * spec.d)
        prev = t
        out[i] = _check_probability(v, tol).reshape(V, V)
    return out


def difference_law(pair: np.ndarray, spec: TorusSpec) -> np.ndarray:
    """Law of X - Y from a pair kernel."""
    V = spec.n_vertices
    X, Y = np.meshgrid(np.arange(V), np.arange(V), indexing="ij")
    z = spec.sub(X.ravel(), Y.ravel())
    return np.bincount(z, weights=pair.ravel(), minlength=V)
