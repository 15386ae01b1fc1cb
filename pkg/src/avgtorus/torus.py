"""Geometry of the discrete torus (Z/NZ)^d.

Vertices are stored by a flat row-major index; every other module in the
package relies on the same bijection.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Sequence

import numpy as np


class TorusError(ValueError):
    pass


@dataclass(frozen=True)
class TorusSpec:
    """Dimension ``d`` and side length ``N`` of the torus."""

    d: int
    N: int

    def __post_init__(self):
        if int(self.d) != self.d or self.d < 1:
            raise TorusError(f"dimension must be a positive integer, got d={self.d}")
        if int(self.N) != self.N or self.N < 3:
            raise TorusError(f"side length must be an integer >= 3, got N={self.N}")

    @property
    def n_vertices(self) -> int:
        return self.N**self.d

    @property
    def n_edges(self) -> int:
        return self.d * self.N**self.d

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.N,) * self.d

    @cached_property
    def coords(self) -> np.ndarray:
        """(V, d) array of coordinates in canonical order."""
        grids = np.indices(self.shape).reshape(self.d, -1)
        return grids.T.copy()

    @cached_property
    def edges(self) -> np.ndarray:
        """(E, 2) array listing every unordered nearest-neighbour pair once.

        Edge ``x*d + l`` joins ``x`` to ``x + e_l``.
        """
        V = self.n_vertices
        out = np.empty((V * self.d, 2), dtype=np.int64)
        base = np.arange(V)
        for ell in range(self.d):
            out[ell :: self.d, 0] = base
            out[ell :: self.d, 1] = self.shift(base, ell, +1)
        out.flags.writeable = False
        return out

    @cached_property
    def neighbor_table(self) -> np.ndarray:
        """(V, 2d) array; column ``2l`` is ``x+e_l`` and ``2l+1`` is ``x-e_l``."""
        V = self.n_vertices
        base = np.arange(V)
        cols = []
        for ell in range(self.d):
            cols.append(self.shift(base, ell, +1))
            cols.append(self.shift(base, ell, -1))
        out = np.stack(cols, axis=1)
        out.flags.writeable = False
        return out

    def shift(self, index, axis: int, step: int):
        """Translate flat indices by ``step`` along coordinate ``axis``."""
        index = np.asarray(index)
        stride = self.N ** (self.d - 1 - axis)
        digit = (index // stride) % self.N
        return index + (((digit + step) % self.N) - digit) * stride

    def unit_vector(self, axis: int = 0) -> int:
        return canonical_index(tuple(1 if ell == axis else 0 for ell in range(self.d)), self)

    def negate(self, index):
        """Flat index of ``-x``."""
        c = self.coords[np.asarray(index)]
        return _flat((-c) % self.N, self)

    def add(self, a, b):
        """Flat index of ``x + y``."""
        c = self.coords[np.asarray(a)] + self.coords[np.asarray(b)]
        return _flat(c % self.N, self)

    def sub(self, a, b):
        c = self.coords[np.asarray(a)] - self.coords[np.asarray(b)]
        return _flat(c % self.N, self)

    def norm1(self, index):
        """Graph distance from the origin."""
        c = self.coords[np.asarray(index)]
        return np.minimum(c, self.N - c).sum(axis=-1)


def _flat(coords: np.ndarray, spec: TorusSpec):
    weights = spec.N ** np.arange(spec.d - 1, -1, -1)
    return (coords * weights).sum(axis=-1)


def canonical_index(coords: Sequence[int], spec: TorusSpec) -> int:
    """Row-major flat index of ``coords`` (wrapped mod N)."""
    coords = tuple(coords)
    if len(coords) != spec.d:
        raise TorusError(f"expected {spec.d} coordinates, got {len(coords)}")
    flat = 0
    for c in coords:
        flat = flat * spec.N + (int(c) % spec.N)
    return flat


def coords_of(index: int, spec: TorusSpec) -> tuple[int, ...]:
    _check_index(index, spec)
    out = []
    for _ in range(spec.d):
        index, r = divmod(int(index), spec.N)
        out.append(r)
    return tuple(reversed(out))


def _check_index(index: int, spec: TorusSpec):
    if not 0 <= int(index) < spec.n_vertices:
        raise TorusError(f"vertex index {index} outside [0, {spec.n_vertices})")


def neighbors(v: int, spec: TorusSpec) -> frozenset[int]:
    _check_index(v, spec)
    return frozenset(int(y) for y in spec.neighbor_table[v])


def are_adjacent(x: int, y: int, spec: TorusSpec) -> bool:
    return int(y) in neighbors(x, spec)


@dataclass(frozen=True)
class MassProfile:
    """A probability mass function over the torus vertices."""

    spec: TorusSpec
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        if v.shape != (self.spec.n_vertices,):
            raise TorusError(f"profile has shape {v.shape}, expected ({self.spec.n_vertices},)")
        if np.any(v < 0) or np.any(v > 1 + 1e-12):
            raise TorusError("profile entries must lie in [0, 1]")
        if abs(v.sum() - 1.0) > 1e-9:
            raise TorusError(f"profile sums to {v.sum()!r}, not 1")
        v.flags.writeable = False
        object.__setattr__(self, "values", v)

    def __array__(self, dtype=None, copy=None):
        return self.values if dtype is None else self.values.astype(dtype)

    @classmethod
    def dirac(cls, spec: TorusSpec, x: int = 0) -> "MassProfile":
        v = np.zeros(spec.n_vertices)
        v[x] = 1.0
        return cls(spec, v)

    @classmethod
    def uniform(cls, spec: TorusSpec) -> "MassProfile":
        return cls(spec, np.full(spec.n_vertices, 1.0 / spec.n_vertices))


def lp_distance(eta, rho, p: float, spec: TorusSpec) -> float:
    """L^p(pi) distance between the densities eta/pi and rho/pi, pi uniform."""
    if not 1 <= p <= 2:
        raise TorusError(f"p must lie in [1, 2], got {p}")
    for prof in (eta, rho):
        if isinstance(prof, MassProfile) and prof.spec != spec:
            raise TorusError("profile defined on a different torus")
    a = np.asarray(eta, dtype=float)
    b = np.asarray(rho, dtype=float)
    if a.shape != (spec.n_vertices,) or b.shape != a.shape:
        raise TorusError("profile length does not match the torus")
    V = spec.n_vertices
    return float(np.mean(np.abs(V * (a - b)) ** p) ** (1.0 / p))


def dirichlet_form(psi, spec: TorusSpec) -> float:
    """(1/4N^d) sum over ordered neighbour pairs of (psi(x)-psi(y))^2."""
    psi = np.asarray(psi, dtype=float)
    if psi.shape[-1] != spec.n_vertices:
        raise TorusError("function length does not match the torus")
    return dirichlet_form_batch(psi, spec) if psi.ndim > 1 else float(dirichlet_form_batch(psi, spec))


def dirichlet_form_batch(psi: np.ndarray, spec: TorusSpec) -> np.ndarray:
    """Vectorised Dirichlet form over the last axis."""
    e = spec.edges
    diff = psi[..., e[:, 0]] - psi[..., e[:, 1]]
    # each unordered edge appears twice in the ordered double sum
    return (diff * diff).sum(axis=-1) / (2.0 * spec.n_vertices)


def iter_edges(spec: TorusSpec) -> Iterable[tuple[int, int]]:
    for a, b in spec.edges:
        yield int(a), int(b)
