"""Heat flow of the simple random walk on the torus via the cycle spectrum.

Rate convention.  ``kernel_1d`` is the one-dimensional kernel of the walk
that jumps to each neighbour at rate 1 (the difference of two independent
walkers).  The single walker jumps at rate 1/2 per neighbour, so its heat
flow at time t is the tensor product of ``kernel_1d`` at time t/2.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .torus import MassProfile, TorusSpec

NEG_CLAMP = 1e-12


class KernelError(ArithmeticError):
    """A kernel entry came out more negative than rounding can explain."""


@dataclass(frozen=True)
class SpectralData:
    N: int
    eigenvalues: np.ndarray
    gap: float
    t_rel: float


@lru_cache(maxsize=None)
def spectral_data(N: int) -> SpectralData:
    j = np.arange(N)
    lam = 1.0 - np.cos(2 * np.pi * j / N)
    lam[0] = 0.0
    lam.flags.writeable = False
    gap = 1.0 - np.cos(2 * np.pi / N)
    return SpectralData(N, lam, gap, 1.0 / gap)


@lru_cache(maxsize=None)
def _cos_table(N: int) -> np.ndarray:
    i = np.arange(N)
    c = np.cos(2 * np.pi * np.outer(i, i) / N)
    c.flags.writeable = False
    return c


def kernel_1d_vector(t, N: int) -> np.ndarray:
    """p_t(i) for all i in Z/NZ; ``t`` may be an array (extra leading axes)."""
    t = np.asarray(t, dtype=float)
    if np.any(t < 0):
        raise ValueError("time must be nonnegative")
    lam = spectral_data(N).eigenvalues
    decay = np.exp(-2.0 * lam * t[..., None])
    p = decay @ _cos_table(N) / N
    if np.any(t == 0):
        p[t == 0] = np.eye(1, N)[0]
    if np.any(p < -NEG_CLAMP):
        raise KernelError(f"kernel value {p.min():.3e} below clamp threshold")
    return np.maximum(p, 0.0)


def kernel_1d(t: float, i: int, N: int) -> float:
    return float(kernel_1d_vector(t, N)[int(i) % N])


def heat_flow_values(t: float, spec: TorusSpec) -> np.ndarray:
    p = kernel_1d_vector(t / 2.0, spec.N)
    out = p
    for _ in range(spec.d - 1):
        out = np.multiply.outer(out, p)
    return out.reshape(-1)


def heat_flow_profile(t: float, spec: TorusSpec) -> MassProfile:
    """pi_t(0, .): law at time t of the walk started at the origin."""
    v = heat_flow_values(t, spec)
    return MassProfile(spec, v / v.sum())


def g_closed(t, spec: TorusSpec):
    p = kernel_1d_vector(t, spec.N)
    p0, p1 = p[..., 0], p[..., 1]
    return p0 ** (spec.d - 1) * (p0 - p1)


def dirichlet_heat(t, spec: TorusSpec):
    """Dirichlet form of pi_t(0,.)/pi, equal to d N^d g(t)."""
    return spec.d * spec.n_vertices * g_closed(t, spec)


def l2_heat(t, spec: TorusSpec):
    """||pi_t(0,.)/pi - 1||_2^2 = N^d p_t(0)^d - 1."""
    p0 = kernel_1d_vector(t, spec.N)[..., 0]
    return spec.n_vertices * p0**spec.d - 1.0


def xi(t, spec: TorusSpec):
    """Benchmark N^d exp(-2t/t_rel) / ((N^{d+2} min t^{d/2+1}) max 1)."""
    t = np.asarray(t, dtype=float)
    d, N = spec.d, spec.N
    t_rel = spectral_data(N).t_rel
    denom = np.maximum(np.minimum(float(N) ** (d + 2), t ** (d / 2 + 1)), 1.0)
    out = N**d * np.exp(-2.0 * t / t_rel) / denom
    return float(out) if out.ndim == 0 else out
