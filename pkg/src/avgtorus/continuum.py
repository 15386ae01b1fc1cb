"""Heat kernel of (1/2)Laplacian on the continuum torus [0,1)^d and diffusive-scale comparisons.

Per coordinate the kernel is evaluated either by its Fourier series

    1 + 2 sum_k exp(-2 pi^2 k^2 t) cos(2 pi k u)

or, for small t, by the periodised Gaussian sum_m (2 pi t)^(-1/2) exp(-(u+m)^2/2t).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .diff_kernel import build_generator, kernel_vector
from .heat import heat_flow_values, l2_heat
from .simulate import InsufficientReplicas, McEstimate, simulate_ensemble
from .torus import TorusSpec

CROSSOVER = 1.0 / (2.0 * np.pi)
TAIL = 1e-12
POINTS_PER_AXIS = {1: 2**16, 2: 2**10}


class QuadratureError(ArithmeticError):
    pass


def _fourier_terms(t: float) -> int:
    # exp(-2 pi^2 k^2 t) < TAIL
    return int(math.ceil(math.sqrt(-math.log(TAIL) / (2 * math.pi**2 * t)))) + 1


def _image_terms(t: float) -> int:
    # exp(-(m-1)^2 / 2t) < TAIL for |m| > M
    return int(math.ceil(math.sqrt(-2 * t * math.log(TAIL)))) + 2


def heat_factor_fourier(t: float, u) -> np.ndarray:
    u = np.asarray(u, dtype=float)
    k = np.arange(1, _fourier_terms(t) + 1)
    w = np.exp(-2 * np.pi**2 * k**2 * t)
    return 1.0 + 2.0 * np.cos(2 * np.pi * np.multiply.outer(u, k)) @ w


def heat_factor_images(t: float, u) -> np.ndarray:
    u = np.asarray(u, dtype=float)
    u = u - np.floor(u)
    M = _image_terms(t)
    m = np.arange(-M, M + 1)
    z = np.add.outer(u, m)
    return np.exp(-z**2 / (2 * t)).sum(axis=-1) / math.sqrt(2 * np.pi * t)


def heat_factor(t: float, u) -> np.ndarray:
    if t <= 0:
        raise ValueError("continuum heat kernel needs t > 0")
    return heat_factor_fourier(t, u) if t >= CROSSOVER else heat_factor_images(t, u)


def heat_kernel_continuum(t: float, u) -> np.ndarray | float:
    """h_t(0, u) for points ``u`` with shape (..., d) or scalars (d = 1)."""
    u = np.asarray(u, dtype=float)
    if u.ndim == 0:
        return float(heat_factor(t, u))
    if u.ndim == 1:
        u = u[:, None]
    out = heat_factor(t, u[..., 0])
    for ell in range(1, u.shape[-1]):
        out = out * heat_factor(t, u[..., ell])
    return out


def _midpoints(M: int) -> np.ndarray:
    return (np.arange(M) + 0.5) / M


def _lp_on_grid(t: float, p: float, d: int, M: int) -> float:
    f = heat_factor(t, _midpoints(M))
    h = f
    for _ in range(d - 1):
        h = np.multiply.outer(h, f)
    return float(np.mean(np.abs(h - 1.0) ** p) ** (1.0 / p))


def lp_norm_continuum(t: float, p: float, d: int, points: int | None = None,
                      check: float = 1e-6) -> float:
    """||h_t(0,.) - 1||_{L^p([0,1)^d)} by midpoint quadrature on a tensor grid.

    The grid is halved once; a change larger than ``check`` raises.
    """
    if not 1 <= p <= 2:
        raise ValueError("p must lie in [1, 2]")
    M = points or POINTS_PER_AXIS.get(d, 2**5)
    fine = _lp_on_grid(t, p, d, M)
    coarse = _lp_on_grid(t, p, d, M // 2)
    if abs(fine - coarse) > check:
        raise QuadratureError(f"quadrature changed by {abs(fine - coarse):.2e} on halving")
    return fine


def l2_parseval(t: float, d: int) -> float:
    """||h_t - 1||_2 from the Fourier coefficients."""
    k = np.arange(1, _fourier_terms(t / 2) + 1)
    s = 1.0 + 2.0 * np.exp(-4 * np.pi**2 * k**2 * t).sum()
    return math.sqrt(s**d - 1.0)


def discrete_lp(t: float, p: float, spec: TorusSpec) -> float:
    """||pi_t(0,.)/pi - 1||_p on the discrete torus."""
    dens = spec.n_vertices * heat_flow_values(t, spec)
    return float(np.mean(np.abs(dens - 1.0) ** p) ** (1.0 / p))


def lattice_lclt_error(t: float, spec: TorusSpec) -> float:
    """max_x |N^d pi_{tN^2}(0,x) - h_t(x/N)|."""
    dens = spec.n_vertices * heat_flow_values(t * spec.N**2, spec)
    h = heat_kernel_continuum(t, spec.coords / spec.N)
    return float(np.max(np.abs(dens - h)))


# --------------------------------------------------------------------------
# limit profile


@dataclass(frozen=True)
class ProfileRow:
    N: int
    t: float
    p: float
    discrete_value: float
    continuum_value: float
    std_error: float
    fluctuation_l2: float = field(default=float("nan"))

    @property
    def discrepancy(self) -> float:
        return abs(self.discrete_value - self.continuum_value)

    @property
    def discrepancy_times_N(self) -> float:
        return self.N * self.discrepancy


PROFILE_COLUMNS = ("N", "t", "p", "discrete_value", "continuum_value", "discrepancy",
                   "discrepancy_times_N", "std_error")


def fluctuation_exact(t: float, spec: TorusSpec) -> float:
    """E||eta_t/pi - pi_t/pi||_2^2 = N^d S_t(0,0) - N^d p_t(0)^d."""
    S00 = kernel_vector(build_generator(spec), t).values[0]
    return spec.n_vertices * S00 - 1.0 - float(l2_heat(t, spec))


def limit_profile_compare(Ns: Sequence[int], times: Sequence[float], p: float, d: int = 1,
                          replicas: int = 0, seed: int = 0, threads: int = 1) -> list[ProfileRow]:
    """Compare the discrete L^p distance at time t N^2 with ||h_t - 1||_p.

    With ``replicas == 0`` the discrete side is the heat flow only; otherwise
    E||eta/pi - 1||_p^p is estimated by simulation and its 1/p-th power is
    reported with a delta-method standard error.
    """
    for t in times:
        if t <= 0:
            raise ValueError("diffusive times must be positive")
    rows = []
    for N in Ns:
        spec = TorusSpec(d, N)
        for t in times:
            cont = lp_norm_continuum(t, p, d)
            fl = fluctuation_exact(t * N * N, spec) if N >= 4 else float("nan")
            if replicas:
                V = spec.n_vertices

                def reduce(states):
                    return np.mean(np.abs(V * states - 1.0) ** p, axis=-1)[..., None]

                vals = simulate_ensemble(np.eye(1, V)[0], [t * N * N], replicas, seed, spec,
                                         reducer=reduce, threads=threads)[:, 0, 0]
                est = McEstimate.from_samples(vals)
                disc = est.mean ** (1.0 / p)
                se = est.std_error * disc / (p * est.mean)
                if se > 1.0 / N:
                    raise InsufficientReplicas(f"standard error {se:.3g} exceeds the 1/N scale at N={N}")
            else:
                disc, se = discrete_lp(t * N * N, p, spec), 0.0
            rows.append(ProfileRow(N, float(t), float(p), disc, cont, se, fl))
    return rows


# --------------------------------------------------------------------------
# hydrodynamic limit


def evolve_density(g: Callable[[np.ndarray], np.ndarray], t: float, M: int = 2**10) -> np.ndarray:
    """h_t^g on the 1-d midpoint grid, by direct periodic convolution with h_t."""
    u = _midpoints(M)
    kern = heat_factor(t, (u[:, None] - u[None, :]) % 1.0)
    return kern @ g(u) / M


@dataclass(frozen=True)
class HydroRow:
    N: int
    t: float
    estimate: McEstimate
    initial_error: float
    continuum_value: float

    @property
    def lhs_times_N(self) -> float:
        return self.N * self.estimate.mean


def discretize_density(g: Callable[[np.ndarray], np.ndarray], spec: TorusSpec) -> np.ndarray:
    """xi(x) proportional to g(x/N), normalised to a probability vector."""
    if spec.d != 1:
        raise ValueError("hydrodynamic check implemented for d = 1")
    w = np.asarray(g(np.arange(spec.N) / spec.N), dtype=float)
    if np.any(w < 0):
        raise ValueError("density must be nonnegative")
    return w / w.sum()


def hydrodynamic_check(g: Callable, psi: Callable, Ns: Sequence[int], times: Sequence[float],
                       replicas: int, seed: int, threads: int = 1,
                       M: int = 2**10) -> list[HydroRow]:
    """E| sum_x eta_{tN^2}(x) psi(x/N) - int h_t^g psi | for d = 1."""
    u = _midpoints(M)
    rows = []
    for N in Ns:
        spec = TorusSpec(1, N)
        xi = discretize_density(g, spec)
        x = np.arange(N) / N
        init_err = float(np.mean(np.abs(N * xi - g(x))))
        psi_x = np.asarray(psi(x), dtype=float)
        for t in times:
            target = float(np.mean(evolve_density(g, t, M) * psi(u)))

            def reduce(states, psi_x=psi_x, target=target):
                return np.abs(states @ psi_x - target)[..., None]

            vals = simulate_ensemble(xi, [t * N * N], replicas, seed, spec, reducer=reduce,
                                     threads=threads)[:, 0, 0]
            rows.append(HydroRow(N, float(t), McEstimate.from_samples(vals), init_err, target))
    return rows
