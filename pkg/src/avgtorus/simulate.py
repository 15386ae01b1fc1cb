"""Monte Carlo simulation of the averaging process.

Every edge carries a rate-1 Poisson clock; when it rings, the two endpoint
masses are replaced by their mean.  The state at a fixed time only depends
on the ordered list of updated edges, so ensemble runs draw per-interval
Poisson counts and uniform edge labels, then apply the updates to a block
of replicas in lock-step.

Replica ``r`` always draws from the stream ``SeedSequence(seed,
spawn_key=(r,))``, so results do not depend on blocking or threading.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .heat import heat_flow_values
from .torus import (MassProfile, TorusError, TorusSpec, are_adjacent, dirichlet_form_batch)

MAX_EVENTS = 10**8
BLOCK_SIZE = 1024


class InsufficientReplicas(RuntimeError):
    """Monte Carlo error bar too wide for the comparison being asked for."""


class SimulationError(RuntimeError):
    pass


@dataclass(frozen=True)
class UpdateEvent:
    time: float
    edge: tuple[int, int]


@dataclass(frozen=True)
class McEstimate:
    mean: float
    std_error: float
    replicas: int

    @classmethod
    def from_samples(cls, x) -> "McEstimate":
        x = np.asarray(x, dtype=float).ravel()
        n = x.size
        if n < 2:
            raise ValueError("need at least two replicas for a standard error")
        mean = math.fsum(x) / n
        var = math.fsum((x - mean) ** 2) / (n - 1)
        return cls(mean, math.sqrt(var / n), n)

    def agrees(self, value: float, nsigma: float = 3.0, atol: float = 1e-12) -> bool:
        return abs(self.mean - value) <= nsigma * self.std_error + atol


def replica_rng(seed: int, replica: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(replica,))))


def apply_update(eta, edge: Sequence[int], spec: TorusSpec | None = None) -> np.ndarray:
    """Return a copy of ``eta`` with both endpoints of ``edge`` set to their mean."""
    x, y = int(edge[0]), int(edge[1])
    if spec is not None and not are_adjacent(x, y, spec):
        raise TorusError(f"{x} and {y} are not nearest neighbours")
    out = np.array(eta, dtype=float)
    out[x] = out[y] = 0.5 * (out[x] + out[y])
    return out


def dirichlet_after_update(psi: np.ndarray, energy: float, edge: Sequence[int],
                           spec: TorusSpec) -> tuple[np.ndarray, float]:
    """Average ``psi`` across ``edge`` and update its Dirichlet form locally."""
    x, y = int(edge[0]), int(edge[1])
    nb = spec.neighbor_table
    pairs = [(x, int(z)) for z in nb[x]] + [(y, int(z)) for z in nb[y] if int(z) != x]

    def local(v):
        return sum((v[a] - v[b]) ** 2 for a, b in pairs)

    before = local(psi)
    new = apply_update(psi, (x, y))
    return new, energy + (local(new) - before) / (2.0 * spec.n_vertices)


def simulate(xi, t: float, rng: np.random.Generator, spec: TorusSpec,
             record: bool = False):
    """One trajectory of the averaging process started from ``xi`` up to time ``t``.

    Returns the final profile, plus the list of updates if ``record``.
    """
    if t < 0:
        raise ValueError("time must be nonnegative")
    eta = np.array(xi, dtype=float)
    edges = spec.edges
    total_rate = float(spec.n_edges)
    events: list[UpdateEvent] = []
    now = 0.0
    n = 0
    while True:
        now += rng.exponential(1.0 / total_rate)
        if now > t:
            break
        n += 1
        if n > MAX_EVENTS:
            raise SimulationError(f"more than {MAX_EVENTS} updates requested")
        a, b = edges[rng.integers(spec.n_edges)]
        eta[a] = eta[b] = 0.5 * (eta[a] + eta[b])
        if record:
            events.append(UpdateEvent(now, (int(a), int(b))))
    profile = MassProfile(spec, eta)
    return (profile, events) if record else profile


def replay(xi, events: Sequence[UpdateEvent], spec: TorusSpec) -> np.ndarray:
    eta = np.array(xi, dtype=float)
    for ev in events:
        a, b = ev.edge
        if not are_adjacent(a, b, spec):
            raise TorusError(f"event edge {ev.edge} is not an edge of the torus")
        eta[a] = eta[b] = 0.5 * (eta[a] + eta[b])
    return eta


# --------------------------------------------------------------------------
# ensembles


def _draw_updates(seed: int, replica: int, dts: np.ndarray, n_edges: int):
    rng = replica_rng(seed, replica)
    counts = rng.poisson(n_edges * dts)
    total = int(counts.sum())
    if total > MAX_EVENTS:
        raise SimulationError(f"replica {replica} requested {total} updates")
    labels = rng.integers(0, n_edges, size=total)
    return counts, labels


def _run_block(xi: np.ndarray, dts: np.ndarray, spec: TorusSpec, seed: int,
               replicas: range) -> np.ndarray:
    B, T = len(replicas), len(dts)
    draws = [_draw_updates(seed, r, dts, spec.n_edges) for r in replicas]
    counts = np.array([c for c, _ in draws]).reshape(B, T)
    offsets = np.concatenate([np.zeros((B, 1), int), np.cumsum(counts, axis=1)], axis=1)
    ea, eb = spec.edges[:, 0], spec.edges[:, 1]
    state = np.tile(xi, (B, 1))
    out = np.empty((B, T, len(xi)))
    for i in range(T):
        M = int(counts[:, i].max()) if B else 0
        pad = np.full((B, M), -1, dtype=np.int64)
        for b, (_, labels) in enumerate(draws):
            seg = labels[offsets[b, i]:offsets[b, i + 1]]
            pad[b, :len(seg)] = seg
        for m in range(M):
            col = pad[:, m]
            rows = np.nonzero(col >= 0)[0]
            lab = col[rows]
            x, y = ea[lab], eb[lab]
            avg = 0.5 * (state[rows, x] + state[rows, y])
            state[rows, x] = avg
            state[rows, y] = avg
        out[:, i] = state
    return out


def simulate_ensemble(xi, times: Sequence[float], replicas: int, seed: int, spec: TorusSpec,
                      reducer: Callable[[np.ndarray], np.ndarray] | None = None,
                      threads: int = 1, block_size: int = BLOCK_SIZE) -> np.ndarray:
    """Profiles of ``replicas`` independent runs at the increasing ``times``.

    Without a reducer the result has shape (replicas, len(times), V);
    ``reducer`` maps a block of that shape to (block, len(times), F).
    """
    times = np.asarray(times, dtype=float)
    if times.ndim != 1 or times.size == 0:
        raise ValueError("time grid must be a nonempty 1-d sequence")
    if np.any(times < 0) or np.any(np.diff(times) < 0):
        raise ValueError("times must be nonnegative and nondecreasing")
    xi = np.asarray(xi, dtype=float)
    dts = np.diff(np.concatenate([[0.0], times]))
    blocks = [range(s, min(s + block_size, replicas)) for s in range(0, replicas, block_size)]

    def work(block):
        states = _run_block(xi, dts, spec, seed, block)
        return block, (states if reducer is None else reducer(states))

    results = []
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(work, blocks))
    else:
        results = [work(b) for b in blocks]
    width = results[0][1].shape[2]
    out = np.empty((replicas, len(times), width))
    for block, vals in results:
        out[block.start:block.stop] = vals
    return out


# --------------------------------------------------------------------------
# functionals

FUNCTIONALS = ("lp", "dirichlet", "fluctuation")


@dataclass(frozen=True)
class FunctionalRow:
    t: float
    functional: str
    p: float | None
    estimate: McEstimate


def heat_flow_from(xi, t: float, spec: TorusSpec) -> np.ndarray:
    """pi_t^xi: heat flow at time t started from the profile ``xi``."""
    xi = np.asarray(xi, dtype=float)
    kernel = heat_flow_values(t, spec)
    out = np.zeros_like(xi)
    for y in np.nonzero(xi)[0]:
        out += xi[y] * kernel[spec.sub(np.arange(spec.n_vertices), y)]
    return out


def _functional_reducer(spec: TorusSpec, means: np.ndarray, ps: Sequence[float]):
    V = spec.n_vertices

    def reduce(states):
        dens = V * states
        cols = [np.mean(np.abs(dens - 1.0) ** p, axis=-1) for p in ps]
        cols.append(dirichlet_form_batch(dens, spec))
        cols.append(np.mean((dens - V * means[None]) ** 2, axis=-1))
        return np.stack(cols, axis=-1)

    return reduce


def mc_functionals(xi, times: Sequence[float], replicas: int, seed: int, spec: TorusSpec,
                   ps: Sequence[float] = (1.0, 2.0), threads: int = 1) -> list[FunctionalRow]:
    """Estimates of E||eta_t/pi - 1||_p^p, E[Dirichlet(eta_t/pi)] and
    E||eta_t/pi - pi_t/pi||_2^2 on a time grid."""
    if replicas < 2:
        raise ValueError("need at least two replicas")
    if len(times) == 0:
        raise ValueError("empty time grid")
    for p in ps:
        if not 1 <= p <= 2:
            raise ValueError(f"p must lie in [1, 2], got {p}")
    means = np.array([heat_flow_from(xi, t, spec) for t in times])
    vals = simulate_ensemble(xi, times, replicas, seed, spec,
                             reducer=_functional_reducer(spec, means, ps), threads=threads)
    rows = []
    for i, t in enumerate(times):
        for j, p in enumerate(ps):
            rows.append(FunctionalRow(float(t), "lp", float(p), McEstimate.from_samples(vals[:, i, j])))
        rows.append(FunctionalRow(float(t), "dirichlet", None,
                                  McEstimate.from_samples(vals[:, i, len(ps)])))
        rows.append(FunctionalRow(float(t), "fluctuation", None,
                                  McEstimate.from_samples(vals[:, i, len(ps) + 1])))
    return rows


def mc_pair_moments(xi, t: float, replicas: int, seed: int, spec: TorusSpec,
                    threads: int = 1) -> tuple[np.ndarray, np.ndarray]:
    """Mean and standard error of eta_t(x) eta_t(y) for all pairs, shape (V, V)."""
    V = spec.n_vertices

    def reduce(states):
        return (states[..., :, None] * states[..., None, :]).reshape(*states.shape[:2], V * V)

    vals = simulate_ensemble(xi, [t], replicas, seed, spec, reducer=reduce, threads=threads)[:, 0]
    est = [McEstimate.from_samples(vals[:, j]) for j in range(V * V)]
    mean = np.array([e.mean for e in est]).reshape(V, V)
    se = np.array([e.std_error for e in est]).reshape(V, V)
    return mean, se


def mc_profile_mean(xi, t: float, replicas: int, seed: int, spec: TorusSpec,
                    threads: int = 1) -> tuple[np.ndarray, np.ndarray]:
    vals = simulate_ensemble(xi, [t], replicas, seed, spec, threads=threads)[:, 0]
    est = [McEstimate.from_samples(vals[:, x]) for x in range(spec.n_vertices)]
    return np.array([e.mean for e in est]), np.array([e.std_error for e in est])


# --------------------------------------------------------------------------
# quenched chunk walk


@dataclass(frozen=True)
class ChunkWalkResult:
    empirical: np.ndarray
    quenched: np.ndarray
    std_error: np.ndarray
    walkers: int

    @property
    def passed(self) -> bool:
        return bool(np.all(np.abs(self.empirical - self.quenched) <= 3 * self.std_error + 1e-12))


def chunk_walk_check(events: Sequence[UpdateEvent], spec: TorusSpec, walkers: int,
                     rng: np.random.Generator, start: int = 0) -> ChunkWalkResult:
    """Run walkers through a fixed update sequence and compare with the quenched profile.

    At each update touching its site a walker crosses the edge with
    probability 1/2; its law at the end equals the averaging profile
    produced by the same updates from a Dirac mass.
    """
    xi = np.zeros(spec.n_vertices)
    xi[start] = 1.0
    quenched = replay(xi, events, spec)
    pos = np.full(walkers, start, dtype=np.int64)
    for ev in events:
        a, b = ev.edge
        on = np.nonzero((pos == a) | (pos == b))[0]
        if on.size == 0:
            continue
        flip = rng.random(on.size) < 0.5
        moved = on[flip]
        pos[moved] = np.where(pos[moved] == a, b, a)
    emp = np.bincount(pos, minlength=spec.n_vertices) / walkers
    se = np.sqrt(quenched * (1 - quenched) / walkers)
    return ChunkWalkResult(emp, quenched, se, walkers)
