import math

import numpy as np
import pytest
import scipy.sparse as sp

from avgtorus.heat import (dirichlet_heat, heat_flow_profile, heat_flow_values, kernel_1d,
                           kernel_1d_vector, l2_heat, spectral_data, xi)
from avgtorus.torus import TorusSpec, dirichlet_form
from avgtorus.uniformization import expm_multiply


def walk_generator(N, rate=1.0):
    """Continuous-time walk on the cycle jumping to each neighbour at ``rate``."""
    i = np.arange(N)
    rows = np.concatenate([i, i, i])
    cols = np.concatenate([(i + 1) % N, (i - 1) % N, i])
    vals = np.concatenate([np.full(N, rate), np.full(N, rate), np.full(N, -2 * rate)])
    return sp.csr_matrix((vals, (rows, cols)), shape=(N, N))


def test_spectral_data():
    for N in (3, 4, 8, 17):
        s = spectral_data(N)
        assert s.gap == pytest.approx(1 - math.cos(2 * math.pi / N), abs=1e-15)
        assert s.t_rel * s.gap == pytest.approx(1.0, abs=1e-15)
        assert s.eigenvalues[0] == 0.0
        assert np.allclose(s.eigenvalues[1:], s.eigenvalues[1:][::-1])


def test_kernel_examples():
    assert kernel_1d(0.0, 0, 7) == 1.0
    assert kernel_1d(1.0, 0, 4) == pytest.approx(((1 + math.exp(-2)) / 2) ** 2, abs=1e-15)
    assert kernel_1d(1.0, 0, 4) == pytest.approx(0.322247, abs=1e-6)
    assert kernel_1d(1.0, 1, 4) == pytest.approx((1 - math.exp(-4)) / 4, abs=1e-15)


@pytest.mark.parametrize("N", [4, 8, 16, 32])
def test_kernel_against_uniformization(N):
    Q = walk_generator(N)
    for t in (0.1, 1.0, 10.0):
        oracle = expm_multiply(Q.T.tocsr(), np.eye(1, N)[0], t)
        assert np.max(np.abs(kernel_1d_vector(t, N) - oracle)) < 1e-10


def test_kernel_symmetry_and_mass():
    p = kernel_1d_vector(np.array([0.3, 2.0, 50.0]), 9)
    assert np.allclose(p.sum(axis=-1), 1.0, atol=1e-14)
    assert np.allclose(p[:, 1:], p[:, 1:][:, ::-1])
    assert p.min() >= 0


def test_heat_flow_profile():
    s = TorusSpec(1, 4)
    assert np.array_equal(np.asarray(heat_flow_profile(0.0, s)), [1, 0, 0, 0])
    assert np.allclose(np.asarray(heat_flow_profile(1e4, s)), 0.25, atol=1e-10)


def test_heat_flow_tensor_structure():
    s = TorusSpec(2, 5)
    t = 1.7
    one = kernel_1d_vector(t / 2, 5)
    full = heat_flow_values(t, s)
    for v in range(s.n_vertices):
        a, b = s.coords[v]
        assert full[v] == pytest.approx(one[a] * one[b], abs=1e-16)


def test_heat_flow_is_lazy_walk_law():
    # pi_t solves d/dt pi = L pi with rate 1/2 to each of the 2d neighbours
    s = TorusSpec(2, 4)
    V = s.n_vertices
    rows, cols, vals = [], [], []
    for x in range(V):
        for y in s.neighbor_table[x]:
            rows.append(x), cols.append(y), vals.append(0.5)
        rows.append(x), cols.append(x), vals.append(-0.5 * 2 * s.d)
    Q = sp.csr_matrix((vals, (rows, cols)), shape=(V, V))
    oracle = expm_multiply(Q.T.tocsr(), np.eye(1, V)[0], 2.3)
    assert np.max(np.abs(heat_flow_values(2.3, s) - oracle)) < 1e-12


def test_dirichlet_heat_examples():
    s = TorusSpec(1, 4)
    assert dirichlet_heat(0.0, s) == pytest.approx(4.0)
    assert dirichlet_heat(1.0, s) == pytest.approx(4 * (math.exp(-2) + math.exp(-4)) / 2, abs=1e-14)
    assert dirichlet_heat(200.0, s) < 1e-100


def test_dirichlet_heat_matches_form():
    for s in (TorusSpec(1, 6), TorusSpec(2, 4)):
        for t in (0.0, 0.5, 3.0):
            dens = s.n_vertices * heat_flow_values(t, s)
            assert dirichlet_heat(t, s) == pytest.approx(dirichlet_form(dens, s), abs=1e-8)
    ts = np.linspace(0, 20, 81)
    assert np.all(np.diff(dirichlet_heat(ts, TorusSpec(2, 5))) < 0)


def test_l2_heat():
    s = TorusSpec(2, 4)
    assert l2_heat(0.0, s) == pytest.approx(s.n_vertices - 1)
    dens = s.n_vertices * heat_flow_values(1.3, s)
    assert l2_heat(1.3, s) == pytest.approx(np.mean((dens - 1) ** 2), abs=1e-13)


def test_xi_examples():
    assert xi(0.0, TorusSpec(1, 8)) == pytest.approx(8.0)
    assert xi(4.0, TorusSpec(1, 8)) == pytest.approx(math.exp(-8 * (1 - math.cos(math.pi / 4))), rel=1e-12)
    # the quoted decimal 0.09606 is a rounding of the closed form above
    assert xi(4.0, TorusSpec(1, 8)) == pytest.approx(0.09606, abs=1e-4)
    s = TorusSpec(2, 4)
    # beyond t = 16 the denominator is frozen at N^{d+2} = 256
    for t in (16.0, 20.0, 300.0):
        expected = 16 * math.exp(-2 * t / spectral_data(4).t_rel) / 256
        assert xi(t, s) == pytest.approx(expected, rel=1e-12)
