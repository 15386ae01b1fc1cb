import numpy as np
import pytest
import scipy.linalg
import scipy.sparse as sp

from avgtorus.uniformization import TruncationError, expm_multiply, poisson_weights


def random_generator(n, rng):
    A = rng.random((n, n)) * (rng.random((n, n)) < 0.4)
    np.fill_diagonal(A, 0.0)
    np.fill_diagonal(A, -A.sum(axis=1))
    return A


def test_matches_dense_expm():
    rng = np.random.default_rng(3)
    for n in (3, 7, 12):
        Q = random_generator(n, rng)
        V = rng.random((n, 2))
        for t in (0.0, 0.2, 3.0):
            got = expm_multiply(sp.csr_matrix(Q), V, t)
            assert np.max(np.abs(got - scipy.linalg.expm(t * Q) @ V)) < 1e-10


def test_zero_time_is_identity():
    Q = sp.csr_matrix(np.array([[-1.0, 1.0], [2.0, -2.0]]))
    v = np.array([0.3, 0.7])
    assert np.array_equal(expm_multiply(Q, v, 0.0), v)


def test_poisson_weights_cover_mass():
    w = poisson_weights(50.0, 1e-12)
    assert abs(w.sum() - 1.0) < 1e-11


def test_truncation_cap():
    with pytest.raises(TruncationError):
        poisson_weights(1e6, 1e-12, max_terms=1000)
