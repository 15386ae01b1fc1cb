import math

import numpy as np
import pytest
import scipy.linalg

from avgtorus import diff_kernel as dk
from avgtorus.heat import KernelError, kernel_1d_vector
from avgtorus.torus import TorusError, TorusSpec


def expected_defect(spec):
    """R = A - A0 written out entry by entry from its piecewise definition."""
    V = spec.n_vertices
    R = np.zeros((V, V))
    units = [int(y) for y in spec.neighbor_table[0]]
    # at the origin every rate is halved
    R[0, 0] = spec.d
    for z in units:
        R[0, z] = -0.5
    # at |z| = 1: one half less towards 0, one quarter towards -z
    for z in units:
        R[z, 0] += -0.5
        R[z, z] += 0.5
        mz = int(spec.negate(z))
        R[z, mz] += 0.25
        R[z, z] += -0.25
    return R


@pytest.mark.parametrize("d,N", [(1, 4), (1, 7), (2, 4), (2, 5), (3, 4)])
def test_generator_is_free_walk_plus_defect(d, N):
    spec = TorusSpec(d, N)
    A = dk.build_generator(spec).dense
    A0 = dk.build_free_generator(spec).dense
    assert np.array_equal(A - A0, expected_defect(spec))


@pytest.mark.parametrize("d,N", [(1, 5), (1, 8), (2, 4), (2, 6)])
def test_generator_invariants(d, N):
    gen = dk.build_generator(TorusSpec(d, N))
    A = gen.dense
    assert np.array_equal(A, A.T)
    assert np.all(A.sum(axis=1) == 0)
    off = A - np.diag(np.diag(A))
    assert off.min() >= 0
    assert gen.rate >= np.abs(np.diag(A)).max()


def test_generator_examples():
    spec = TorusSpec(1, 6)
    A = dk.build_generator(spec).dense
    assert -A[1, 1] == pytest.approx(7 / 4)
    assert A[0, 1] == A[1, 0] == 0.5


def test_generator_rejects_small_side():
    with pytest.raises(TorusError):
        dk.build_generator(TorusSpec(1, 3))


def test_kernel_vector_against_dense_expm():
    gen = dk.build_generator(TorusSpec(1, 8))
    oracle = scipy.linalg.expm(gen.dense)[:, 0]
    assert np.max(np.abs(dk.kernel_vector(gen, 1.0).values - oracle)) < 1e-10
    gen2 = dk.build_generator(TorusSpec(2, 4))
    oracle = scipy.linalg.expm(3.0 * gen2.dense)[:, 0]
    assert np.max(np.abs(dk.kernel_vector(gen2, 3.0).values - oracle)) < 1e-10


def test_kernel_vector_limits_and_symmetry():
    spec = TorusSpec(2, 5)
    gen = dk.build_generator(spec)
    assert np.array_equal(dk.kernel_vector(gen, 0.0).values, np.eye(1, 25)[0])
    late = dk.kernel_vector(gen, 400.0).values
    assert np.allclose(late, 1 / 25, atol=1e-10)
    S = dk.kernel_vector(gen, 1.3).values
    units = spec.neighbor_table[0]
    assert np.ptp(S[units]) < 1e-14
    assert abs(S.sum() - 1) < 1e-11


def test_kernel_vector_tolerance_range():
    gen = dk.build_generator(TorusSpec(1, 5))
    with pytest.raises(ValueError):
        dk.kernel_vector(gen, 1.0, tol=1e-3)


def test_free_kernel_is_product_of_one_dimensional_kernels():
    # A0 = 2 L^RW, so S^0_t is the walk kernel at time 2t... per coordinate at t
    spec = TorusSpec(2, 5)
    S0 = dk.kernel_vector(dk.build_free_generator(spec), 0.8).values
    p = kernel_1d_vector(0.8, 5)
    assert np.allclose(S0, np.outer(p, p).ravel(), atol=1e-12)


def test_u_exact_basics():
    spec = TorusSpec(1, 8)
    u = dk.u_exact(spec, 1 / 16, 10.0)
    assert u.values[0] == 1.0
    gen = dk.build_generator(spec)
    for t in (0.5, 2.0, 7.0):
        S00 = dk.kernel_vector(gen, t).values[0]
        assert u.at(t) <= S00 <= 1.0


def test_f_g_examples():
    f, g = dk.f_g_closed(0.0, TorusSpec(2, 7))
    assert f == pytest.approx(2.5, abs=1e-14)
    assert g == pytest.approx(1.0, abs=1e-14)
    f, g = dk.f_g_closed(1.0, TorusSpec(1, 4))
    assert g == pytest.approx((math.exp(-2) + math.exp(-4)) / 2, abs=1e-12)
    assert f == pytest.approx((math.exp(-2) + 2 * math.exp(-4)) / 2, abs=1e-12)
    # quoted decimal is the closed form rounded loosely (0.07682546...)
    assert g == pytest.approx(0.0768256, abs=2e-7)
    assert f == pytest.approx(0.0859834, abs=2e-7)


def test_g_is_free_kernel_difference():
    # g(t) = S0_t(0,0) - S0_t(e,0)
    for spec in (TorusSpec(1, 7), TorusSpec(2, 5)):
        free = dk.build_free_generator(spec)
        for t in (0.3, 2.0):
            S0 = dk.kernel_vector(free, t).values
            _, g = dk.f_g_closed(t, spec)
            assert g == pytest.approx(S0[0] - S0[dk.unit_index(spec)], abs=1e-12)


def test_g_integral():
    for d, N in ((1, 8), (2, 6)):
        spec = TorusSpec(d, N)
        expected = (N**d - 1) / (2 * d * N**d)
        assert abs(dk.g_integral(spec) - expected) < 1e-6


def test_renewal_trivial_cases():
    h, n = 1 / 32, 321
    g = dk.SampledFunction(h, np.exp(-np.arange(n) * h))
    zero = dk.SampledFunction(h, np.zeros(n))
    assert np.array_equal(dk.renewal_solve(g, zero).values, g.values)
    one = dk.SampledFunction(h, np.ones(n))
    c = dk.SampledFunction(h, np.full(n, 0.7))
    u = dk.renewal_solve(one, c)
    exact = np.exp(0.7 * u.times)
    assert np.max(np.abs(u.values - exact) / exact) < 1e-3


def test_renewal_errors():
    a = dk.SampledFunction(0.1, np.ones(5))
    b = dk.SampledFunction(0.1, np.ones(6))
    with pytest.raises(ValueError):
        dk.renewal_solve(a, b)
    with pytest.raises(dk.RenewalDivergence):
        dk.renewal_solve(a, dk.SampledFunction(0.1, np.full(5, 25.0)))


def test_renewal_against_exact():
    spec = TorusSpec(1, 8)
    f, g = dk.f_g_sampled(spec, 1 / 64, 20.0)
    u = dk.u_exact(spec, 1 / 64, 20.0)
    ur = dk.renewal_solve(g, f)
    assert np.max(np.abs(ur.values - u.values)) < 1e-4
    assert abs(ur.at(2.0) - u.at(2.0)) < 1e-4


def test_series_trivial_and_constant():
    h = 1 / 64
    gt = dk.SampledFunction(h, np.full(257, 0.5))
    assert np.array_equal(dk.series_sum(gt, K=1).values, gt.values)
    # sum_k c (ct)^{k-1}/(k-1)! = c e^{ct}
    total = dk.series_sum(gt)
    assert np.max(np.abs(total.values - 0.5 * np.exp(0.5 * total.times))) < 1e-3


def test_series_cap():
    gt = dk.SampledFunction(0.1, np.full(50, 3.0))
    with pytest.raises(dk.SeriesCapError):
        dk.series_sum(gt, max_terms=3)


def test_series_dominates_u():
    spec = TorusSpec(1, 8)
    u = dk.u_exact(spec, 1 / 16, 20.0)
    ut = dk.u_tilde(spec, 1 / 16, 20.0)
    assert np.all(u.values <= ut.values + 1e-12)


def test_crw_pair_kernel_and_difference_law():
    spec = TorusSpec(1, 6)
    P0 = dk.crw_pair_kernel(0.0, spec)
    assert P0[0, 0] == 1.0 and P0.sum() == 1.0
    gen = dk.build_generator(spec)
    for t in (0.5, 2.0):
        law = dk.difference_law(dk.crw_pair_kernel(t, spec), spec)
        assert np.max(np.abs(law - dk.kernel_vector(gen, t).values)) < 1e-11
    spec2 = TorusSpec(2, 4)
    law = dk.difference_law(dk.crw_pair_kernel(1.0, spec2), spec2)
    assert np.max(np.abs(law - dk.kernel_vector(dk.build_generator(spec2), 1.0).values)) < 1e-11


def test_crw_marginals_are_heat_flow():
    from avgtorus.heat import heat_flow_values
    spec = TorusSpec(1, 7)
    P = dk.crw_pair_kernel(1.5, spec)
    assert np.allclose(P.sum(axis=1), heat_flow_values(1.5, spec), atol=1e-12)
    assert np.allclose(P.sum(axis=0), heat_flow_values(1.5, spec), atol=1e-12)


def test_crw_state_cap():
    with pytest.raises(dk.StateSpaceTooLarge):
        dk.build_crw_generator(TorusSpec(2, 11))


def test_negative_kernel_signals_error():
    with pytest.raises(KernelError):
        dk._check_probability(np.array([0.5, -1e-6]), 1e-12)


@pytest.mark.parametrize("d,N", [(1, 4), (1, 7), (2, 4)])
def test_return_excess_matches_uniformization(d, N):
    spec = TorusSpec(d, N)
    gen = dk.build_generator(spec)
    times = [0.0, 0.3, 2.0]
    excess = dk.return_excess(times, spec)
    for t, e in zip(times, excess):
        assert e == pytest.approx(dk.kernel_vector(gen, t).values[0] - 1 / N**d, abs=1e-12)


def test_return_excess_keeps_relative_accuracy():
    spec = TorusSpec(1, 4)
    late = dk.return_excess([30.0, 31.0], spec)
    # slowest mode dominates: successive ratio exp(-lambda_min)
    lam = np.sort(np.linalg.eigvalsh(-dk.build_generator(spec).dense))[1]
    assert late.min() > 0
    assert late[1] / late[0] == pytest.approx(math.exp(-lam), rel=1e-6)


def test_u_exact_keeps_relative_accuracy_late():
    spec = TorusSpec(1, 6)
    u = dk.u_exact(spec, 1 / 16, 30.0)
    lam, phi = np.linalg.eigh(-dk.build_generator(spec).dense)
    e = dk.unit_index(spec)
    spectral = np.sum(np.exp(-lam * 30.0) * phi[0] * (phi[0] - phi[e]))
    assert u.at(30.0) == pytest.approx(spectral, rel=1e-5)
