import math

import numpy as np
import pytest
from scipy import stats

from avgtorus import diff_kernel as dk
from avgtorus.heat import heat_flow_values
from avgtorus.simulate import (McEstimate, SimulationError, UpdateEvent, apply_update,
                               chunk_walk_check, dirichlet_after_update, mc_functionals,
                               mc_profile_mean, replay, replica_rng, simulate,
                               simulate_ensemble)
from avgtorus.torus import MassProfile, TorusError, TorusSpec, dirichlet_form


def test_apply_update_examples():
    s = TorusSpec(1, 3)
    assert np.array_equal(apply_update([1, 0, 0], (0, 1), s), [0.5, 0.5, 0])
    assert np.array_equal(apply_update([0.5, 0.5, 0], (1, 2), s), [0.5, 0.25, 0.25])
    flat = np.full(3, 1 / 3)
    assert np.array_equal(apply_update(flat, (2, 0), s), flat)


def test_apply_update_rejects_non_edges():
    with pytest.raises(TorusError):
        apply_update(np.eye(1, 5)[0], (0, 2), TorusSpec(1, 5))


def test_incremental_dirichlet():
    s = TorusSpec(2, 4)
    rng = np.random.default_rng(0)
    psi = rng.random(16)
    energy = dirichlet_form(psi, s)
    for _ in range(30):
        edge = s.edges[rng.integers(s.n_edges)]
        psi, energy = dirichlet_after_update(psi, energy, edge, s)
        assert energy == pytest.approx(dirichlet_form(psi, s), abs=1e-12)


def test_simulate_trivial_cases():
    s = TorusSpec(2, 3)
    xi = MassProfile.dirac(s, 4)
    assert np.array_equal(np.asarray(simulate(xi, 0.0, replica_rng(1, 0), s)), np.asarray(xi))
    pi = MassProfile.uniform(s)
    assert np.array_equal(np.asarray(simulate(pi, 5.0, replica_rng(1, 0), s)), np.asarray(pi))


def test_simulate_event_count_is_poisson():
    s = TorusSpec(1, 5)
    t = 0.7
    counts = [len(simulate(MassProfile.dirac(s), t, replica_rng(11, r), s, record=True)[1])
              for r in range(3000)]
    lam = s.n_edges * t
    assert abs(np.mean(counts) - lam) < 3 * math.sqrt(lam / len(counts))
    assert abs(np.var(counts) / lam - 1) < 0.1


def test_simulate_replay_and_mass():
    s = TorusSpec(2, 4)
    prof, events = simulate(MassProfile.dirac(s), 3.0, replica_rng(5, 2), s, record=True)
    eta = np.asarray(prof)
    assert abs(eta.sum() - 1) < 1e-9
    assert np.array_equal(replay(np.eye(1, 16)[0], events, s), eta)


def test_ensemble_mass_and_reproducibility():
    s = TorusSpec(1, 6)
    xi = np.eye(1, 6)[0]
    a = simulate_ensemble(xi, [0.5, 2.0], 300, 9, s)
    b = simulate_ensemble(xi, [0.5, 2.0], 300, 9, s, threads=3, block_size=37)
    assert np.array_equal(a, b)
    assert np.allclose(a.sum(axis=-1), 1.0, atol=1e-12)
    c = simulate_ensemble(xi, [0.5, 2.0], 300, 10, s)
    assert not np.array_equal(a, c)


def test_ensemble_marginal_equals_single_run_law():
    # an ensemble replica is distributed like a direct exponential-race run
    s = TorusSpec(1, 5)
    xi = np.eye(1, 5)[0]
    ens = simulate_ensemble(xi, [1.0], 4000, 3, s)[:, 0, 0]
    direct = [np.asarray(simulate(xi, 1.0, replica_rng(77, r), s))[0] for r in range(4000)]
    assert stats.ks_2samp(ens, direct).pvalue > 1e-3


def test_ensemble_mean_is_heat_flow():
    s = TorusSpec(1, 8)
    mean, se = mc_profile_mean(np.eye(1, 8)[0], 2.0, 10_000, 42, s)
    exact = heat_flow_values(2.0, s)
    assert np.all(np.abs(mean - exact) <= 3 * se + 1e-12)


def test_ensemble_validation():
    s = TorusSpec(1, 4)
    with pytest.raises(ValueError):
        simulate_ensemble(np.eye(1, 4)[0], [], 5, 0, s)
    with pytest.raises(ValueError):
        simulate_ensemble(np.eye(1, 4)[0], [2.0, 1.0], 5, 0, s)


def test_event_cap(monkeypatch):
    import avgtorus.simulate as sim
    monkeypatch.setattr(sim, "MAX_EVENTS", 10)
    s = TorusSpec(1, 4)
    with pytest.raises(SimulationError):
        sim.simulate_ensemble(np.eye(1, 4)[0], [100.0], 2, 0, s)


def test_mc_functionals_at_time_zero():
    s = TorusSpec(1, 8)
    rows = mc_functionals(MassProfile.dirac(s), [0.0], 10, 1, s)
    by = {(r.functional, r.p): r.estimate for r in rows}
    assert by[("lp", 2.0)].mean == 7.0 and by[("lp", 2.0)].std_error == 0.0
    assert by[("fluctuation", None)].mean == 0.0


def test_mc_functionals_errors():
    s = TorusSpec(1, 4)
    with pytest.raises(ValueError):
        mc_functionals(MassProfile.dirac(s), [1.0], 10, 1, s, ps=(3.0,))
    with pytest.raises(ValueError):
        mc_functionals(MassProfile.dirac(s), [], 10, 1, s)


def test_mc_dirichlet_matches_u():
    s = TorusSpec(1, 8)
    rows = mc_functionals(MassProfile.dirac(s), [1.0, 4.0], 10_000, 42, s)
    gen = dk.build_generator(s)
    for r in rows:
        if r.functional == "dirichlet":
            S = dk.kernel_vector(gen, r.t).values
            assert r.estimate.agrees(s.n_vertices * (S[0] - S[1]))


def test_mc_estimate():
    est = McEstimate.from_samples([1.0, 2.0, 3.0, 4.0])
    assert est.mean == 2.5
    assert est.std_error == pytest.approx(math.sqrt(5 / 3 / 4))
    with pytest.raises(ValueError):
        McEstimate.from_samples([1.0])


def test_chunk_walk():
    s = TorusSpec(1, 6)
    rng = np.random.default_rng(0)
    assert chunk_walk_check([], s, 100, rng).empirical[0] == 1.0
    res = chunk_walk_check([UpdateEvent(0.1, (0, 1))], s, 100_000, rng)
    assert np.array_equal(res.quenched, [0.5, 0.5, 0, 0, 0, 0])
    assert res.passed
    _, events = simulate(MassProfile.dirac(s), 2.0, replica_rng(3, 0), s, record=True)
    res = chunk_walk_check(events, s, 100_000, rng)
    assert res.passed
    chi2 = np.sum((res.empirical - res.quenched) ** 2 / np.maximum(res.quenched, 1e-300)) * res.walkers
    assert chi2 < stats.chi2.ppf(1 - 1e-3, df=s.n_vertices - 1)
