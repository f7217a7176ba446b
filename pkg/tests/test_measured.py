import math

import numpy as np
import pytest
from scipy import stats

from kicksim import (
    ActionLattice,
    EdgeLeakageError,
    KickConvention,
    KickedSystem,
    build_kick_kernel,
    dephase,
    evolve_measured,
    initial_delta_state,
    measure_collapse,
    quantum_step,
    rate_step,
    run_measured_ensemble,
    stochastic_row,
)
from kicksim.measured import ProbabilityState, delta_distribution, evolve_rate
from kicksim.observables import moments
from kicksim.quantum import AmplitudeState


def chi2_pvalue(counts, probs, min_expected=5.0):
    n = counts.sum()
    exp = n * probs
    keep = exp >= min_expected
    obs = np.append(counts[keep], counts[~keep].sum())
    e = np.append(exp[keep], exp[~keep].sum())
    if e[-1] == 0:
        obs, e = obs[:-1], e[:-1]
    return stats.chisquare(obs, e).pvalue


def test_rate_step_zero_kick_is_identity(small_lattice):
    p = delta_distribution(small_lattice, 4)
    out = rate_step(p, build_kick_kernel(0.0))
    assert np.array_equal(out.probs, p.probs)
    assert out.step == 1


def test_rate_step_from_delta(kernel5, small_lattice):
    out = rate_step(delta_distribution(small_lattice), kernel5)
    M = kernel5.half_width
    centre = small_lattice.index(0)
    assert np.array_equal(out.probs[centre - M : centre + M + 1], stochastic_row(kernel5))


@pytest.mark.parametrize("K", [1.0, 2.0, 5.0])
def test_exact_variance_law(K, lattice):
    k = build_kick_kernel(K)
    # arbitrary start distribution with compact support
    rng = np.random.default_rng(1)
    p0 = np.zeros(lattice.size)
    c = lattice.index(0)
    p0[c - 10 : c + 11] = rng.random(21)
    p0 /= p0.sum()
    ns = lattice.ns
    var = lambda p: np.dot(ns**2, p) - np.dot(ns, p) ** 2  # noqa: E731
    p = ProbabilityState(lattice, p0)
    v0 = var(p0)
    for j in range(1, 201):
        p = rate_step(p, k)
        if j in (1, 10, 200):
            assert var(p.probs) - v0 == pytest.approx(j * K * K / 2, rel=1e-8)
    assert abs(p.probs.sum() - 1.0) <= 1e-12
    assert np.all(p.probs >= 0)


def test_rate_step_reflection_symmetry(kernel5, small_lattice):
    rng = np.random.default_rng(3)
    half = rng.random(40)
    p0 = np.zeros(small_lattice.size)
    c = small_lattice.index(0)
    p0[c - 40 : c] = half[::-1]
    p0[c + 1 : c + 41] = half
    p0 /= p0.sum()
    out = rate_step(ProbabilityState(small_lattice, p0), kernel5).probs
    assert np.allclose(out, out[::-1], atol=1e-12)


def test_rate_step_edge_leakage(kernel5):
    lat = ActionLattice(-20, 20)
    with pytest.raises(EdgeLeakageError):
        evolve_rate(delta_distribution(lat), kernel5, 10)


def test_collapse_of_basis_state(small_lattice):
    s = initial_delta_state(small_lattice, 5)
    rng = np.random.default_rng(0)
    for _ in range(20):
        n, out = measure_collapse(s, rng)
        assert n == 5
        assert np.array_equal(out.amplitudes, s.amplitudes)


def test_collapse_born_rule():
    lat = ActionLattice(-4, 4)
    a = np.zeros(lat.size, dtype=complex)
    a[lat.index(0)] = a[lat.index(1)] = 1 / math.sqrt(2)
    s = AmplitudeState(lat, a, 3)
    rng = np.random.default_rng(42)
    outcomes = [measure_collapse(s, rng)[0] for _ in range(10_000)]
    freq0 = outcomes.count(0) / 10_000
    assert set(outcomes) == {0, 1}
    assert abs(freq0 - 0.5) <= 4 * 0.5 / 100
    n, collapsed = measure_collapse(s, 0.1)
    assert collapsed.step == 3 and collapsed.norm == 1.0


def test_collapse_histogram_after_one_kick(small_lattice):
    K = 2.0
    k = build_kick_kernel(K)
    s = quantum_step(initial_delta_state(small_lattice), k, KickedSystem(kick_strength=K))
    rng = np.random.default_rng(7)
    counts = np.zeros(small_lattice.size)
    for _ in range(100_000):
        counts[measure_collapse(s, rng)[0] - small_lattice.n_min] += 1
    probs = np.zeros(small_lattice.size)
    c = small_lattice.index(0)
    probs[c - k.half_width : c + k.half_width + 1] = stochastic_row(k)
    assert chi2_pvalue(counts, probs) > 0.01


def test_dephase():
    lat = ActionLattice(-3, 3)
    a = np.zeros(lat.size, dtype=complex)
    a[lat.index(0)] = 1 / math.sqrt(2)
    a[lat.index(1)] = 1j / math.sqrt(2)
    p = dephase(AmplitudeState(lat, a, 9))
    assert p.probs[lat.index(0)] == pytest.approx(0.5)
    assert p.probs[lat.index(1)] == pytest.approx(0.5)
    assert p.probs.sum() == pytest.approx(1.0, abs=1e-15)
    assert p.step == 9
    assert np.array_equal(dephase(initial_delta_state(lat)).probs, delta_distribution(lat).probs)


def test_moments_survive_dephasing(kernel5, rotor5, small_lattice):
    s = quantum_step(quantum_step(initial_delta_state(small_lattice), kernel5, rotor5), kernel5, rotor5)
    assert moments(s, rotor5, 5) == moments(dephase(s), rotor5, 5)


def test_zero_steps_empty_trajectory(kernel5, rotor5, small_lattice):
    s = initial_delta_state(small_lattice)
    traj = evolve_measured(s, kernel5, rotor5, 0)
    assert traj.outcomes == [] and traj.final_state is s


def test_trajectory_is_markov_chain_with_bessel_law():
    K = 2.0
    k = build_kick_kernel(K)
    lat = ActionLattice(-1024, 1024)
    traj = evolve_measured(initial_delta_state(lat), k, KickedSystem(kick_strength=K), 4000, 1, seed=3)
    jumps = np.diff(np.array([0] + traj.outcomes))
    counts = np.bincount(jumps + k.half_width, minlength=len(k))
    assert chi2_pvalue(counts, stochastic_row(k)) > 0.01
    assert traj.steps == list(range(1, 4001))


def test_ensemble_matches_single_trajectories(kernel5, rotor5, lattice):
    ens = run_measured_ensemble(lattice, kernel5, rotor5, 40, 2, 5, seed=9)
    for t in range(5):
        traj = evolve_measured(initial_delta_state(lattice), kernel5, rotor5, 40, 2, seed=9, trajectory=t)
        assert traj.outcomes == list(ens.outcomes[:, t])
        assert traj.steps == list(ens.steps)


def test_ensemble_independent_of_batching(kernel5, rotor5, lattice):
    whole = run_measured_ensemble(lattice, kernel5, rotor5, 30, 1, 8, seed=1)
    tail = run_measured_ensemble(lattice, kernel5, rotor5, 30, 1, 3, seed=1, first_trajectory=5)
    assert np.array_equal(whole.outcomes[:, 5:], tail.outcomes)


def test_ensemble_edge_leakage(kernel5, rotor5):
    with pytest.raises(EdgeLeakageError):
        run_measured_ensemble(ActionLattice(-60, 60), kernel5, rotor5, 200, 1, 50, seed=0)


def test_leftover_kicks_are_applied_without_measurement(kernel5, rotor5, small_lattice):
    traj = evolve_measured(initial_delta_state(small_lattice), kernel5, rotor5, 7, 3, seed=0)
    assert traj.steps == [3, 6]
    assert traj.final_state.step == 7


def test_rate_equation_matches_measured_at_s1():
    K = 2.0
    k = build_kick_kernel(K)
    lat = ActionLattice(-512, 512)
    ens = run_measured_ensemble(lat, k, KickedSystem(kick_strength=K), 20, 1, 4000, seed=5)
    p = delta_distribution(lat)
    for i in range(20):
        p = rate_step(p, k)
        if i in (0, 9, 19):
            assert chi2_pvalue(ens.histogram(i), p.probs) > 1e-3
