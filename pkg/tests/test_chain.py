from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import linalg

from noisychain import rng as rngmod
from noisychain.chain import (
    BoundaryCondition,
    ChainState,
    DisorderRealization,
    GibbsParams,
    anharmonic_energy,
    anharmonic_force,
    build_phi,
    current_matrix,
    dumps_disorder,
    gaussian_covariance,
    hamiltonian,
    load_disorder,
    loads_disorder,
    observables,
    ordered_disorder,
    sample_disorder,
    sample_gibbs,
    save_disorder,
)
from noisychain.errors import NumericError, ParameterError
from noisychain.potentials import AnharmonicPotential

from conftest import random_state


# -- disorder ---------------------------------------------------------------------------------


def test_degenerate_interval_gives_constant_pinning():
    d = sample_disorder(3, 1.0, 1.0, seed=4)
    np.testing.assert_array_equal(d.nu, [1.0, 1.0, 1.0])


def test_uniform_law_mean():
    d = sample_disorder(10_000, 1.0, 2.0, seed=7)
    assert abs(d.nu.mean() - 1.5) < 0.02
    assert d.nu.min() >= 1.0 and d.nu.max() <= 2.0


def test_inverted_interval_rejected():
    with pytest.raises(ParameterError):
        sample_disorder(3, 2.0, 1.0, seed=1)


def test_zero_pinning_needs_masses():
    with pytest.raises(ParameterError):
        sample_disorder(3, 0.0, 1.0)
    d = sample_disorder(4, 0.0, 0.0, mass_law=(1.0, 2.0), seed=3)
    assert np.all(d.nu == 0) and np.all((d.masses >= 1) & (d.masses <= 2))


def test_disorder_deterministic_and_index_dependent():
    a = sample_disorder(16, 1, 2, seed=5, index=0)
    b = sample_disorder(16, 1, 2, seed=5, index=0)
    c = sample_disorder(16, 1, 2, seed=5, index=1)
    assert a == b
    assert not np.array_equal(a.nu, c.nu)


def test_disorder_is_immutable():
    d = sample_disorder(4, 1, 2, seed=0)
    with pytest.raises(ValueError):
        d.nu[0] = 3.0


@given(st.lists(st.floats(0.1, 50.0), min_size=1, max_size=12), st.booleans())
@settings(max_examples=40, deadline=None)
def test_serialization_round_trip(nus, with_masses):
    masses = np.linspace(1.0, 2.0, len(nus)) / 3.0 if with_masses else None
    d = DisorderRealization(np.array(nus), masses, seed=2**63 + 5, law="uniform", index=3)
    back, bc = loads_disorder(dumps_disorder(d, "periodic"))
    assert back == d
    assert bc is BoundaryCondition.PERIODIC
    np.testing.assert_array_equal(back.nu, d.nu)


def test_serialization_file(tmp_path):
    d = sample_disorder(5, 1, 2, seed=9)
    path = tmp_path / "d.txt"
    save_disorder(path, d, "fixed")
    back, bc = load_disorder(path)
    assert back == d and bc is BoundaryCondition.FIXED


# -- coupling matrix --------------------------------------------------------------------------


def test_build_phi_fixed_and_periodic():
    d = DisorderRealization(np.array([1.0, 2.0, 3.0]))
    np.testing.assert_array_equal(build_phi(d, "fixed").matrix, [[3, -1, 0], [-1, 4, -1], [0, -1, 5]])
    np.testing.assert_array_equal(build_phi(d, "periodic").matrix, [[3, -1, -1], [-1, 4, -1], [-1, -1, 5]])


def test_two_site_fixed_eigenvalues():
    phi = build_phi(DisorderRealization(np.array([1.0, 1.0])), "fixed")
    np.testing.assert_allclose(np.linalg.eigvalsh(phi.matrix), [2.0, 4.0])


@pytest.mark.parametrize("bc", ["fixed", "periodic"])
def test_phi_symmetric_and_positive(bc):
    d = sample_disorder(20, 0.01, 0.02, seed=2)
    phi = build_phi(d, bc)
    assert np.array_equal(phi.matrix, phi.matrix.T)
    linalg.cholesky(phi.matrix)
    assert not phi.matrix.flags.writeable


def test_unknown_boundary_rejected():
    with pytest.raises(ParameterError):
        BoundaryCondition.parse("open")


def test_singular_covariance_raises_for_indefinite():
    with pytest.raises(NumericError):
        gaussian_covariance(np.array([[1.0, 0.0], [0.0, -1.0]]))


def test_covariance_decays_exponentially():
    d = sample_disorder(64, 1, 2, seed=1)
    cov = gaussian_covariance(build_phi(d, "fixed"))
    row = np.abs(cov[10, 10:40])
    slope = np.polyfit(np.arange(row.size), np.log(row), 1)[0]
    assert slope < -0.5


# -- Gibbs sampling ---------------------------------------------------------------------------


def test_single_site_position_variance():
    phi = build_phi(DisorderRealization(np.array([3.0])), "fixed")
    x = sample_gibbs(phi, GibbsParams(1.0), np.random.default_rng(0), size=100_000)
    var = x.q.var()
    se = var * np.sqrt(2 / x.q.size)
    assert abs(var - 0.2) < 5 * se


def test_gaussian_covariance_matches_inverse(chain8):
    _, phi = chain8
    T = 1.7
    x = sample_gibbs(phi, GibbsParams(T), np.random.default_rng(1), size=200_000)
    emp = np.cov(x.q.T)
    exact = T * np.linalg.inv(phi.matrix)
    # entrywise standard error of a Gaussian covariance estimate
    se = np.sqrt((exact**2 + np.outer(np.diag(exact), np.diag(exact))) / x.q.shape[0])
    assert np.all(np.abs(emp - exact) < 5 * se)
    p_cov = np.cov(x.p.T)
    assert np.all(np.abs(p_cov - T * np.eye(8)) < 5 * T * np.sqrt(2 / x.q.shape[0]))


def test_masses_scale_momentum_variance():
    d = sample_disorder(3, 1, 2, mass_law=(1.0, 4.0), seed=2)
    x = sample_gibbs(build_phi(d, "fixed"), GibbsParams(1.0), np.random.default_rng(3), masses=d.masses, size=50_000)
    np.testing.assert_allclose(x.p.var(axis=0), d.masses, rtol=0.04)


def test_metropolis_is_symmetric_and_close_to_gaussian_for_weak_anharmonicity():
    d = sample_disorder(4, 1, 2, seed=8)
    phi = build_phi(d, "fixed")
    pot = AnharmonicPotential()
    x = sample_gibbs(phi, GibbsParams(1.0, 0.3, pot, burn_in=300), rngmod.stream(0, rngmod.GIBBS, 0), size=4000)
    se = x.q.std(axis=0) / np.sqrt(x.q.shape[0])
    assert np.all(np.abs(x.q.mean(axis=0)) < 5 * se)
    # the quartic term can only shrink position fluctuations
    assert np.all(x.q.var(axis=0) < np.diag(np.linalg.inv(phi.matrix)) * 1.05)


def test_anharmonic_gibbs_requires_potential():
    with pytest.raises(ParameterError):
        GibbsParams(1.0, 0.5, None)


# -- observables ------------------------------------------------------------------------------


def test_zero_momentum_zero_current():
    d = sample_disorder(6, 1, 2, seed=0)
    s = ChainState(np.random.default_rng(0).standard_normal(6), np.zeros(6))
    obs = observables(s, d, "fixed")
    assert np.all(obs.current == 0) and obs.total_current == 0


def test_two_site_local_current():
    d = DisorderRealization(np.array([1.0, 1.0]))
    obs = observables(ChainState(np.array([1.0, 0.0]), np.array([0.0, 1.0])), d, "fixed")
    assert obs.current[0] == pytest.approx(0.5)


@pytest.mark.parametrize("bc", ["fixed", "periodic"])
@pytest.mark.parametrize("lp", [0.0, 0.4])
def test_local_energies_sum_to_hamiltonian(rng, bc, lp):
    d = sample_disorder(16, 1, 2, mass_law=None, seed=3)
    pot = AnharmonicPotential() if lp else None
    s = random_state(rng, 16)
    obs = observables(s, d, bc, lp, pot)
    # independent evaluation straight from the defining sums
    q, p = s.q, s.p
    qq = np.concatenate([[0.0], q, [0.0]]) if bc == "fixed" else np.concatenate([[q[-1]], q, [q[0]]])
    diffs = np.diff(qq) if bc == "fixed" else np.diff(np.append(q, q[0]))
    h = 0.5 * np.sum(p**2) + 0.5 * np.sum(d.nu * q**2) + 0.5 * np.sum(diffs**2)
    if lp:
        h += lp * (np.sum(pot.U(q)) + np.sum(pot.V(diffs)))
    assert abs(obs.energy.sum() - h) <= 1e-12 * abs(h)
    assert abs(obs.hamiltonian - h) <= 1e-12 * abs(h)


@pytest.mark.parametrize("bc", ["fixed", "periodic"])
def test_current_parity_and_total(rng, bc):
    d = sample_disorder(10, 1, 2, seed=1)
    s = random_state(rng, 10)
    flipped = ChainState(s.q, -s.p)
    a, b = observables(s, d, bc), observables(flipped, d, bc)
    assert b.total_current == pytest.approx(-a.total_current)
    assert b.hamiltonian == pytest.approx(a.hamiltonian)
    assert a.total_current == pytest.approx(a.current.sum())
    assert a.scaled_current == pytest.approx(a.total_current / np.sqrt(10))
    assert a.total_current == pytest.approx(s.q @ current_matrix(10, bc) @ s.p)


def test_flip_of_single_site_conserves_energy(rng):
    d = sample_disorder(7, 1, 2, seed=6)
    pot = AnharmonicPotential()
    s = random_state(rng, 7)
    h0 = hamiltonian(s, d, "fixed", 0.5, pot)
    for k in range(7):
        assert hamiltonian(s.flipped(k), d, "fixed", 0.5, pot) == h0


@pytest.mark.parametrize("bc", [BoundaryCondition.FIXED, BoundaryCondition.PERIODIC])
def test_anharmonic_force_is_minus_gradient(rng, bc):
    pot = AnharmonicPotential()
    q = rng.standard_normal(6)
    eps = 1e-6
    num = np.array([
        (anharmonic_energy(q + eps * e, bc, pot) - anharmonic_energy(q - eps * e, bc, pot)) / (2 * eps)
        for e in np.eye(6)
    ])
    np.testing.assert_allclose(anharmonic_force(q, bc, pot), -num, atol=1e-7)


def test_potential_catalog_validation():
    pot = AnharmonicPotential()
    c = pot.validate(0.5)
    assert 0 < c <= 1
    with pytest.raises(ParameterError):
        AnharmonicPotential("harmonic")
    with pytest.raises(ParameterError):
        pot.validate(-2.0)


def test_ordered_disorder():
    d = ordered_disorder(4, 2.0)
    np.testing.assert_array_equal(d.nu, 2.0)


def test_rng_streams_independent_of_call_order():
    a = rngmod.stream(3, rngmod.NOISE, 5).standard_normal(4)
    _ = rngmod.stream(3, rngmod.NOISE, 4).standard_normal(100)
    b = rngmod.stream(3, rngmod.NOISE, 5).standard_normal(4)
    np.testing.assert_array_equal(a, b)
    assert not np.array_equal(a, rngmod.stream(3, rngmod.GIBBS, 5).standard_normal(4))
