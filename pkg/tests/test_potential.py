from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import integrate

from walklab.potential import (Bernoulli, Environment, ExponentialMean1, PointMass, TabulatedPhi, TrapLimit,
                               annealed_energy, coupled_energy, overlap_psi, phi, phi_table,
                               quenched_energy, site_uniforms, validate_spec)
from walklab.walk_model import Path, local_times

SPECS = [Bernoulli(0.5, 1.0), Bernoulli(0.2, 3.0), ExponentialMean1(), PointMass(0.7), TrapLimit(0.4),
         TabulatedPhi((0.0, 1.0, 3.0), (0.0, 0.8, 1.5))]
SAMPLEABLE = SPECS[:4]

betas = st.floats(0.0, 3.0)
times = st.floats(0.0, 50.0)


def _paths(d: int, max_len: int = 14):
    return st.lists(st.integers(0, 2 * d - 1), max_size=max_len).map(lambda s: Path(d, tuple(s)))


@pytest.mark.parametrize("beta,t", [(0.5, 1.0), (1.0, 3.0), (2.0, 0.25)])
def test_phi_exponential_against_quadrature(beta, t):
    val, _ = integrate.quad(lambda v: math.exp(-v) * math.exp(-beta * t * v), 0, math.inf)
    assert phi(ExponentialMean1(), beta, t) == pytest.approx(-math.log(val), rel=1e-10)


@given(st.floats(0.01, 0.99), st.floats(0.1, 5.0), betas, times)
def test_phi_bernoulli_is_log_laplace(rho, v, beta, t):
    expect = -math.log((1 - rho) + rho * math.exp(-beta * t * v))
    assert phi(Bernoulli(rho, v), beta, t) == pytest.approx(expect, rel=1e-12, abs=1e-15)


@pytest.mark.parametrize("spec", SPECS, ids=lambda s: type(s).__name__)
def test_phi_zero_at_origin_and_beta_zero(spec):
    assert phi(spec, 1.3, 0.0) == 0.0
    assert np.all(phi_table(spec, 0.0, 10) == 0.0)


@pytest.mark.parametrize("spec", SPECS, ids=lambda s: type(s).__name__)
@given(beta=betas, t1=times, t2=times)
def test_phi_subadditive(spec, beta, t1, t2):
    assert phi(spec, beta, t1 + t2) <= phi(spec, beta, t1) + phi(spec, beta, t2) + 1e-12


@pytest.mark.parametrize("spec", SPECS, ids=lambda s: type(s).__name__)
def test_phi_table_matches_phi(spec):
    tab = phi_table(spec, 0.8, 12)
    assert tab.shape == (13,)
    assert np.allclose(tab, [phi(spec, 0.8, t) for t in range(13)], rtol=1e-15, atol=0)
    assert np.all(np.diff(tab) >= 0)


def test_phi_rejects_negative_arguments():
    with pytest.raises(ValueError):
        phi(ExponentialMean1(), -1.0, 1.0)
    with pytest.raises(ValueError):
        phi(ExponentialMean1(), 1.0, -1.0)


@pytest.mark.parametrize("bad", [lambda: Bernoulli(1.0, 1.0), lambda: Bernoulli(0.5, 0.0), lambda: PointMass(0.0),
                                 lambda: TrapLimit(-1.0), lambda: TabulatedPhi((1.0, 2.0), (0.0, 1.0))])
def test_invalid_laws_raise(bad):
    with pytest.raises(ValueError):
        bad()


def test_validate_spec_reports():
    exp = validate_spec(ExponentialMean1())
    assert exp.all_pass and exp.no_full_atom_at_zero
    bern = validate_spec(Bernoulli(0.5, 1.0))
    assert not bern.unbounded and bern.no_full_atom_at_zero
    pm = validate_spec(PointMass(1.0))
    assert not pm.sublinear
    trap = validate_spec(TrapLimit(1.0))
    assert trap.no_full_atom_at_zero is None


@pytest.mark.parametrize("spec", SAMPLEABLE, ids=lambda s: type(s).__name__)
def test_quantile_sampling_matches_phi(spec):
    u = (np.arange(200_000) + 0.5) / 200_000
    v = spec.quantile(u)
    for s in (0.3, 1.0, 2.5):
        assert -math.log(np.mean(np.exp(-s * v))) == pytest.approx(float(spec.f(np.asarray(s))), rel=2e-3)


def test_site_uniforms_are_pure_functions_of_seed_and_site():
    sites = np.array([[0, 0], [1, -2], [-5, 7], [0, 0]])
    u = site_uniforms(9, sites)
    assert np.all((u > 0) & (u < 1))
    assert u[0] == u[3]
    assert np.array_equal(u, site_uniforms(9, sites))
    assert not np.array_equal(u, site_uniforms(10, sites))


def test_site_uniforms_look_uniform():
    g = np.stack(np.meshgrid(np.arange(-100, 100), np.arange(-100, 100)), axis=-1).reshape(-1, 2)
    u = site_uniforms(1, g)
    hist = np.bincount((u * 10).astype(int), minlength=10) / u.size
    assert np.all(np.abs(hist - 0.1) < 0.01)


def test_environment_repeat_queries_identical():
    env = Environment(Bernoulli(0.5, 1.0), 42)
    a = [env[(i, -i)] for i in range(20)]
    b = [env[(i, -i)] for i in range(20)]
    assert a == b and len(env) == 20
    assert np.array_equal(env.values(np.array([[i, -i] for i in range(20)])), a)


def test_energies_by_hand():
    spec = ExponentialMean1()
    p = Path.parse("+-+")  # visits 1, 0, 1
    assert annealed_energy(p, spec, 1.0) == pytest.approx(math.log(3) + math.log(2), rel=1e-15)
    env = Environment(PointMass(2.0), 0)
    assert quenched_energy(p, env, 0.5) == pytest.approx(3.0)
    q = Path.parse("++")  # visits 1, 2
    assert coupled_energy(p, q, spec, 1.0) == pytest.approx(math.log(4) + math.log(2) + math.log(2))
    psi, overlap = overlap_psi(p, q, spec, 1.0)
    assert psi == pytest.approx(math.log(3) + math.log(2) - math.log(4))
    assert overlap == 3


@given(_paths(2), _paths(2), st.floats(0.0, 2.0))
def test_psi_bounds(p1, p2, beta):
    spec = ExponentialMean1()
    psi, overlap = overlap_psi(p1, p2, spec, beta)
    assert psi >= -1e-12
    assert psi <= phi(spec, beta, 1.0) * overlap + 1e-12
    total = annealed_energy(p1, spec, beta) + annealed_energy(p2, spec, beta) - coupled_energy(p1, p2, spec, beta)
    assert psi == pytest.approx(total, abs=1e-9)


@pytest.mark.parametrize("spec", SPECS, ids=lambda s: type(s).__name__)
@given(path=_paths(2, 16), beta=st.floats(0.0, 2.0), data=st.data())
def test_energy_bounds_and_splits(spec, path, beta, data):
    N = len(path)
    phi1 = phi(spec, beta, 1.0)
    e = annealed_energy(path, spec, beta)
    rng = len(local_times(path).support)
    assert phi1 * rng - 1e-12 <= e <= phi1 * N + 1e-12
    M = data.draw(st.integers(0, N))
    head, tail = annealed_energy(path, spec, beta, 0, M), annealed_energy(path, spec, beta, M, N)
    assert e <= head + tail + 1e-12
    if not (local_times(path, 0, M).support & local_times(path, M, N).support):
        assert e == pytest.approx(head + tail, abs=1e-12)
    M1 = data.draw(st.integers(0, N))
    M2 = data.draw(st.integers(M1, N))
    assert e >= annealed_energy(path, spec, beta, M1, M2) - 1e-12
