from __future__ import annotations

import math
from collections import Counter

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from walklab import exact_enum as E
from walklab.bridges import PathTuple, breaking_points
from walklab.montecarlo import (annealed_energies, concentration_check, exact_quenched_Z, mc_annealed_Z,
                                mc_free_energy_gap, mc_quenched_logZ, mc_second_moment_ratio, paley_zygmund_check,
                                runs, second_moment_curve, site_codes, sumsq_local_times)
from walklab.potential import Bernoulli, ExponentialMean1, PointMass, annealed_energy, phi_table
from walklab.streams import RngStream
from walklab.strips import (ChainSample, PairPathSampler, StripTables, build_strip_table, normalising_mass,
                            overlap_strip_violations, sigma_statistics, simulate_sigma_chain)
from walklab.walk_model import Path, WalkConfig

EXP = ExponentialMean1()
BERN = Bernoulli(0.5, 1.0)
CFG = WalkConfig(2, 1.0)


def test_annealed_Z_matches_hand_value_and_replays():
    cfg = WalkConfig(1, 0.0)
    a = mc_annealed_Z(cfg, EXP, 1.0, 3, 200_000, RngStream(7, (0,)))
    b = mc_annealed_Z(cfg, EXP, 1.0, 3, 200_000, RngStream(7, (0,)))
    assert a == b
    assert a.to_dict() == b.to_dict()
    assert "wall_time" not in a.to_dict() and "wall_time" in a.to_dict(timing=True)
    assert abs(a.mean - 7 / 48) <= 4 * a.stderr
    again = mc_annealed_Z(cfg, EXP, 1.0, 3, 200_000, a.stream())
    assert again.mean == a.mean


def test_annealed_Z_without_disorder_is_one():
    r = mc_annealed_Z(CFG, EXP, 0.0, 6, 100, RngStream(1))
    assert r.mean == 1.0 and r.stderr == 0.0
    with pytest.raises(ValueError):
        mc_annealed_Z(CFG, EXP, 0.5, 3, 1, RngStream(1))


def test_point_mass_quenched_log_Z_is_deterministic():
    q = mc_quenched_logZ(CFG, PointMass(0.7), 0.4, 9, 50, 5, RngStream(2))
    assert np.allclose(q.log_z, -0.4 * 0.7 * 9, rtol=1e-12)
    assert q.jensen_gap == pytest.approx(0.0, abs=1e-12)


def test_quenched_jensen_gap_nonnegative():
    q = mc_quenched_logZ(CFG, EXP, 0.5, 10, 200, 20, RngStream(3))
    assert q.jensen_gap >= 0
    assert len(q.records) == 20
    assert q.annealed.n_samples == 20


def test_second_moment_ratio_without_disorder():
    r = mc_second_moment_ratio(CFG, EXP, 0.0, 8, 500, (), RngStream(4))
    assert r.mean == 1.0 and r.stderr == 0.0


@pytest.mark.parametrize("dy", [(0,), (2,)])
def test_second_moment_ratio_matches_exact(dy):
    N = 4
    exact = E.exact_second_moment(CFG, EXP, 0.5, (N, N), dy) / E.exact_G(CFG, EXP, 0.5, N) ** 2
    r = mc_second_moment_ratio(CFG, EXP, 0.5, N, 200_000, dy, RngStream(5))
    assert abs(r.mean - exact) <= 4 * r.stderr + 1e-3


def test_second_moment_curve_shares_pairs():
    curve = second_moment_curve(CFG, EXP, 0.5, [2, 4], 2000, (), RngStream(6), keep_samples=True)
    assert [c.params["N"] for c in curve] == [2, 4]
    assert curve[0].extra["samples"].shape == (3, 2000)
    single = mc_second_moment_ratio(CFG, EXP, 0.5, 4, 2000, (), RngStream(6))
    assert single.mean == curve[1].mean
    with pytest.raises(ValueError):
        second_moment_curve(CFG, EXP, 0.5, [2], 10, (1, 1), RngStream(6))


def test_free_energy_gap_invariants():
    g = mc_free_energy_gap(CFG, BERN, 0.5, [2, 4, 8], (100, 40), RngStream(8))
    assert np.all(g.jensen >= -1e-12)
    assert np.allclose(g.coincidence, g.jensen / np.array([2, 4, 8]))
    assert g.envelope_ok
    assert g.c == pytest.approx(float(np.max(g.gap / (1 + 0.5 * np.sqrt([2, 4, 8])))))


def test_exact_quenched_Z_averages_to_annealed():
    cfg, N = WalkConfig(2, 0.5), 5
    seeds = np.random.default_rng(0).integers(0, 2**63, size=4000)
    z = exact_quenched_Z(cfg, BERN, 0.5, N, seeds)
    assert abs(z.mean() - E.exact_G(cfg, BERN, 0.5, N)) <= 4 * z.std(ddof=1) / math.sqrt(z.size)


def test_exact_quenched_Z_point_mass():
    cfg, N = WalkConfig(2, 0.5), 5
    z = exact_quenched_Z(cfg, PointMass(2.0), 0.3, N, [1, 2, 3])
    assert np.allclose(z, math.exp(-0.3 * 2.0 * N), rtol=1e-12)
    # with every path weighted alike the restricted value is the weight times the event probability
    zk = exact_quenched_Z(cfg, PointMass(2.0), 0.3, N, [1], k=1.6)
    assert zk[0] == pytest.approx(E.exact_restricted_G(cfg, PointMass(2.0), 0.3, N, 1.6), rel=1e-12)
    with pytest.raises(ValueError):
        exact_quenched_Z(cfg, BERN, 0.3, N, [1], k=0.5)


def test_paley_zygmund_holds():
    r = paley_zygmund_check(CFG, BERN, 0.5, 6, 2000, RngStream(9))
    assert r.holds
    assert 0 < r.bound <= 0.25
    assert abs(r.second_moment.mean - r.EZ2) <= 4 * r.second_moment.stderr
    assert r.second_moment.extra["exact"] == r.EZ2


@pytest.mark.parametrize("spec,beta", [(EXP, 0.0), (PointMass(1.5), 0.7)])
def test_paley_zygmund_trivial_cases(spec, beta):
    r = paley_zygmund_check(CFG, spec, beta, 4, 50, RngStream(10))
    assert r.p_hat == 1.0
    assert r.bound == pytest.approx(0.25, rel=1e-12)
    assert r.holds


def test_concentration_no_violations():
    r = concentration_check(CFG, BERN, 0.5, 4.0, 6, 500, RngStream(11))
    assert r.violations == 0
    assert r.bound[0] == 4.0
    assert r.median == pytest.approx(float(np.median(r.log_z)))
    assert np.all(np.diff(r.empirical) <= 0)


def test_concentration_without_disorder():
    r = concentration_check(CFG, BERN, 0.0, 4.0, 6, 50, RngStream(12), t_grid=[0.0, 0.1, 1.0])
    assert r.empirical.tolist() == [1.0, 0.0, 0.0]
    assert r.bound.tolist() == [4.0, 0.0, 0.0]
    assert r.violations == 0


def test_concentration_needs_bounded_law():
    with pytest.raises(ValueError):
        concentration_check(CFG, EXP, 0.5, 4.0, 4, 10, RngStream(0))
    with pytest.raises(ValueError):
        concentration_check(CFG, BERN, 0.5, 0.5, 4, 10, RngStream(0))


sites_st = st.lists(st.lists(st.tuples(st.integers(-5, 5), st.integers(-5, 5)), min_size=4, max_size=4),
                    min_size=1, max_size=6)


@given(sites_st)
def test_site_codes_injective_and_runs_count(raw):
    sites = np.array(raw, dtype=np.int64)
    codes = site_codes(sites, 5)
    flat = {tuple(s): c for row, crow in zip(raw, codes) for s, c in zip(row, crow)}
    assert len(set(flat.values())) == len(flat)
    row, key, length = runs(codes)
    for r, data in enumerate(raw):
        expect = Counter(flat[s] for s in data)
        got = {int(k): int(n) for rr, k, n in zip(row, key, length) if rr == r}
        assert got == dict(expect)
    assert np.allclose(sumsq_local_times(codes), [sum(v * v for v in Counter(map(tuple, r)).values()) for r in raw])


@given(st.lists(st.integers(0, 3), min_size=1, max_size=12), st.floats(0.0, 2.0))
def test_vectorised_energy_matches_reference(steps, beta):
    path = Path(2, tuple(steps))
    sites = path.sites[1:][None, :, :]
    e = annealed_energies(site_codes(sites, 12), phi_table(EXP, beta, 13))
    assert e[0] == pytest.approx(annealed_energy(path, EXP, beta), abs=1e-12)


def test_runs_empty():
    row, key, length = runs(np.zeros((3, 0), dtype=np.int64))
    assert row.size == key.size == length.size == 0


# --- strip chain ----------------------------------------------------------------

def test_strip_table_basic_invariants():
    tab = build_strip_table(CFG, EXP, 0.3, (0,), 6)
    assert np.all(tab.prob > 0)
    assert np.all(tab.n1 >= 1) and np.all(tab.n2 >= 1)
    assert np.all(tab.n1 + tab.n2 <= 6)
    assert np.all(tab.zeta >= 0)
    assert len(tab) == tab.prob.size


def test_strip_table_captured_mass_grows_with_cutoff():
    caps = [build_strip_table(CFG, EXP, 0.3, (0,), c, m_hat=0.3).captured for c in (3, 4, 6, 8)]
    assert np.all(np.diff(caps) > 0)
    free = [build_strip_table(CFG, EXP, 0.0, (0,), c).captured for c in (4, 8)]
    assert free[0] < free[1] <= 1.0


def test_far_offsets_never_overlap():
    assert np.all(build_strip_table(CFG, EXP, 0.3, None, 6).zeta == 0)
    assert np.all(build_strip_table(CFG, EXP, 0.3, (10,), 6).zeta == 0)
    tabs = StripTables(CFG, EXP, 0.3, 6)
    assert tabs.key((7,)) is None and tabs.key((3,)) == (3,)
    assert tabs.phi1 == pytest.approx(math.log(1.3))


def test_strip_table_matches_direct_enumeration():
    cutoff, m, dy = 4, 0.25, (1,)
    bp = E.bridge_paths(CFG, EXP, 0.3, cutoff - 1, cutoff - 1)
    paths = [(Path(2, tuple(int(s) for s in bp["steps"][i, : bp["n"][i]])), int(bp["span"][i]), float(bp["weight"][i]))
             for i in range(bp["n"].size)]
    expect: dict[tuple, float] = {}
    for p1, k1, w1 in paths:
        for p2, k2, w2 in paths:
            if k1 != k2 or len(p1) + len(p2) > cutoff:
                continue
            q2 = Path(2, p2.steps, (0, *dy))
            if breaking_points(PathTuple.of(p1, q2)) != {k1}:
                continue
            s1, s2 = [tuple(x) for x in p1.sites[1:]], [tuple(x) for x in q2.sites[1:]]
            shared = set(s1) & set(s2)
            zeta = sum(x in shared for x in s1) + sum(x in shared for x in s2)
            key = (len(p1), len(p2), s2[-1][1] - dy[0] - s1[-1][1], zeta)
            expect[key] = expect.get(key, 0.0) + w1 * w2 * math.exp(m * (len(p1) + len(p2)))
    tab = build_strip_table(CFG, EXP, 0.3, dy, cutoff, m_hat=m)
    got = {(int(a), int(b), int(c[0]), int(z)): float(p)
           for a, b, c, z, p in zip(tab.n1, tab.n2, tab.shift, tab.zeta, tab.prob)}
    assert got.keys() == expect.keys()
    for key, val in expect.items():
        assert got[key] == pytest.approx(val, rel=1e-12)


@pytest.mark.parametrize("dy", [(0,), (1,), (-2,)])
def test_path_sampler_matches_table_without_disorder(dy):
    # without disorder the first strip of conditioned walks follows the exact strip law
    cutoff, n = 6, 20_000
    tab = build_strip_table(CFG, EXP, 0.0, dy, cutoff)
    law: Counter = Counter()
    for a, b, sh, z, p in zip(tab.n1, tab.n2, tab.shift[:, 0], tab.zeta, tab.prob):
        law[int(a + b), int(z), bool(dy[0] + sh == 0)] += float(p)
    st = PairPathSampler(CFG, EXP, 0.0, horizon=200).strips(n, dy, RngStream(13), 1)
    ok = st["valid"][:, 0]
    assert ok.mean() > 0.99
    freq = Counter(zip(st["n"][ok, 0].tolist(), st["zeta"][ok, 0].tolist(), st["eq"][ok, 0].tolist()))
    for key, p in law.items():
        se = math.sqrt(p * (1 - p) / n)
        assert abs(freq[key] / n - p) <= 4 * se + 1e-3, key
    assert sum(v for k, v in freq.items() if k[0] <= cutoff) / n == pytest.approx(tab.captured, abs=0.01)


def test_normalising_mass():
    n = np.array([2, 3, 4, 6])
    phi = np.array([0.5, 1.0, 1.2, 2.0])
    m = normalising_mass(n, phi)
    assert np.mean(np.exp(m * n - phi)) == pytest.approx(1.0, abs=1e-10)
    assert normalising_mass(n, np.zeros(4)) == 0.0


def test_sigma_statistics_by_hand():
    # chain 0 overlaps in strip 2; chain 1 never does and runs out of strips
    zeta = np.array([[0, 3, 0], [0, 0, 0]])
    eq = np.array([[False, True, False], [False, False, False]])
    valid = np.array([[True, True, True], [True, True, False]])
    cs = ChainSample(np.ones((2, 3)), zeta, eq, valid, np.array([False, False]), np.full((2, 3), 2))
    s = sigma_statistics(cs, 0.1)
    assert s.p_sigma.tolist() == [0.0, 0.5, 0.0]
    assert s.rho_max == 5
    assert s.contraction == pytest.approx(0.5 * math.exp(0.5))
    assert s.unknown_mass == 0.5
    assert s.contraction_conservative == pytest.approx(math.exp(0.5))


def test_sigma_chain_zero_steps():
    s = simulate_sigma_chain(StripTables(CFG, EXP, 0.3, 4), 0, RngStream(0), n_chains=10)
    assert s.p_sigma.size == 0 and s.residual_mass == 1.0 and s.n_chains == 10


def test_sigma_chain_from_tables_replays():
    tabs = StripTables(CFG, EXP, 0.3, 5)
    a = simulate_sigma_chain(tabs, 4, RngStream(14), n_chains=500)
    b = simulate_sigma_chain(tabs, 4, RngStream(14), n_chains=500)
    assert all(np.array_equal(getattr(a, f), getattr(b, f), equal_nan=True) for f in a.__dataclass_fields__)
    assert 0 <= a.contraction <= a.contraction_conservative
    assert a.p_sigma.sum() <= 1 + 1e-12


def test_overlap_strip_bound_on_small_enumeration():
    for dy in [(0,), (1,)]:
        res = overlap_strip_violations(CFG, EXP, 0.5, 2, 5, dy)
        assert res["violations"] == 0
        assert res["pairs"] > 100
