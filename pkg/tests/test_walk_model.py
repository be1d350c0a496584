from __future__ import annotations

import math

import mpmath
import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from walklab.streams import RngStream
from walklab.walk_model import (Path, WalkConfig, chernoff_level_tail, escape_prob, green_horizon,
                                green_sum, hitting_mc, hitting_prob_neg, local_times, projected_rate,
                                sample_path, sample_steps, step_law, step_vectors)

dims = st.integers(1, 5)
drifts = st.floats(0.0, 3.0)
pos_drifts = st.floats(0.05, 3.0)


@given(dims, drifts)
def test_step_law_normalises_and_tilts(d, h):
    law = step_law(WalkConfig(d, h))
    assert law.probs().sum() == pytest.approx(1.0, abs=1e-15)
    assert law.p_plus * math.exp(-h) == pytest.approx(law.p_minus * math.exp(h), rel=1e-14)
    sigma = math.exp(h) + math.exp(-h) + 2 * d - 2
    assert law.lambda_h == pytest.approx(math.log(sigma / (2 * d)), abs=1e-14)
    assert law.p_lazy == pytest.approx(1 - law.p_plus - law.p_minus, abs=1e-15)


@given(dims)
def test_zero_drift_is_simple_random_walk(d):
    law = step_law(WalkConfig(d, 0.0))
    assert np.allclose(law.probs(), 1 / (2 * d), atol=0, rtol=1e-15)
    assert law.lambda_h == 0.0


def test_step_vectors_are_unit_moves():
    v = step_vectors(3)
    assert v.shape == (6, 3)
    assert np.all(np.abs(v).sum(axis=1) == 1)
    assert np.all(v[0::2] + v[1::2] == 0)


@pytest.mark.parametrize("bad", [(0, 0.5), (2, -0.1), (2, math.inf), (1.5, 0.3)])
def test_walk_config_rejects_bad_values(bad):
    with pytest.raises(ValueError):
        WalkConfig(*bad)


@given(dims, pos_drifts)
def test_escape_probability_matches_generating_function(d, h):
    # sum_m P[S_1(m)=0] s^m = 1/sqrt((1 - p0 s)^2 - 4 p+ p- s^2); at s=1 its reciprocal is alpha
    law = step_law(WalkConfig(d, h))
    mp = mpmath.mpf
    alpha = mpmath.sqrt((1 - mp(law.p_lazy)) ** 2 - 4 * mp(law.p_plus) * mp(law.p_minus))
    assert escape_prob(WalkConfig(d, h)) == pytest.approx(float(alpha), rel=1e-12)


@given(st.integers(1, 3), st.floats(0.2, 2.0))
def test_green_sum_certificate(d, h):
    cfg = WalkConfig(d, h)
    M = green_horizon(cfg, 1e-9)
    gs = green_sum(cfg, M)
    true = 1 / escape_prob(cfg)
    assert gs.value <= true + 1e-12
    assert true - gs.value <= gs.certified_tail + 1e-12
    assert gs.certified_tail <= 1e-9


def test_green_horizon_needs_drift():
    with pytest.raises(ValueError):
        green_horizon(WalkConfig(2, 0.0), 1e-6)


@given(dims, pos_drifts, st.integers(1, 6))
def test_hitting_probability_is_gamblers_ruin(d, h, L):
    law = step_law(WalkConfig(d, h))
    assert hitting_prob_neg(WalkConfig(d, h), L) == pytest.approx((law.p_minus / law.p_plus) ** L, rel=1e-12)


def _level_mass_after(law, level, horizon, upto=4000):
    """Exact sum_{horizon < n <= upto} P[S_1(n) = level] by convolution."""
    size = 2 * upto + 1
    dist = np.zeros(size)
    dist[upto] = 1.0
    kern = np.array([law.p_minus, law.p_lazy, law.p_plus])
    total = 0.0
    for n in range(1, upto + 1):
        dist = np.convolve(dist, kern, mode="same")
        if n > horizon:
            total += dist[upto + level]
    return total


@pytest.mark.parametrize("d,h,level,horizon", [(1, 0.5, -1, 10), (2, 1.0, 3, 20), (3, 0.5, -2, 40), (2, 0.3, 5, 60)])
def test_chernoff_tail_bounds_exact_tail(d, h, level, horizon):
    law = step_law(WalkConfig(d, h))
    bound, theta = chernoff_level_tail(law, level, horizon)
    assert 0 < theta < math.log(law.p_plus / law.p_minus)
    assert _level_mass_after(law, level, horizon, 1500) <= bound


def test_projected_rate_is_minimum_at_theta_h():
    law = step_law(WalkConfig(2, 0.7))
    thetas = np.linspace(0.01, 1.39, 200)
    assert projected_rate(law) <= min(law.rho(t) for t in thetas) + 1e-15
    assert projected_rate(law) == pytest.approx(law.rho(0.7), rel=1e-14)


def test_hitting_mc_matches_and_replays():
    cfg = WalkConfig(2, 0.5)
    a = hitting_mc(cfg, 1, 50_000, RngStream(3, (1,)))
    b = hitting_mc(cfg, 1, 50_000, RngStream(3, (1,)))
    assert a == b
    assert abs(a.p_hat - math.exp(-1.0)) <= max(3 * a.stderr, 5e-3)
    assert a.residual_bound <= 1e-4


def test_hitting_mc_needs_drift():
    with pytest.raises(ValueError):
        hitting_mc(WalkConfig(1, 0.0), 1, 10, RngStream(0))


def test_path_parse_and_sites():
    p = Path.parse("++-++")
    assert p.heights.tolist() == [0, 1, 2, 1, 2, 3]
    q = Path.from_moves(2, [1, 2, -1, -2])
    assert q.sites.tolist() == [[0, 0], [1, 0], [1, 1], [0, 1], [0, 0]]
    with pytest.raises(ValueError):
        Path(2, (4,))


def test_local_times_exclude_time_zero():
    lt = local_times(Path.from_moves(2, [1, 2, -1, -2]))
    assert lt[(0, 0)] == 1 and lt[(1, 0)] == 1
    assert lt.total == 4 and lt.sumsq() == 4
    lt = local_times(Path.parse("+-+-"))
    assert dict(lt.counts) == {(1,): 2, (0,): 2}


@given(st.integers(1, 3), st.lists(st.integers(0, 5), min_size=0, max_size=30), st.data())
def test_local_times_sum_to_window(d, raw, data):
    steps = tuple(s % (2 * d) for s in raw)
    p = Path(d, steps)
    M = data.draw(st.integers(0, len(steps)))
    N = data.draw(st.integers(M, len(steps)))
    lt = local_times(p, M, N)
    assert sum(lt.counts.values()) == N - M == lt.total
    assert len(lt.support) <= N - M
    assert lt.sumsq() >= N - M


def test_sample_steps_frequencies():
    cfg = WalkConfig(2, 1.0)
    steps = sample_steps(cfg, 2000, 100, RngStream(11))
    freq = np.bincount(steps.ravel(), minlength=4) / steps.size
    p = step_law(cfg).probs()
    assert np.all(np.abs(freq - p) <= 5 * np.sqrt(p * (1 - p) / steps.size))


def test_sample_path_replays():
    cfg = WalkConfig(3, 0.4)
    assert sample_path(cfg, 25, RngStream(5, (2,))) == sample_path(cfg, 25, RngStream(5, (2,)))
    assert len(sample_path(cfg, 0, RngStream(5))) == 0
