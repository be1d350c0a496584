from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from walklab.streams import RngStream

seeds = st.integers(0, 2**64 - 1)
ids = st.lists(st.integers(0, 1000), max_size=3).map(tuple)


@given(seeds, ids)
def test_same_key_same_draws(seed, sid):
    assert np.array_equal(RngStream(seed, sid).gen.random(8), RngStream(seed, sid).gen.random(8))


@given(seeds, ids, st.integers(0, 1000), st.integers(0, 1000))
def test_children_differ(seed, sid, i, j):
    a = RngStream(seed, sid).child(i).gen.random(4)
    b = RngStream(seed, sid).child(j).gen.random(4)
    assert np.array_equal(a, b) == (i == j)


def test_child_is_keyed_by_path():
    s = RngStream(3, (1,))
    assert s.child(2).stream_id == (1, 2)
    assert np.array_equal(s.child(2).gen.random(3), RngStream(3, (1, 2)).gen.random(3))


def test_distinct_seeds_differ():
    assert not np.array_equal(RngStream(1).gen.random(4), RngStream(2).gen.random(4))


def test_child_draws_look_independent():
    x = RngStream(5).child(0).gen.standard_normal(20_000)
    y = RngStream(5).child(1).gen.standard_normal(20_000)
    assert abs(np.corrcoef(x, y)[0, 1]) < 4 / np.sqrt(x.size)


def test_replay_from_counter():
    s = RngStream(9, (4,))
    first = s.gen.random(5)
    again = s.replay().gen.random(5)
    assert np.array_equal(first, again)
    assert s == s.replay()


def test_negative_seed_rejected():
    with pytest.raises(ValueError):
        RngStream(-1)
