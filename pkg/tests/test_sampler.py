import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import chisquare

from pmilm.corpus import UnigramDistribution
from pmilm.sampler import build_alias, draw, log_prob


def _dist(probs):
    probs = np.asarray(probs, dtype=float)
    return UnigramDistribution(probs / probs.sum(), np.ones(len(probs), dtype=int))


def test_uniform_two_point_table():
    table = build_alias(_dist([0.5, 0.5]))
    np.testing.assert_array_equal(table.prob, [1.0, 1.0])


def test_zero_probability_never_drawn():
    table = build_alias(_dist([1.0, 0.0]))
    samples = draw(table, np.random.default_rng(0), 10_000)
    assert (samples == 0).all()


def test_zero_probability_in_the_middle():
    table = build_alias(_dist([0.3, 0.0, 0.2, 0.0, 0.5]))
    samples = draw(table, np.random.default_rng(1), 100_000)
    assert not np.isin(samples, [1, 3]).any()


def test_three_quarter_frequency():
    table = build_alias(_dist([0.75, 0.25]))
    freq = (draw(table, np.random.default_rng(2), 1_000_000) == 0).mean()
    assert 0.748 <= freq <= 0.752


def test_single_entry_table():
    table = build_alias(_dist([1.0]))
    assert (draw(table, np.random.default_rng(3), 100) == 0).all()


def test_uniform_four_chi_square():
    table = build_alias(_dist([1, 1, 1, 1]))
    counts = np.bincount(draw(table, np.random.default_rng(4), 100_000), minlength=4)
    assert chisquare(counts).pvalue > 0.001


def test_same_seed_same_sequence():
    table = build_alias(_dist(np.arange(1, 20)))
    a = draw(table, np.random.default_rng(99), 1000)
    b = draw(table, np.random.default_rng(99), 1000)
    np.testing.assert_array_equal(a, b)


def test_draw_shapes():
    table = build_alias(_dist([1, 2, 3]))
    assert draw(table, np.random.default_rng(0), (2, 3, 4)).shape == (2, 3, 4)
    with pytest.raises(ValueError):
        draw(table, np.random.default_rng(0), 0)


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(0.0, 100.0), min_size=1, max_size=60).filter(lambda w: sum(w) > 0))
def test_table_reconstructs_distribution(weights):
    dist = _dist(weights)
    table = build_alias(dist)
    np.testing.assert_allclose(table.implied_probs(), dist.probs, atol=1e-9)
    assert ((table.prob >= 0) & (table.prob <= 1)).all()
    # zero-probability ids must be unreachable: neither own cell nor alias target
    zero = dist.probs == 0
    assert (table.prob[zero] == 0).all()
    assert not zero[table.alias[table.prob < 1]].any()


def test_log_prob_values():
    dist = _dist([0.25, 0.25, 0.5])
    assert log_prob(dist, 0) == pytest.approx(-1.3862943611198906)
    assert log_prob(_dist([1.0]), 0) == 0.0
    V = 10000
    assert log_prob(_dist(np.ones(V)), 17) == pytest.approx(-9.210340371976182, abs=1e-12)
    assert math.isclose(-9.210340371976182, -math.log(V))


def test_log_prob_zero_is_error():
    dist = UnigramDistribution.from_counts([2, 0, 1])
    with pytest.raises(ValueError, match="zero noise probability"):
        log_prob(dist, 1)
    with pytest.raises(ValueError):
        log_prob(dist, np.array([0, 1, 2]))
