import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ismm.errors import DegenerateIndex, InsufficientData, InsufficientHistory
from ismm.index import (IndexBinning, IndexParams, discretize_index,
                        fit_index_bins, index_at_time, index_at_transition,
                        index_series)
from ismm.states import EmbeddedChain

from test_states import sorted_quantile


def test_m1_hand_example():
    # J_{n-2} has representative -1, J_{n-1} has 2; gaps 3 then 2
    ch = EmbeddedChain([0, 1, 2], [0, 3, 5])
    p = IndexParams(1, [-1.0, 2.0, 0.0])
    assert index_at_transition(ch, 2, p) == pytest.approx(2.2, abs=1e-15)


def test_m1_weights_sum_to_one():
    T = np.array([0, 3, 5])
    w1 = (T[2] - T[1]) / (T[2] - T[0])
    w2 = (T[1] - T[0]) / (T[2] - T[0])
    assert w1 + w2 == 1.0


@pytest.mark.parametrize("m", [1, 3, 7])
def test_constant_representative_gives_square(m):
    rng = np.random.default_rng(m)
    T = np.cumsum(rng.integers(1, 9, size=30))
    J = np.arange(30) % 3
    ch = EmbeddedChain(J, T)
    p = IndexParams(m, [-0.5, 0.5, 0.5])
    for n in range(m + 1, 30):
        assert index_at_transition(ch, n, p) == pytest.approx(0.25, rel=1e-14)


def test_insufficient_history():
    ch = EmbeddedChain([0, 1, 0], [0, 1, 2])
    with pytest.raises(InsufficientHistory) as exc:
        index_at_transition(ch, 2, IndexParams(2, [1.0, 2.0]))
    assert exc.value.needed == 4


def test_index_at_time_at_transition_matches():
    ch = EmbeddedChain([0, 1, 0, 1, 0], [0, 3, 5, 9, 10])
    p = IndexParams(1, [-1.0, 2.0])
    for n in range(2, 5):
        assert index_at_time(ch, ch.T[n], p) == index_at_transition(ch, n, p)


def test_index_at_time_mid_sojourn_hand_trace():
    ch = EmbeddedChain([0, 1, 0, 1], [0, 3, 5, 9])
    p = IndexParams(1, [-1.0, 2.0])
    # window: current partial sojourn in state 0 (5..7) plus state 1 (3..5)
    assert index_at_time(ch, 7, p) == pytest.approx((1 * 2 + 4 * 2) / 4)


def test_index_at_time_drifts_to_current_reward():
    ch = EmbeddedChain([0, 1, 0], [0, 2, 4])
    p = IndexParams(1, [0.0, 3.0])  # rewards 0 and 9
    values = [index_at_time(ch, t, p) for t in range(5, 400)]
    assert np.all(np.diff(values) < 0)
    assert values[-1] < 0.05


def test_index_series_matches_pointwise():
    rng = np.random.default_rng(4)
    J = rng.integers(0, 5, size=200)
    J = J[np.r_[True, J[1:] != J[:-1]]]
    ch = EmbeddedChain(J, np.cumsum(rng.integers(1, 6, size=len(J))))
    p = IndexParams(4, [-3.0, -1.0, 0.0, 1.0, 3.0])
    U = index_series(ch, p)
    assert np.all(np.isnan(U[:5]))
    for n in range(5, len(J)):
        assert U[n] == pytest.approx(index_at_transition(ch, n, p), rel=1e-12)


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 6),
       st.lists(st.tuples(st.integers(0, 4), st.integers(1, 20)),
                min_size=8, max_size=40),
       st.lists(st.floats(-5, 5), min_size=5, max_size=5))
def test_convex_combination_bounds(m, steps, reps):
    J = [s for s, _ in steps]
    T = np.cumsum([0] + [d for _, d in steps[:-1]])
    ch = EmbeddedChain(J, T)
    p = IndexParams(m, reps)
    f = p.rewards
    for n in range(m + 1, len(J)):
        u = index_at_transition(ch, n, p)
        assert f.min() - 1e-9 <= u <= f.max() + 1e-9
        assert index_at_time(ch, ch.T[n], p) == u
        for t in range(ch.T[n - 1] + 1, ch.T[n]):
            if n - 1 - m >= 0:
                assert f.min() - 1e-9 <= index_at_time(ch, t, p) <= f.max() + 1e-9


@settings(max_examples=30, deadline=None)
@given(st.lists(st.integers(1, 10), min_size=12, max_size=30))
def test_constant_history_independent_of_m(gaps):
    J = np.arange(len(gaps)) % 2
    ch = EmbeddedChain(J, np.cumsum(gaps))
    for m in (1, 2, 5, 10):
        p = IndexParams(m, [-0.7, 0.7])
        assert index_at_transition(ch, len(gaps) - 1, p) == \
            pytest.approx(0.49, rel=1e-12)


def test_fit_index_bins_uniform_grid():
    values = np.arange(100.0)
    bins = fit_index_bins(values, 5)
    expected = [sorted_quantile(values, k / 5) for k in range(1, 5)]
    assert np.allclose(bins.boundaries, expected)
    assert np.allclose(bins.boundaries, [20, 40, 60, 80], rtol=0, atol=1.0)
    assert bins.V == 5


def test_fit_index_bins_errors():
    with pytest.raises(DegenerateIndex):
        fit_index_bins(np.ones(100), 5)
    with pytest.raises(InsufficientData):
        fit_index_bins(np.arange(20.0), 5)
    assert fit_index_bins(np.ones(3), 1).V == 1


def test_discretize_index_levels():
    bins = IndexBinning([1.0, 2.0, 3.0, 4.0])
    assert discretize_index(-7.0, bins) == 0
    assert discretize_index(9.0, bins) == 4
    assert discretize_index(2.5, bins) == 2
    # tie: boundaries strictly below 2.0 are {1.0}
    assert discretize_index(2.0, bins) == 1
    assert discretize_index(np.array([0.5, 4.5]), bins).tolist() == [0, 4]


def test_params_validation():
    with pytest.raises(ValueError):
        IndexParams(0, [1.0])
    with pytest.raises(ValueError):
        IndexParams(1, [1.0], f_mode="abs")
