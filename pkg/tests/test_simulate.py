import io

import numpy as np
import pytest

from ismm.acf import acf_squared, autocorrelation
from ismm.errors import InsufficientHistory, UnreachableState
from ismm.index import IndexBinning
from ismm.kernel import IndexedKernel, estimate_kernel
from ismm.index import IndexParams, index_series
from ismm.model import fit_model, initial_history
from ismm.simulate import (BenchmarkParams, SimConfig, expand_to_minutes,
                           make_regime_benchmark, make_rng, simulate,
                           simulate_returns)
from ismm.states import EmbeddedChain


def three_state_kernel(t_max=10):
    """Hand-built kernel: level 1 (high index) favours big moves, short stays."""
    S, V = 3, 2
    p = np.zeros((S, V, S))
    p[0, 0] = [0, .7, .3]
    p[0, 1] = [0, .3, .7]
    p[1, 0] = [.5, 0, .5]
    p[1, 1] = [.45, 0, .55]
    p[2, 0] = [.3, .7, 0]
    p[2, 1] = [.7, .3, 0]
    t = np.arange(1, t_max + 1)
    slow = 0.3 * 0.7 ** (t - 1)
    fast = 0.6 * 0.4 ** (t - 1)
    slow[-1] += 1 - slow.sum()
    fast[-1] += 1 - fast.sum()
    pmf = np.empty((S, V, S, t_max))
    pmf[:, 0] = slow
    pmf[:, 1] = fast
    pmf[1, 0, 0] = np.roll(slow, 1)
    return IndexedKernel.from_probabilities(
        p, pmf, IndexBinning([0.45]), m=5, representatives=[-1.0, 0.0, 1.0])


def alternating_history(m, S=3):
    J = [(k % 2) * 2 for k in range(m + 2)]
    return EmbeddedChain(J, np.arange(m + 2) - (m + 1))


def test_deterministic_kernel_alternates():
    p = np.zeros((2, 1, 2))
    p[0, 0, 1] = p[1, 0, 0] = 1
    pmf = np.zeros((2, 1, 2, 4))
    pmf[..., 1] = 1.0
    k = IndexedKernel.from_probabilities(p, pmf, IndexBinning([]), m=1,
                                         representatives=[-1.0, 1.0])
    res = simulate(k, SimConfig(20, 0, EmbeddedChain([0, 1, 0], [-4, -2, 0])))
    assert res.chain.J.tolist() == [0, 1] * 5
    assert np.all(np.diff(res.chain.T) == 2)
    assert res.minute_states.tolist() == [0, 0, 1, 1] * 5
    assert res.minute_returns.tolist() == [-1.0, -1.0, 1.0, 1.0] * 5


def test_same_seed_identical():
    k = three_state_kernel()
    cfg = SimConfig(5000, 42, alternating_history(5))
    a, b = simulate(k, cfg), simulate(k, cfg)
    assert np.array_equal(a.chain.T, b.chain.T)
    assert np.array_equal(a.minute_returns, b.minute_returns)
    c = simulate(k, SimConfig(5000, 43, alternating_history(5)))
    assert not np.array_equal(a.minute_states, c.minute_states)


def test_streams_are_independent_of_order():
    a = make_rng(5, 10, 3).random(4)
    make_rng(5, 10, 2).random(100)
    assert np.array_equal(a, make_rng(5, 10, 3).random(4))
    assert not np.array_equal(a, make_rng(5, 10, 4).random(4))


def test_result_shapes_and_provenance():
    k = three_state_kernel()
    res = simulate(k, SimConfig(1000, 1, alternating_history(5)))
    assert len(res.minute_states) == 1000
    assert res.chain.T[0] == 0 and res.chain.T[-1] < 1000
    assert len(res.provenance) == len(res.chain)
    assert set(res.provenance) == {"direct"}
    flat, rets = expand_to_minutes(res.chain, k.representatives, 1000)
    assert np.array_equal(flat, res.minute_states)
    buf = io.StringIO()
    res.write_csv(buf)
    assert buf.getvalue().splitlines()[0] == "minute,state,return"


def test_insufficient_init_history():
    k = three_state_kernel()
    with pytest.raises(InsufficientHistory):
        simulate(k, SimConfig(10, 0, alternating_history(2)))
    with pytest.raises(ValueError):
        SimConfig(0, 0, alternating_history(5))


def test_unreachable_state_raises():
    k = three_state_kernel()
    k.visits[2] = 0
    k.backoff_visits[2] = 0
    with pytest.raises(UnreachableState):
        simulate(k, SimConfig(10_000, 0, alternating_history(5)))


def test_expand_to_minutes_examples():
    states, _ = expand_to_minutes(EmbeddedChain([2, 3], [0, 3]),
                                  np.arange(5.0), 5)
    assert states.tolist() == [2, 2, 2, 3, 3]
    states, rets = expand_to_minutes(EmbeddedChain([1], [0]), [0, 7.0], 4)
    assert states.tolist() == [1] * 4 and rets.tolist() == [7.0] * 4


def _transitions_from(res, i):
    J, T = res.chain.J, res.chain.T
    sel = np.flatnonzero(J[:-1] == i)
    return J[sel + 1], T[sel + 1] - T[sel]


def test_next_state_frequencies_match_p():
    k = three_state_kernel()
    res = simulate(k, SimConfig(700_000, 9, alternating_history(5)),
                   fixed_level=1)
    nxt, _ = _transitions_from(res, 0)
    assert len(nxt) > 100_000
    n = len(nxt)
    for j, pj in enumerate(k.p[0, 1]):
        freq = np.mean(nxt == j)
        se = np.sqrt(pj * (1 - pj) / n)
        assert abs(freq - pj) <= max(3 * se, 0.0)


def test_sojourn_ecdf_matches_G():
    k = three_state_kernel()
    res = simulate(k, SimConfig(2_000_000, 11, alternating_history(5)),
                   fixed_level=0)
    nxt, soj = _transitions_from(res, 0)
    soj = soj[nxt == 1]
    assert len(soj) > 100_000
    G = k.conditional_wait(0, 0, 1)
    ecdf = np.array([np.mean(soj <= t) for t in range(1, k.t_max + 1)])
    assert np.max(np.abs(ecdf - G)) < 0.02


def test_round_trip_recovers_kernel():
    k = three_state_kernel()
    res = simulate(k, SimConfig(600_000, 3, alternating_history(5)))
    h = alternating_history(5)
    J = np.concatenate([h.J, res.chain.J[1:]])
    T = np.concatenate([h.T, res.chain.T[1:]]) - h.T[0]
    ch = EmbeddedChain(J, T)
    U = index_series(ch, IndexParams(5, k.representatives))
    est = estimate_kernel(ch, U, k.index_bins, t_max=10, m=5, n_states=3)
    well = est.visits >= 2000
    assert well.sum() >= 4
    se = np.sqrt(k.p * (1 - k.p) / np.maximum(est.visits, 1)[..., None])
    assert np.all((np.abs(est.p - k.p) <= 4 * se + 1e-12)[well])


def test_benchmark_deterministic_and_validated():
    p = BenchmarkParams(n_minutes=1000)
    a = make_regime_benchmark(p, 1).concatenated()
    assert np.array_equal(a, make_regime_benchmark(p, 1).concatenated())
    assert not np.array_equal(a, make_regime_benchmark(p, 2).concatenated())
    for bad in (-0.1, 1.0, 1.5):
        with pytest.raises(ValueError):
            BenchmarkParams(rho=bad)


def test_benchmark_without_persistence_has_flat_acf():
    N = 200_000
    rs = make_regime_benchmark(BenchmarkParams(n_minutes=N, rho=0.0), 0)
    sigma = acf_squared(rs, 10).sigma
    assert np.all(np.abs(sigma) < 4 / np.sqrt(N))


def test_benchmark_persistence_clusters_volatility():
    rs = make_regime_benchmark(BenchmarkParams(n_minutes=500_000, rho=0.99), 0)
    assert acf_squared(rs, 1).sigma[0] > 0.1


def test_index_feedback_is_live(small_data):
    k = fit_model(small_data, 10)
    init = initial_history(small_data, k)
    full, fixed = [], []
    for r in range(6):
        a = simulate_returns(k, init, 60_000, 0, stream=(1, r))
        b = simulate_returns(k, init, 60_000, 0, stream=(1, r), fixed_level=2)
        full.append(autocorrelation(a ** 2, 20)[-1])
        fixed.append(autocorrelation(b ** 2, 20)[-1])
    se = np.sqrt(np.var(full, ddof=1) / 6 + np.var(fixed, ddof=1) / 6)
    assert np.mean(full) - np.mean(fixed) > 3 * se
