import io

import numpy as np
import pytest

from ismm.errors import InsufficientData, MissingCell, UnreachableState
from ismm.index import IndexBinning
from ismm.kernel import (IndexedKernel, conditional_wait, embedded_probs,
                         estimate_kernel, lookup_with_backoff, sojourn_cdf)
from ismm.model import fit_model
from ismm.states import EmbeddedChain

LEVELS = IndexBinning([1.0])


def chain_from_sojourns(J, sojourns):
    return EmbeddedChain(J, np.concatenate([[0], np.cumsum(sojourns)]))


@pytest.fixture
def hand_kernel():
    # four departures from state 0, all to state 1, sojourns 1, 1, 2, 3
    J = [0, 1, 0, 1, 0, 1, 0, 1]
    ch = chain_from_sojourns(J, [1, 4, 1, 4, 2, 4, 3])
    U = np.zeros(len(J))
    return estimate_kernel(ch, U, LEVELS, t_max=4, n_states=3, burn_in=0,
                           min_visits=1)


def test_hand_count(hand_kernel):
    k = hand_kernel
    assert k.visits[0, 0] == 4
    assert k.p[0, 0].tolist() == [0.0, 1.0, 0.0]
    assert k.Q[0, 0, 1].tolist() == [0.5, 0.75, 1.0, 1.0]
    assert embedded_probs(k)[0, 0, 1] == 1.0


def test_hand_sojourn_and_wait(hand_kernel):
    assert sojourn_cdf(hand_kernel, 0, 0).tolist() == [0.5, 0.75, 1.0, 1.0]
    assert conditional_wait(hand_kernel, 0, 0, 1).tolist() == \
        [0.5, 0.75, 1.0, 1.0]
    # p = 0 branch
    assert conditional_wait(hand_kernel, 0, 0, 2).tolist() == [1.0] * 4


def test_deterministic_sojourn_step():
    J = [0, 1] * 20
    ch = chain_from_sojourns(J, [5] * 39)
    k = estimate_kernel(ch, np.zeros(40), LEVELS, t_max=8, n_states=2,
                        burn_in=0)
    H = sojourn_cdf(k, 0, 0)
    assert H.tolist() == [0, 0, 0, 0, 1, 1, 1, 1]
    G = conditional_wait(k, 1, 0, 0)
    assert G.tolist() == [0, 0, 0, 0, 1, 1, 1, 1]


def test_sojourns_beyond_cap_are_censored():
    ch = chain_from_sojourns([0, 1, 0], [10, 2])
    k = estimate_kernel(ch, np.zeros(3), LEVELS, t_max=4, n_states=2,
                        burn_in=0)
    assert k.counts[0, 0, 1].tolist() == [0, 0, 0, 1]
    assert k.counts[1, 0, 0].tolist() == [0, 1, 0, 0]


def test_lln_uniform_destinations():
    S, N = 4, 100_000
    rng = np.random.default_rng(7)
    J = np.empty(N + 1, dtype=int)
    J[0] = 0
    step = rng.integers(1, S, size=N)
    J[1:] = np.cumsum(step) % S
    ch = EmbeddedChain(J, np.arange(N + 1))
    k = estimate_kernel(ch, np.zeros(N + 1), LEVELS, t_max=3, n_states=S,
                        burn_in=0)
    target = 1 / (S - 1)
    for i in range(S):
        n = k.visits[i, 0]
        se = np.sqrt(target * (1 - target) / n)
        others = [j for j in range(S) if j != i]
        assert np.all(np.abs(k.p[i, 0, others] - target) < 3 * se)
        assert k.p[i, 0, i] == 0


def test_unvisited_cell_and_backoff(hand_kernel):
    k = hand_kernel
    assert k.visits[0, 1] == 0
    assert k.p[0, 1].sum() == 0  # row flagged missing
    p, G, tag = lookup_with_backoff(k, 0, 1)
    assert tag == "backoff"
    assert p.tolist() == [0.0, 1.0, 0.0]
    assert G[1].tolist() == [0.5, 0.75, 1.0, 1.0]
    p, G, tag = lookup_with_backoff(k, 0, 0)
    assert tag == "direct"
    with pytest.raises(UnreachableState):
        lookup_with_backoff(k, 2, 0)
    with pytest.raises(MissingCell):
        sojourn_cdf(k, 0, 1, allow_backoff=False)


def test_thin_cell_backs_off(hand_kernel):
    k = hand_kernel
    k.min_visits = 30
    assert lookup_with_backoff(k, 0, 0)[2] == "backoff"
    assert lookup_with_backoff(k, 0, 0, allow_backoff=False)[2] == "direct"


def test_errors():
    with pytest.raises(InsufficientData):
        estimate_kernel(EmbeddedChain([0], [0]), [0.0], LEVELS)
    with pytest.raises(ValueError):
        estimate_kernel(EmbeddedChain([0, 1], [0, 1]), [0.0, 0.0], LEVELS,
                        t_max=0)


@pytest.fixture(scope="module")
def bench_kernel(small_data):
    return fit_model(small_data, 10)


def test_estimated_kernel_invariants(bench_kernel, small_data):
    k = bench_kernel
    assert k.check_invariants() == []
    seen = k.visits > 0
    assert np.allclose(k.p.sum(axis=-1)[seen], 1.0, atol=1e-12)
    assert k.visits.sum() == len(small_data.chain) - 1 - k.burn_in
    assert k.burn_in == 11
    Q = k.Q
    assert np.all(np.diff(Q, axis=-1) >= 0)
    for i in range(k.S):
        for v in range(k.V):
            H = sojourn_cdf(k, i, v)
            assert np.all(np.diff(H) >= 0)
            if seen[i, v]:
                assert H[-1] == pytest.approx(1.0, abs=1e-12)
                assert np.allclose(H, Q[i, v].sum(axis=0), atol=1e-12)
            for j in range(k.S):
                G = conditional_wait(k, i, v, j)
                assert np.all(np.diff(G) >= 0) and G[-1] == pytest.approx(1.0)
                if k.p[i, v, j] > 0:
                    assert np.allclose(Q[i, v, j], k.p[i, v, j] * G,
                                       rtol=0, atol=1e-12)


def test_no_self_transitions(bench_kernel):
    p = bench_kernel.p
    for i in range(p.shape[0]):
        assert np.all(p[i, :, i] == 0)


def test_json_round_trip(bench_kernel):
    buf = io.StringIO()
    bench_kernel.to_json(buf)
    buf.seek(0)
    back = IndexedKernel.from_json(buf)
    assert np.array_equal(back.counts, bench_kernel.counts)
    assert np.array_equal(back.mass, bench_kernel.mass)
    assert back.m == 10 and back.V == 5 and back.t_max == 60
    assert np.array_equal(back.index_bins.boundaries,
                          bench_kernel.index_bins.boundaries)


def test_from_probabilities_json_round_trip():
    from ismm.renewal import toy_kernel
    k = toy_kernel()
    buf = io.StringIO()
    k.to_json(buf)
    buf.seek(0)
    back = IndexedKernel.from_json(buf)
    assert np.array_equal(back.mass, k.mass)
    assert back.check_invariants() == []
