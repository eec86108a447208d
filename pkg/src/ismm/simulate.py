"""
Step-by-step simulation from an indexed kernel, and the regime benchmark.

Random streams
--------------
Every simulation draws from a Philox generator seeded by
``SeedSequence(seed, spawn_key=key)``.  Sweeps use ``key = (m, r)`` for
replication ``r`` of memory ``m``, so a replication's output does not
depend on the order or process in which it runs.

Each simulated transition consumes exactly two uniforms: the first picks
the next state, the second the sojourn (inverse CDF, smallest ``t`` with
``G[t] >= u``).
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, asdict

import numpy as np
from numba import njit

from .errors import InsufficientHistory, UnreachableState
from .index import IndexParams
from .ingest import ReturnSeries
from .kernel import TAG_NAMES, IndexedKernel
from .states import EmbeddedChain, expand_chain


def make_rng(seed: int, *key: int) -> np.random.Generator:
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.Philox(ss))


@dataclass
class SimConfig:
    horizon: int
    seed: int
    init: EmbeddedChain
    backoff_allowed: bool = True
    stream: tuple = ()

    def __post_init__(self):
        if self.horizon < 1:
            raise ValueError("horizon must be at least 1")
        if not isinstance(self.init, EmbeddedChain):
            states, times = zip(*self.init)
            self.init = EmbeddedChain(states, times)


@dataclass
class SimResult:
    chain: EmbeddedChain
    history: EmbeddedChain
    minute_states: np.ndarray
    minute_returns: np.ndarray
    provenance: list

    def write_csv(self, fh):
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["minute", "state", "return"])
        for t, (s, r) in enumerate(zip(self.minute_states, self.minute_returns)):
            w.writerow([t, int(s), repr(float(r))])


@njit(cache=True)
def _level(u, bounds):
    lv = 0
    for b in bounds:
        if b < u:
            lv += 1
    return lv


@njit(cache=True)
def _window_index(J, T, n, m, rewards):
    acc = 0.0
    for k in range(m + 1):
        acc += rewards[J[n - 1 - k]] * (T[n - k] - T[n - 1 - k])
    return acc / (T[n] - T[n - m - 1])


@njit(cache=True)
def _sim_core(hist_J, hist_T, m, rewards, bounds, pcum, Gcum, tags,
              horizon, u, fixed_level):
    """Simulate until the clock reaches `horizon`.

    Returns (J, T, tag, n_entries, status); ``status >= 0`` means success,
    otherwise ``-(state + 1)`` names the unreachable state.
    """
    h = hist_J.shape[0]
    cap = h + horizon + 1
    J = np.empty(cap, np.int64)
    T = np.empty(cap, np.int64)
    tag = np.empty(cap, np.int64)
    for k in range(h):
        J[k] = hist_J[k]
        T[k] = hist_T[k]
        tag[k] = -2
    S = pcum.shape[2]
    tmax = Gcum.shape[3]
    n = h - 1
    d = 0
    while T[n] < horizon:
        i = J[n]
        if fixed_level >= 0:
            lv = fixed_level
        else:
            lv = _level(_window_index(J, T, n, m, rewards), bounds)
        if tags[i, lv] < 0:
            return J, T, tag, n + 1, -(i + 1)
        u1 = u[d]
        u2 = u[d + 1]
        d += 2
        j = S - 1
        for s in range(S):
            if u1 < pcum[i, lv, s]:
                j = s
                break
        tau = tmax
        for t in range(tmax):
            if Gcum[i, lv, j, t] >= u2:
                tau = t + 1
                break
        tag[n] = tags[i, lv]
        J[n + 1] = j
        T[n + 1] = T[n] + tau
        n += 1
    return J, T, tag, n + 1, 0


def _prepare(kernel: IndexedKernel, allow_backoff: bool):
    if kernel.representatives is None:
        raise ValueError("kernel carries no state representatives")
    params = IndexParams(max(kernel.m, 1), kernel.representatives)
    pcum, Gcum, tags = kernel.effective_tables(allow_backoff)
    return params.rewards, kernel.index_bins.boundaries, pcum, Gcum, tags


def _check_history(kernel, init):
    need = kernel.m + 2
    if len(init) < need:
        raise InsufficientHistory(needed=need, available=len(init))
    if np.any(init.J < 0) or np.any(init.J >= kernel.S):
        raise ValueError("initial states out of range")


def simulate(kernel: IndexedKernel, cfg: SimConfig,
             fixed_level: int | None = None) -> SimResult:
    """Simulate `cfg.horizon` minutes starting from `cfg.init`.

    `cfg.init` holds the last ``m + 2`` chain entries: ``m + 1`` completed
    sojourns plus the state occupied at minute 0.  Times are shifted so that
    this last entry sits at ``T = 0``.  With `fixed_level` the index
    feedback is cut and every draw uses that level.
    """
    init = cfg.init
    _check_history(kernel, init)
    hist_J = init.J[-(kernel.m + 2):]
    hist_T = init.T[-(kernel.m + 2):] - init.T[-1]
    rewards, bounds, pcum, Gcum, tags = _prepare(kernel, cfg.backoff_allowed)
    rng = make_rng(cfg.seed, *cfg.stream)
    u = rng.random(2 * cfg.horizon + 2)
    J, T, tag, n, status = _sim_core(
        hist_J, hist_T, kernel.m, rewards, bounds, pcum, Gcum, tags,
        cfg.horizon, u, -1 if fixed_level is None else int(fixed_level))
    if status < 0:
        raise UnreachableState(f"state {-status - 1} has no usable kernel cell")
    h = len(hist_J)
    J, T, tag = J[:n], T[:n], tag[:n]
    keep = T[h - 1:] < cfg.horizon
    chain = EmbeddedChain(J[h - 1:][keep], T[h - 1:][keep])
    states = expand_chain(chain, cfg.horizon)
    prov = [TAG_NAMES[int(t)] for t in tag[h - 1:n - 1]]
    return SimResult(chain, EmbeddedChain(hist_J, hist_T), states,
                     kernel.representatives[states], prov)


def simulate_returns(kernel: IndexedKernel, init: EmbeddedChain, horizon: int,
                     seed: int, stream=(), allow_backoff=True,
                     fixed_level=None) -> np.ndarray:
    """Per-minute representative returns only (the hot path of sweeps)."""
    res = simulate(kernel, SimConfig(horizon, seed, init, allow_backoff,
                                     tuple(stream)), fixed_level=fixed_level)
    return res.minute_returns


def expand_to_minutes(chain: EmbeddedChain, representatives, horizon: int):
    """States ``J_{N(t)}`` and their representative returns per minute."""
    states = expand_chain(chain, horizon)
    return states, np.asarray(representatives)[states]


# -- Monte Carlo estimate of the transition probability function -----------

@njit(cache=True)
def _index_at_time(J, T, n_entries, t, m, rewards):
    N = 0
    for k in range(n_entries):
        if T[k] <= t:
            N = k
    if T[N] == t:
        return _window_index(J, T, N, m, rewards)
    acc = rewards[J[N]] * (t - T[N])
    for k in range(1, m + 1):
        acc += rewards[J[N - k]] * (T[N - k + 1] - T[N - k])
    return acc / (t - T[N - m])


@njit(cache=True)
def _mc_phi(hist_J, hist_T, m, rewards, bounds, pcum, Gcum, tags, t, u,
            out_state, out_index):
    for r in range(u.shape[0]):
        J, T, tag, n, status = _sim_core(hist_J, hist_T, m, rewards, bounds,
                                         pcum, Gcum, tags, t + 1, u[r], -1)
        if status < 0:
            return status
        N = 0
        for k in range(n):
            if T[k] <= t:
                N = k
        out_state[r] = J[N]
        out_index[r] = _index_at_time(J, T, n, t, m, rewards)
    return 0


def mc_phi_samples(kernel: IndexedKernel, states, times, t: int,
                   n_rep: int, seed: int, stream=()):
    """Sample ``(Z(t), U(t))`` over `n_rep` independent paths.

    `states`/`times` give the ``m + 2`` history entries ending at time 0.
    """
    hist_J = np.asarray(states, dtype=np.int64)
    hist_T = np.asarray(times, dtype=np.int64)
    if hist_T[-1] != 0:
        raise ValueError("history must end at time 0")
    rewards, bounds, pcum, Gcum, tags = _prepare(kernel, True)
    u = make_rng(seed, *stream).random((n_rep, 2 * (t + 1) + 2))
    zs = np.empty(n_rep, dtype=np.int64)
    us = np.empty(n_rep)
    status = _mc_phi(hist_J, hist_T, kernel.m, rewards, bounds, pcum, Gcum,
                     tags, int(t), u, zs, us)
    if status < 0:
        raise UnreachableState(f"state {-status - 1} has no usable kernel cell")
    return zs, us


# -- regime benchmark ----------------------------------------------------

@dataclass
class BenchmarkParams:
    """Two-regime minute-return generator.

    Each minute the hidden regime is kept with probability `rho`, otherwise
    it is redrawn (high with probability `p_high`).  The squared-return
    autocorrelation therefore decays like ``rho ** tau``.
    """

    n_minutes: int = 500_000
    rho: float = 0.99
    sigma_low: float = 0.0005
    sigma_high: float = 0.0015
    p_high: float = 0.3
    day_length: int = 506

    def __post_init__(self):
        if not 0 <= self.rho < 1:
            raise ValueError("rho must lie in [0, 1)")
        if not 0 < self.p_high < 1:
            raise ValueError("p_high must lie in (0, 1)")
        if self.sigma_low <= 0 or self.sigma_high <= 0:
            raise ValueError("volatilities must be positive")
        if self.n_minutes < 2:
            raise ValueError("n_minutes must be at least 2")

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(**d)

    def to_json(self, fh):
        json.dump(self.to_dict(), fh, indent=2)


def regime_path(params: BenchmarkParams, rng) -> np.ndarray:
    n = params.n_minutes
    redraw = rng.random(n) >= params.rho
    redraw[0] = True
    draws = rng.random(n) < params.p_high
    last = np.maximum.accumulate(np.where(redraw, np.arange(n), 0))
    return draws[last]


def make_regime_benchmark(params: BenchmarkParams | None = None,
                          seed: int = 0) -> ReturnSeries:
    params = params or BenchmarkParams()
    rng = make_rng(seed)
    high = regime_path(params, rng)
    sigma = np.where(high, params.sigma_high, params.sigma_low)
    r = sigma * rng.standard_normal(params.n_minutes)
    return ReturnSeries.from_array(r, instrument="regime-benchmark",
                                   day_length=params.day_length)
