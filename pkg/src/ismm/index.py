"""
Memory index of the embedded chain.

The index at the n-th transition is the duration-weighted average of
``f(J)`` over the last ``m + 1`` completed sojourns::

    U_n = sum_{k=0..m} f(J_{n-1-k}) * (T_{n-k} - T_{n-1-k}) / (T_n - T_{n-m-1})

with ``f(J) = representative(J) ** 2``, so ``U`` tracks recent realised
volatility measured in transitions rather than minutes.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateIndex, InsufficientData, InsufficientHistory

log = logging.getLogger(__name__)

F_MODES = ("squared-representative",)


@dataclass
class IndexParams:
    m: int
    representatives: np.ndarray
    f_mode: str = "squared-representative"

    def __post_init__(self):
        if int(self.m) < 1:
            raise ValueError("memory m must be at least 1")
        if self.f_mode not in F_MODES:
            raise ValueError(f"unsupported f_mode {self.f_mode!r}")
        self.m = int(self.m)
        self.representatives = np.asarray(self.representatives, dtype=float)

    @property
    def rewards(self) -> np.ndarray:
        """``f`` evaluated on every state."""
        return self.representatives ** 2


@dataclass
class IndexBinning:
    boundaries: np.ndarray

    def __post_init__(self):
        self.boundaries = np.asarray(self.boundaries, dtype=float).reshape(-1)
        if np.any(np.diff(self.boundaries) <= 0):
            raise ValueError("index boundaries must be strictly increasing")

    @property
    def V(self) -> int:
        return len(self.boundaries) + 1

    def to_dict(self):
        return {"boundaries": [float(b) for b in self.boundaries], "V": self.V}

    @classmethod
    def from_dict(cls, d):
        return cls(d["boundaries"])

    def to_json(self, fh):
        json.dump(self.to_dict(), fh, indent=2)


def index_at_transition(chain, n: int, params: IndexParams) -> float:
    m = params.m
    if n - m - 1 < 0 or n >= len(chain):
        raise InsufficientHistory(needed=m + 2, available=min(n + 1, len(chain)))
    f = params.rewards
    J, T = chain.J, chain.T
    acc = 0.0
    for k in range(m + 1):
        acc += f[J[n - 1 - k]] * (T[n - k] - T[n - 1 - k])
    return acc / (T[n] - T[n - m - 1])


def index_at_time(chain, t, params: IndexParams) -> float:
    """Index value at an arbitrary minute `t` (transition or not).

    At a transition time this is :func:`index_at_transition`.  Inside a
    sojourn the window covers the current partial sojourn and the ``m``
    completed ones before it.
    """
    J, T = chain.J, chain.T
    if t < T[0]:
        raise InsufficientHistory(needed=1, available=0)
    N = int(np.searchsorted(T, t, side="right")) - 1
    if T[N] == t:
        return index_at_transition(chain, N, params)
    m = params.m
    if N - m < 0:
        raise InsufficientHistory(needed=m + 1, available=N + 1)
    f = params.rewards
    acc = f[J[N]] * (t - T[N])
    for k in range(1, m + 1):
        acc += f[J[N - k]] * (T[N - k + 1] - T[N - k])
    return acc / (t - T[N - m])


def index_series(chain, params: IndexParams) -> np.ndarray:
    """``U_n`` for every transition; NaN for the burn-in ``n < m + 1``."""
    m = params.m
    J, T = chain.J, chain.T
    out = np.full(len(J), np.nan)
    if len(J) < m + 2:
        return out
    rew = params.rewards[J[:-1]] * np.diff(T)
    n = np.arange(m + 1, len(J))
    # Same summation order as the simulator, so levels agree exactly at
    # boundary ties (a running cumsum would round differently).
    acc = np.zeros(n.size)
    for k in range(m + 1):
        acc += rew[n - 1 - k]
    out[m + 1:] = acc / (T[n] - T[n - m - 1])
    return out


def fit_index_bins(values, V: int = 5) -> IndexBinning:
    """Equal-mass index levels at the empirical ``k / V`` quantiles."""
    values = np.asarray(values, dtype=float)
    values = values[np.isfinite(values)]
    if V < 1:
        raise ValueError("V must be positive")
    if V == 1:
        return IndexBinning([])
    if values.size < 10 * V:
        raise InsufficientData(f"need at least {10 * V} index values, "
                               f"got {values.size}")
    if np.ptp(values) == 0:
        raise DegenerateIndex("all index values are identical")
    b = np.quantile(values, np.arange(1, V) / V)
    uniq = np.unique(b)
    if len(uniq) < len(b):
        log.warning("index quantiles tie; %d levels instead of %d",
                    len(uniq) + 1, V)
    return IndexBinning(uniq)


def discretize_index(u, bins: IndexBinning):
    """Level of `u`: the number of boundaries strictly below it."""
    lv = np.searchsorted(bins.boundaries, u, side="left")
    return int(lv) if np.ndim(lv) == 0 else lv.astype(np.int64)
