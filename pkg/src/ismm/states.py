"""Return discretization and extraction of the embedded chain (J_n, T_n)."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateReturns, InsufficientData
from .ingest import ReturnSeries

DEFAULT_LEVELS = {5: (0.60, 0.95)}


@dataclass
class ReturnBinning:
    boundaries: np.ndarray
    representatives: np.ndarray

    def __post_init__(self):
        self.boundaries = np.asarray(self.boundaries, dtype=float)
        self.representatives = np.asarray(self.representatives, dtype=float)
        if len(self.representatives) != len(self.boundaries) + 1:
            raise ValueError("need exactly one more representative than "
                             "boundaries")
        if np.any(np.diff(self.boundaries) <= 0):
            raise ValueError("boundaries must be strictly increasing")

    @property
    def n_states(self) -> int:
        return len(self.representatives)

    def to_dict(self):
        return {"boundaries": [float(b) for b in self.boundaries],
                "representatives": [float(r) for r in self.representatives]}

    @classmethod
    def from_dict(cls, d):
        return cls(d["boundaries"], d["representatives"])

    def to_json(self, fh):
        json.dump(self.to_dict(), fh, indent=2)


@dataclass
class StateSeries:
    days: list  # list of int arrays

    def concatenated(self) -> np.ndarray:
        if not self.days:
            return np.empty(0, dtype=np.int64)
        return np.concatenate(self.days).astype(np.int64)


@dataclass
class EmbeddedChain:
    """Visited states ``J`` and their (integer-minute) entry times ``T``."""

    J: np.ndarray
    T: np.ndarray

    def __post_init__(self):
        self.J = np.asarray(self.J, dtype=np.int64)
        self.T = np.asarray(self.T, dtype=np.int64)
        if self.J.shape != self.T.shape:
            raise ValueError("J and T must have equal length")
        if np.any(np.diff(self.T) <= 0):
            raise ValueError("transition times must be strictly increasing")

    def __len__(self):
        return len(self.J)

    @property
    def sojourns(self) -> np.ndarray:
        return np.diff(self.T)

    def transition_counts(self, n_states: int) -> np.ndarray:
        """Matrix of i -> j transition counts of the embedded chain."""
        counts = np.zeros((n_states, n_states), dtype=np.int64)
        np.add.at(counts, (self.J[:-1], self.J[1:]), 1)
        return counts

    def write_csv(self, fh):
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["n", "J", "T"])
        for n, (j, t) in enumerate(zip(self.J, self.T)):
            w.writerow([n, int(j), int(t)])

    @classmethod
    def read_csv(cls, fh):
        rows = list(csv.DictReader(fh))
        return cls([int(r["J"]) for r in rows], [int(r["T"]) for r in rows])


def fit_return_bins(returns, n_states: int = 5,
                    levels=None) -> ReturnBinning:
    """
    Fit symmetric return boundaries from quantiles of ``|r|``.

    Positive boundaries are the `levels` quantiles of the absolute value of
    the nonzero returns (defaults to 0.60 and 0.95 for five states) and are
    mirrored around zero.  Representatives are the per-bin empirical means,
    with the middle one pinned to exactly zero.
    """
    if n_states < 3 or n_states % 2 == 0:
        raise ValueError("n_states must be odd and at least 3")
    half = (n_states - 1) // 2
    if levels is None:
        levels = DEFAULT_LEVELS.get(n_states, np.linspace(0.60, 0.95, half))
    levels = np.asarray(levels, dtype=float)
    if len(levels) != half:
        raise ValueError(f"need {half} quantile levels for {n_states} states")

    r = returns.concatenated() if isinstance(returns, ReturnSeries) \
        else np.asarray(returns, dtype=float)
    nonzero = np.abs(r[r != 0])
    if nonzero.size and np.ptp(r) == 0:
        raise DegenerateReturns("all returns are equal")
    if nonzero.size == 0:
        raise DegenerateReturns("all returns are zero")
    if nonzero.size < 10 * n_states:
        raise InsufficientData(f"need at least {10 * n_states} nonzero "
                               f"returns, got {nonzero.size}")

    pos = np.quantile(nonzero, levels)
    if np.any(np.diff(pos) <= 0) or pos[0] <= 0:
        raise DegenerateReturns(f"quantile boundaries collapse: {pos}")
    boundaries = np.concatenate([-pos[::-1], pos])

    labels = np.searchsorted(boundaries, r, side="left")
    reps = np.empty(n_states)
    for k in range(n_states):
        members = r[labels == k]
        if members.size == 0:
            raise DegenerateReturns(f"state {k} has no observations")
        reps[k] = members.mean()
    reps[half] = 0.0
    return ReturnBinning(boundaries, reps)


def discretize_returns(returns, bins: ReturnBinning) -> StateSeries:
    """Label each return by the number of boundaries strictly below it."""
    if isinstance(returns, ReturnSeries):
        arrays = [r for _, r in returns.days]
    else:
        arrays = [np.asarray(returns, dtype=float)]
    return StateSeries([np.searchsorted(bins.boundaries, r, side="left")
                        .astype(np.int64) for r in arrays])


def extract_embedded_chain(ss, every_minute: bool = False) -> EmbeddedChain:
    """Run-length encode the concatenated state sequence.

    Days are joined on a single trading-minute clock.  With `every_minute`
    each minute counts as a transition, so self-transitions appear.
    """
    labels = ss.concatenated() if isinstance(ss, StateSeries) \
        else np.asarray(ss, dtype=np.int64)
    if labels.size == 0:
        raise InsufficientData("empty state series")
    if every_minute:
        return EmbeddedChain(labels, np.arange(labels.size))
    change = np.flatnonzero(labels[1:] != labels[:-1]) + 1
    T = np.concatenate([[0], change])
    return EmbeddedChain(labels[T], T)


def expand_chain(chain: EmbeddedChain, horizon: int) -> np.ndarray:
    """State occupied at each minute ``0..horizon-1``, i.e. ``J_{N(t)}``."""
    t = np.arange(horizon) + chain.T[0]
    n = np.searchsorted(chain.T, t, side="right") - 1
    return chain.J[n]
