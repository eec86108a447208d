"""
Transition probability function of the indexed process, by recursion.

For a history of ``m + 2`` states and entry times ending at ``t_0 = 0``::

    phi(history; t, V) = P[Z(t) = j, U(t) <= V | history]

satisfies, in discrete time,

    phi(h; t, V) = delta(i_0, j) * (1 - H_{i_0}(U(0); t)) * 1{U_stay(t) <= V}
                 + sum_s sum_{tau=1..t} q_{i_0 s}(U(0); tau) * phi(h + (s, tau); t - tau, V)

where ``q`` is the kernel mass at sojourn ``tau``, ``U(0)`` the index at the
last history entry and ``U_stay(t)`` the index after ``t`` minutes without
a jump.  ``h + (s, tau)`` drops the oldest entry, appends the new state and
shifts times so the new entry sits at 0.

The state space of histories grows combinatorially, so queries are limited
to ``m <= 2``, ``S <= 3`` and ``t <= 50``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import EnvelopeExceeded

MAX_M, MAX_S, MAX_T = 2, 3, 50


@dataclass
class PhiQuery:
    states: tuple
    times: tuple
    j: int
    t: int
    V_cap: float = math.inf

    def __post_init__(self):
        self.states = tuple(int(s) for s in self.states)
        self.times = tuple(int(x) for x in self.times)
        if len(self.states) != len(self.times):
            raise ValueError("states and times must have the same length")
        if self.times[-1] != 0:
            raise ValueError("history times must end at 0")
        if any(b <= a for a, b in zip(self.times, self.times[1:])):
            raise ValueError("history times must be strictly increasing")
        if self.t < 0:
            raise ValueError("horizon must be non-negative")

    def to_dict(self):
        return {"states": list(self.states), "times": list(self.times),
                "j": self.j, "t": self.t,
                "V_cap": None if math.isinf(self.V_cap) else self.V_cap}

    @classmethod
    def from_dict(cls, d):
        v = d.get("V_cap")
        return cls(d["states"], d["times"], d["j"], d["t"],
                   math.inf if v is None else float(v))


@dataclass
class AnalyticKernel:
    """Kernel given as a function of the continuous index value.

    ``mass_fn(i, u)`` returns an (S, t_max) array of probability masses
    ``q_{ij}(u; tau)`` for ``tau = 1..t_max``.
    """

    S: int
    m: int
    representatives: np.ndarray
    mass_fn: object

    def mass_at(self, i, u):
        return np.asarray(self.mass_fn(i, u), dtype=float)


@dataclass
class PhiTable:
    """Memo of ``phi`` vectors over the target state, keyed by history."""

    V_cap: float
    values: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.values)


def _check_envelope(kernel, q: PhiQuery):
    m = kernel.m
    if m > MAX_M or kernel.S > MAX_S or q.t > MAX_T:
        raise EnvelopeExceeded(
            f"solver limited to m <= {MAX_M}, S <= {MAX_S}, t <= {MAX_T} "
            f"(got m={m}, S={kernel.S}, t={q.t})")
    if len(q.states) != m + 2:
        raise ValueError(f"history must have m + 2 = {m + 2} entries")
    if any(s < 0 or s >= kernel.S for s in q.states + (q.j,)):
        raise ValueError("state out of range")


def _index_now(f, states, times, m):
    acc = 0.0
    n = len(states) - 1
    for k in range(m + 1):
        acc += f[states[n - 1 - k]] * (times[n - k] - times[n - 1 - k])
    return acc / (times[n] - times[n - m - 1])


def _index_stay(f, states, times, m, r):
    n = len(states) - 1
    acc = f[states[n]] * r
    for k in range(1, m + 1):
        acc += f[states[n - k]] * (times[n - k + 1] - times[n - k])
    return acc / (r - times[n - m])


class _Solver:
    def __init__(self, kernel, V_cap):
        self.kernel = kernel
        self.m = kernel.m
        self.S = kernel.S
        self.f = np.asarray(kernel.representatives, dtype=float) ** 2
        self.table = PhiTable(V_cap)

    def phi(self, states, times, r):
        key = (states, times, r)
        hit = self.table.values.get(key)
        if hit is not None:
            return hit
        S, m, V = self.S, self.m, self.table.V_cap
        i0 = states[-1]
        u0 = _index_now(self.f, states, times, m)
        out = np.zeros(S)
        if r == 0:
            if u0 <= V:
                out[i0] = 1.0
        else:
            mass = self.kernel.mass_at(i0, u0)
            horizon = min(r, mass.shape[1])
            stay = 1.0 - mass[:, :horizon].sum()
            if stay > 0 and _index_stay(self.f, states, times, m, r) <= V:
                out[i0] += stay
            for tau in range(1, horizon + 1):
                new_times = tuple(x - tau for x in times[1:]) + (0,)
                for s in range(S):
                    q = mass[s, tau - 1]
                    if q > 0:
                        out += q * self.phi(states[1:] + (s,), new_times,
                                            r - tau)
        self.table.values[key] = out
        return out


def phi_vector(kernel, q: PhiQuery) -> np.ndarray:
    """``phi`` for every target state at once."""
    _check_envelope(kernel, q)
    return _Solver(kernel, q.V_cap).phi(q.states, q.times, q.t).copy()


def solve_phi(kernel, q: PhiQuery) -> float:
    val = float(phi_vector(kernel, q)[q.j])
    return min(max(val, 0.0), 1.0)


def phi_marginal(kernel, q: PhiQuery) -> float:
    """``P[Z(t) = j | history]``, i.e. ``phi`` with no cap on the index."""
    q = PhiQuery(q.states, q.times, q.j, q.t, math.inf)
    return solve_phi(kernel, q)


def write_result_json(q: PhiQuery, value: float, fh):
    json.dump({"query": q.to_dict(), "phi": value}, fh, indent=2)


# -- solver vs simulator ---------------------------------------------------

def toy_kernel():
    """Two-state, m = 1 kernel with level-dependent sojourn laws.

    State representatives 0.5 and 2.0 give rewards 0.25 and 4; index values
    above 1.5 select the second (fast) level.
    """
    from .index import IndexBinning
    from .kernel import IndexedKernel

    pmf = np.zeros((2, 2, 2, 6))
    pmf[0, 0, 1] = [.50, .30, .10, .05, .03, .02]
    pmf[0, 1, 1] = [.10, .10, .20, .20, .20, .20]
    pmf[1, 0, 0] = [.20, .40, .20, .10, .05, .05]
    pmf[1, 1, 0] = [.60, .20, .10, .05, .03, .02]
    pmf[0, :, 0] = pmf[1, :, 1] = 1 / 6  # unused: no self-transitions
    p = np.zeros((2, 2, 2))
    p[0, :, 1] = p[1, :, 0] = 1.0
    return IndexedKernel.from_probabilities(
        p, pmf, IndexBinning([1.5]), m=1, representatives=[0.5, 2.0])


def default_grid():
    """Ten queries over t in {5, 10, 20} mixing capped and uncapped index."""
    h = [((0, 1, 0), (-5, -2, 0)), ((1, 0, 1), (-3, -1, 0)),
         ((0, 1, 0), (-2, -1, 0)), ((1, 0, 1), (-7, -4, 0))]
    return [
        PhiQuery(*h[0], j=0, t=5),
        PhiQuery(*h[0], j=1, t=10),
        PhiQuery(*h[1], j=1, t=10, V_cap=2.0),
        PhiQuery(*h[1], j=0, t=20),
        PhiQuery(*h[2], j=0, t=5, V_cap=1.0),
        PhiQuery(*h[2], j=1, t=20, V_cap=3.0),
        PhiQuery(*h[3], j=1, t=5),
        PhiQuery(*h[3], j=0, t=10, V_cap=1.2),
        PhiQuery(*h[0], j=0, t=20, V_cap=2.5),
        PhiQuery(*h[2], j=1, t=10),
    ]


@dataclass
class PhiCheck:
    query: PhiQuery
    phi: float
    mc: float
    se: float
    passed: bool

    @property
    def z(self):
        return 0.0 if self.se == 0 else (self.mc - self.phi) / self.se


def compare_with_simulation(kernel, queries, n_rep=100_000, seed=0,
                            n_se=3.0) -> list:
    """Check each query against a Monte Carlo estimate from the simulator.

    The standard error uses the larger of the solver and Monte Carlo
    Bernoulli variances.  Query ``k`` draws from stream ``(k,)``.
    """
    from .simulate import mc_phi_samples

    out = []
    for k, q in enumerate(queries):
        val = solve_phi(kernel, q)
        zs, us = mc_phi_samples(kernel, q.states, q.times, q.t, n_rep, seed,
                                stream=(k,))
        hit = (zs == q.j) & (us <= q.V_cap)
        mc = float(hit.mean())
        se = math.sqrt(max(val * (1 - val), mc * (1 - mc)) / n_rep)
        passed = abs(mc - val) <= n_se * se
        out.append(PhiCheck(q, val, mc, se, bool(passed)))
    return out
