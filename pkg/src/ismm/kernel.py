"""
Estimation of the indexed semi-Markov kernel.

The kernel is kept as a table of probability masses
``mass[i, v, j, t-1] = P(J_{n+1}=j, T_{n+1}-T_n = t | J_n=i, level(U_n)=v)``
for ``t = 1..t_max``; sojourns longer than ``t_max`` are censored into the
last bin.  ``Q`` is the cumulative sum of ``mass`` along ``t``.

Cells with fewer than ``min_visits`` observations fall back to the kernel
estimated with the index level marginalised out.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import InsufficientData, MissingCell, UnreachableState
from .index import IndexBinning, discretize_index
from .states import ReturnBinning

DIRECT, BACKOFF, MISSING = 0, 1, -1
TAG_NAMES = {DIRECT: "direct", BACKOFF: "backoff", MISSING: "missing"}

FORMAT_VERSION = 1


def _normalize(counts, visits):
    with np.errstate(invalid="ignore", divide="ignore"):
        mass = counts / visits[..., None, None]
    return np.nan_to_num(mass, nan=0.0)


@dataclass
class IndexedKernel:
    mass: np.ndarray                 # (S, V, S, t_max)
    visits: np.ndarray               # (S, V)
    m: int
    return_bins: ReturnBinning | None = None
    index_bins: IndexBinning | None = None
    counts: np.ndarray | None = None  # raw integer counts when estimated
    backoff_mass: np.ndarray | None = None  # (S, S, t_max)
    backoff_visits: np.ndarray | None = None  # (S,)
    min_visits: int = 30
    burn_in: int = 0
    convention: str = "state-change"
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.mass = np.asarray(self.mass, dtype=float)
        self.visits = np.asarray(self.visits, dtype=np.int64)
        if self.mass.ndim != 4 or self.mass.shape[0] != self.mass.shape[2]:
            raise ValueError("mass must have shape (S, V, S, t_max)")
        if self.visits.shape != self.mass.shape[:2]:
            raise ValueError("visits must have shape (S, V)")
        if self.index_bins is None:
            raise ValueError("index_bins is required")
        if self.index_bins.V != self.V:
            raise ValueError("index binning does not match kernel V")
        if self.backoff_mass is None:
            if self.counts is not None:
                c = self.counts.sum(axis=1)
                self.backoff_visits = c.sum(axis=(1, 2))
                with np.errstate(invalid="ignore", divide="ignore"):
                    self.backoff_mass = np.nan_to_num(
                        c / self.backoff_visits[:, None, None], nan=0.0)
            else:
                w = self.visits.astype(float)
                tot = w.sum(axis=1)
                with np.errstate(invalid="ignore", divide="ignore"):
                    self.backoff_mass = np.nan_to_num(
                        np.einsum("iv,ivjt->ijt", w, self.mass)
                        / tot[:, None, None], nan=0.0)
                self.backoff_visits = self.visits.sum(axis=1)

    @property
    def S(self):
        return self.mass.shape[0]

    @property
    def V(self):
        return self.mass.shape[1]

    @property
    def t_max(self):
        return self.mass.shape[3]

    @property
    def Q(self) -> np.ndarray:
        return np.cumsum(self.mass, axis=-1)

    @property
    def p(self) -> np.ndarray:
        return self.Q[..., -1]

    @property
    def representatives(self):
        return None if self.return_bins is None else \
            self.return_bins.representatives

    @classmethod
    def from_probabilities(cls, p, sojourn_pmf, index_bins, m,
                           representatives=None, visits=None, **kw):
        """Build a kernel from a transition table and sojourn laws.

        `p` has shape (S, V, S); `sojourn_pmf` has shape (S, V, S, t_max)
        and each (i, v, j) curve is a pmf over ``t = 1..t_max``.
        """
        p = np.asarray(p, dtype=float)
        pmf = np.asarray(sojourn_pmf, dtype=float)
        if pmf.shape[:3] != p.shape:
            raise ValueError("sojourn_pmf must extend p with a t axis")
        mass = p[..., None] * pmf
        if visits is None:
            visits = np.full(p.shape[:2], np.iinfo(np.int32).max)
        rb = None
        if representatives is not None:
            reps = np.asarray(representatives, dtype=float)
            rb = ReturnBinning(0.5 * (reps[1:] + reps[:-1]), reps)
        return cls(mass=mass, visits=visits, m=m, return_bins=rb,
                   index_bins=index_bins, **kw)

    # -- derived quantities -------------------------------------------------

    def embedded_probs(self) -> np.ndarray:
        return self.p

    def sojourn_cdf(self, i, v, allow_backoff=True) -> np.ndarray:
        if self.visits[i, v] == 0:
            if not allow_backoff:
                raise MissingCell(f"cell (i={i}, v={v}) was never visited")
            return np.cumsum(self._cell(i, v)[0].sum(axis=0))
        return self.Q[i, v].sum(axis=0)

    def conditional_wait(self, i, v, j) -> np.ndarray:
        return _conditional(self.Q[i, v, j])

    def _cell(self, i, v, allow_backoff=True, min_visits=None):
        """Mass table (S, t_max) used for cell (i, v), with its tag."""
        min_visits = self.min_visits if min_visits is None else min_visits
        if self.visits[i, v] >= max(min_visits, 1):
            return self.mass[i, v], DIRECT
        if not allow_backoff:
            if self.visits[i, v] > 0:
                return self.mass[i, v], DIRECT
            raise MissingCell(f"cell (i={i}, v={v}) was never visited")
        if self.backoff_visits[i] > 0:
            return self.backoff_mass[i], BACKOFF
        raise UnreachableState(f"state {i} was never visited")

    def lookup_with_backoff(self, i, v, allow_backoff=True):
        """Return ``(p_row, G, tag)`` for cell (i, v).

        `G` has one conditional waiting-time CDF per destination state.
        """
        mass, tag = self._cell(i, v, allow_backoff)
        Q = np.cumsum(mass, axis=-1)
        G = np.stack([_conditional(Q[j]) for j in range(self.S)])
        return Q[:, -1], G, TAG_NAMES[tag]

    def mass_at(self, i, u) -> np.ndarray:
        """Mass table (S, t_max) for state `i` at continuous index value `u`."""
        return self._cell(i, discretize_index(u, self.index_bins))[0]

    def effective_tables(self, allow_backoff=True):
        """Cumulative next-state and waiting-time tables used for sampling.

        Returns ``(pcum, Gcum, tags)``; cumulative curves are pinned to 1.0
        from their last positive entry onward so that inverse-CDF draws can
        never land on a zero-probability outcome.
        """
        S, V, T = self.S, self.V, self.t_max
        pcum = np.ones((S, V, S))
        Gcum = np.ones((S, V, S, T))
        tags = np.full((S, V), MISSING, dtype=np.int64)
        for i in range(S):
            for v in range(V):
                try:
                    mass, tag = self._cell(i, v, allow_backoff)
                except (MissingCell, UnreachableState):
                    continue
                tags[i, v] = tag
                p = mass.sum(axis=1)
                pcum[i, v] = _pinned_cumsum(p)
                for j in range(S):
                    if p[j] > 0:
                        Gcum[i, v, j] = _pinned_cumsum(mass[j] / p[j])
        return pcum, Gcum, tags

    # -- checks -------------------------------------------------------------

    def check_invariants(self, tol=1e-12) -> list:
        """Return a list of violated invariants (empty when all hold)."""
        bad = []
        Q = self.Q
        p = Q[..., -1]
        if np.any(np.diff(Q, axis=-1) < -tol):
            bad.append("Q not non-decreasing in t")
        seen = self.visits > 0
        if np.any(np.abs(p.sum(axis=-1)[seen] - 1.0) > tol):
            bad.append("p rows of visited cells do not sum to 1")
        if self.convention == "state-change":
            diag = p[np.arange(self.S), :, np.arange(self.S)]
            if np.any(diag > tol):
                bad.append("self-transition probability under state-change "
                           "convention")
        if self.counts is not None and np.any(
                self.counts.sum(axis=(2, 3)) != self.visits):
            bad.append("visit counts differ from summed transition counts")
        for i in range(self.S):
            for v in range(self.V):
                for j in range(self.S):
                    G = _conditional(Q[i, v, j])
                    if np.any(np.diff(G) < -tol) or G.min() < -tol \
                            or G.max() > 1 + tol:
                        bad.append(f"G[{i},{v},{j}] is not a CDF")
                    if p[i, v, j] > 0 and np.any(
                            np.abs(Q[i, v, j] - p[i, v, j] * G) > tol):
                        bad.append(f"Q != p*G at ({i},{v},{j})")
        return bad

    # -- serialization ------------------------------------------------------

    def to_dict(self):
        d = {
            "format_version": FORMAT_VERSION,
            "S": self.S, "V": self.V, "m": self.m, "t_max": self.t_max,
            "burn_in": self.burn_in, "min_visits": self.min_visits,
            "convention": self.convention,
            "return_bins": None if self.return_bins is None
            else self.return_bins.to_dict(),
            "index_bins": self.index_bins.to_dict(),
            "visits": self.visits.tolist(),
            "meta": self.meta,
        }
        if self.counts is not None:
            d["counts"] = self.counts.tolist()
        else:
            d["mass"] = self.mass.tolist()
        return d

    def to_json(self, fh):
        json.dump(self.to_dict(), fh, indent=1)

    @classmethod
    def from_dict(cls, d):
        if d.get("format_version", 1) != FORMAT_VERSION:
            raise ValueError(f"unsupported kernel format "
                             f"{d.get('format_version')}")
        rb = ReturnBinning.from_dict(d["return_bins"]) \
            if d.get("return_bins") else None
        ib = IndexBinning.from_dict(d["index_bins"])
        visits = np.asarray(d["visits"], dtype=np.int64)
        common = dict(m=d["m"], return_bins=rb, index_bins=ib,
                      burn_in=d.get("burn_in", 0),
                      min_visits=d.get("min_visits", 30),
                      convention=d.get("convention", "state-change"),
                      meta=d.get("meta", {}))
        if "counts" in d:
            counts = np.asarray(d["counts"], dtype=np.int64)
            return cls(mass=_normalize(counts, visits), visits=visits,
                       counts=counts, **common)
        return cls(mass=np.asarray(d["mass"]), visits=visits, **common)

    @classmethod
    def from_json(cls, fh):
        return cls.from_dict(json.load(fh))


def _conditional(Qij):
    """G = Q / p, or identically 1 when p = 0."""
    p = Qij[-1]
    if p == 0:
        return np.ones_like(Qij)
    return Qij / p


def _pinned_cumsum(x):
    c = np.cumsum(x)
    pos = np.flatnonzero(x > 0)
    if pos.size:
        c[pos[-1]:] = 1.0
    return c


def estimate_kernel(chain, index_values, index_bins: IndexBinning,
                    t_max: int = 60, m: int | None = None,
                    return_bins: ReturnBinning | None = None,
                    n_states: int | None = None, burn_in: int | None = None,
                    min_visits: int = 30,
                    convention: str = "state-change") -> IndexedKernel:
    """
    Count transitions by (origin, index level, destination, sojourn).

    Parameters
    ----------
    chain : EmbeddedChain
    index_values : array_like
        ``U_n`` per transition; NaN entries (burn-in) are skipped.
    index_bins : IndexBinning
    t_max : int
        Longest tracked sojourn.  Longer sojourns are counted at `t_max`.
    m : int, optional
        Memory used to compute `index_values`; stored as metadata.
    """
    if t_max < 1:
        raise ValueError("t_max must be at least 1")
    J, T = chain.J, chain.T
    if len(J) < 2:
        raise InsufficientData("chain has no transitions")
    U = np.asarray(index_values, dtype=float)
    if U.shape != J.shape:
        raise ValueError("need one index value per chain entry")
    if m is None:
        m = 0
    if burn_in is None:
        burn_in = m + 1
    if n_states is None:
        n_states = return_bins.n_states if return_bins is not None \
            else int(J.max()) + 1
    S, V = n_states, index_bins.V

    n = np.arange(burn_in, len(J) - 1)
    n = n[np.isfinite(U[n])]
    if n.size == 0:
        raise InsufficientData(f"chain of length {len(J)} is too short for "
                               f"burn-in {burn_in}")
    lv = discretize_index(U[n], index_bins)
    soj = np.minimum(T[n + 1] - T[n], t_max)
    counts = np.zeros((S, V, S, t_max), dtype=np.int64)
    np.add.at(counts, (J[n], lv, J[n + 1], soj - 1), 1)
    visits = counts.sum(axis=(2, 3))
    return IndexedKernel(mass=_normalize(counts, visits), visits=visits, m=m,
                         return_bins=return_bins, index_bins=index_bins,
                         counts=counts, min_visits=min_visits,
                         burn_in=burn_in, convention=convention)


def embedded_probs(k: IndexedKernel) -> np.ndarray:
    return k.embedded_probs()


def sojourn_cdf(k: IndexedKernel, i, v, allow_backoff=True) -> np.ndarray:
    return k.sojourn_cdf(i, v, allow_backoff)


def conditional_wait(k: IndexedKernel, i, v, j) -> np.ndarray:
    return k.conditional_wait(i, v, j)


def lookup_with_backoff(k: IndexedKernel, i, v, allow_backoff=True):
    return k.lookup_with_backoff(i, v, allow_backoff)
