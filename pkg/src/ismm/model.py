"""Glue that turns a return series into a fitted indexed kernel."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InsufficientHistory
from .index import IndexParams, fit_index_bins, index_series
from .ingest import ReturnSeries
from .kernel import IndexedKernel, estimate_kernel
from .states import (EmbeddedChain, ReturnBinning, discretize_returns,
                     extract_embedded_chain, fit_return_bins)

NO_INDEX = "no-index"


@dataclass
class ModelConfig:
    n_states: int = 5
    V: int = 5
    t_max: int = 60
    min_visits: int = 30
    every_minute: bool = False
    levels: tuple | None = None


@dataclass
class PreparedData:
    returns: ReturnSeries
    bins: ReturnBinning
    chain: EmbeddedChain
    n_minutes: int
    convention: str


def prepare(returns: ReturnSeries, cfg: ModelConfig | None = None,
            bins: ReturnBinning | None = None) -> PreparedData:
    cfg = cfg or ModelConfig()
    if bins is None:
        bins = fit_return_bins(returns, cfg.n_states, cfg.levels)
    ss = discretize_returns(returns, bins)
    chain = extract_embedded_chain(ss, every_minute=cfg.every_minute)
    conv = "every-minute" if cfg.every_minute else "state-change"
    return PreparedData(returns, bins, chain, len(returns), conv)


def fit_model(data: PreparedData, m, cfg: ModelConfig | None = None
              ) -> IndexedKernel:
    """Estimate the kernel for memory `m` (or the ``"no-index"`` sentinel).

    The no-index model keeps a single index level, i.e. a plain
    semi-Markov kernel; it still carries ``m = 1`` so that simulation can
    reuse the same initial history.
    """
    cfg = cfg or ModelConfig()
    if m == NO_INDEX:
        m_eff, V = 1, 1
    else:
        m_eff, V = int(m), cfg.V
    if len(data.chain) < m_eff + 3:
        raise InsufficientHistory(needed=m_eff + 3, available=len(data.chain))
    params = IndexParams(m_eff, data.bins.representatives)
    U = index_series(data.chain, params)
    ib = fit_index_bins(U[np.isfinite(U)], V)
    k = estimate_kernel(data.chain, U, ib, t_max=cfg.t_max, m=m_eff,
                        return_bins=data.bins, min_visits=cfg.min_visits,
                        convention=data.convention)
    k.meta["model"] = NO_INDEX if m == NO_INDEX else f"m={m_eff}"
    k.meta["n_minutes"] = data.n_minutes
    k.meta["init_history"] = {
        "J": data.chain.J[:m_eff + 2].tolist(),
        "T": data.chain.T[:m_eff + 2].tolist()}
    return k


def initial_history(data: PreparedData, kernel: IndexedKernel) -> EmbeddedChain:
    """First ``m + 2`` entries of the data chain (the estimation burn-in)."""
    need = kernel.m + 2
    return EmbeddedChain(data.chain.J[:need], data.chain.T[:need])
