"""
Autocorrelation of squared returns and the memory sweep.

``sigma(tau) = c(tau) / c(0)`` with the biased autocovariance
``c(tau) = 1/N * sum_t (x_t - xbar)(x_{t+tau} - xbar)`` of ``x = R**2``.
"""

from __future__ import annotations

import csv
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateVariance, GridMismatch, IsmmError
from .ingest import ReturnSeries
from .model import (NO_INDEX, ModelConfig, PreparedData, fit_model,
                    initial_history)
from .simulate import simulate_returns

log = logging.getLogger(__name__)

DEFAULT_TAU_MAX = 100
DEFAULT_M_GRID = tuple(range(5, 201, 5))


@dataclass
class AcfReport:
    taus: np.ndarray
    sigma: np.ndarray
    n_obs: int
    label: str = ""
    replications: int = 1
    sigma_reps: np.ndarray | None = None  # (replications, tau_max)

    def write_csv(self, fh):
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["tau", "sigma"])
        for t, s in zip(self.taus, self.sigma):
            w.writerow([int(t), repr(float(s))])

    def standard_error(self) -> np.ndarray:
        if self.sigma_reps is None or len(self.sigma_reps) < 2:
            raise ValueError("standard error needs at least 2 replications")
        return self.sigma_reps.std(axis=0, ddof=1) / np.sqrt(len(self.sigma_reps))


def _as_array(returns):
    if isinstance(returns, ReturnSeries):
        return returns.concatenated(), returns.day_lengths()
    return np.asarray(returns, dtype=float), None


def autocorrelation(x, tau_max: int, day_lengths=None) -> np.ndarray:
    """Biased-normalization autocorrelation of `x` at lags ``1..tau_max``.

    With `day_lengths`, only pairs inside the same day contribute to the
    lagged sums (the normalization stays ``1/N``).
    """
    x = np.asarray(x, dtype=float)
    N = x.size
    if N <= tau_max + 1:
        raise ValueError(f"series of length {N} too short for tau_max "
                         f"{tau_max}")
    if np.ptp(x) == 0:
        raise DegenerateVariance("series has zero variance")
    d = x - x.mean()
    c0 = d @ d
    out = np.empty(tau_max)
    if day_lengths is None:
        for tau in range(1, tau_max + 1):
            out[tau - 1] = d[:-tau] @ d[tau:]
    else:
        day_id = np.repeat(np.arange(len(day_lengths)), day_lengths)
        for tau in range(1, tau_max + 1):
            same = day_id[:-tau] == day_id[tau:]
            out[tau - 1] = (d[:-tau] * d[tau:])[same].sum()
    return out / c0


def acf_squared(returns, tau_max: int = DEFAULT_TAU_MAX, label: str = "",
                per_day: bool = False) -> AcfReport:
    r, days = _as_array(returns)
    sigma = autocorrelation(r ** 2, tau_max, days if per_day else None)
    return AcfReport(np.arange(1, tau_max + 1), sigma, r.size, label)


def acf_raw(returns, tau_max: int = DEFAULT_TAU_MAX) -> np.ndarray:
    r, _ = _as_array(returns)
    return autocorrelation(r, tau_max)


def mse_acf(reference: AcfReport, candidate: AcfReport) -> float:
    if len(reference.taus) != len(candidate.taus) or \
            np.any(reference.taus != candidate.taus):
        raise GridMismatch("autocorrelation curves use different lag grids")
    return float(np.mean((reference.sigma - candidate.sigma) ** 2))


# -- model comparison ------------------------------------------------------

def simulated_acf(data: PreparedData, m, cfg: ModelConfig, replications: int,
                  tau_max: int, seed: int, horizon: int | None = None
                  ) -> AcfReport:
    """Average the squared-return ACF over simulated replications."""
    kernel = fit_model(data, m, cfg)
    init = initial_history(data, kernel)
    horizon = horizon or data.n_minutes
    key = 0 if m == NO_INDEX else int(m)
    curves = np.empty((replications, tau_max))
    for r in range(replications):
        ret = simulate_returns(kernel, init, horizon, seed, stream=(key, r))
        curves[r] = autocorrelation(ret ** 2, tau_max)
    label = NO_INDEX if m == NO_INDEX else f"m={m}"
    return AcfReport(np.arange(1, tau_max + 1), curves.mean(axis=0), horizon,
                     label, replications, curves)


def _label(m):
    return NO_INDEX if m == NO_INDEX else f"m={m}"


def compare_models(data: PreparedData, m_list, tau_max: int = DEFAULT_TAU_MAX,
                   seed: int = 0, replications: int = 10,
                   cfg: ModelConfig | None = None, workers: int = 1) -> dict:
    """Squared-return ACF of the data and of each model, keyed by label."""
    cfg = cfg or ModelConfig()
    out = {"data": acf_squared(data.returns, tau_max, label="data")}
    jobs = [(data, m, cfg, replications, tau_max, seed) for m in m_list]
    for m, rep in zip(m_list, _map(_simulated_acf_job, jobs, workers)):
        if isinstance(rep, IsmmError):
            raise rep
        out[_label(m)] = rep
    return out


def write_comparison_csv(curves: dict, fh):
    labels = list(curves)
    taus = curves[labels[0]].taus
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(["tau"] + labels)
    for k, t in enumerate(taus):
        w.writerow([int(t)] + [repr(float(curves[l].sigma[k])) for l in labels])


# -- memory sweep --------------------------------------------------------

@dataclass
class SweepReport:
    m_grid: list
    mse: list
    replications: int
    best_m: int | None
    errors: dict = field(default_factory=dict)
    curves: dict = field(default_factory=dict)
    reference: AcfReport | None = None

    def write_csv(self, fh):
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["m", "mse"])
        for m, e in zip(self.m_grid, self.mse):
            w.writerow([m, repr(float(e))])

    def summary(self) -> dict:
        return {"best_m": self.best_m,
                "min_mse": None if self.best_m is None
                else self.mse[self.m_grid.index(self.best_m)],
                "replications": self.replications,
                "m_grid": list(self.m_grid),
                "errors": {str(k): v for k, v in self.errors.items()}}

    def write_json(self, fh):
        json.dump(self.summary(), fh, indent=2)


def _simulated_acf_job(args):
    data, m, cfg, replications, tau_max, seed = args
    try:
        return simulated_acf(data, m, cfg, replications, tau_max, seed)
    except IsmmError as exc:
        return exc


def _map(fn, jobs, workers):
    if workers <= 1:
        return [fn(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(fn, jobs))  # results in submission order


def best_memory(m_grid, mse):
    """Argmin of `mse` over finite entries; ties go to the smaller m."""
    best, best_e = None, np.inf
    for m, e in zip(m_grid, mse):
        if np.isfinite(e) and e < best_e:
            best, best_e = m, e
    return best


def memory_sweep(data: PreparedData, m_grid=DEFAULT_M_GRID,
                 replications: int = 10, tau_max: int = DEFAULT_TAU_MAX,
                 seed: int = 0, cfg: ModelConfig | None = None,
                 reference: AcfReport | None = None,
                 workers: int = 1) -> SweepReport:
    """MSE between the data's squared-return ACF and each model's mean ACF.

    Failures for one memory are recorded in ``errors`` and leave a NaN in
    ``mse``; the sweep continues.
    """
    m_grid = [int(m) for m in m_grid]
    if not m_grid or m_grid != sorted(m_grid):
        raise ValueError("m_grid must be non-empty and ascending")
    cfg = cfg or ModelConfig()
    if reference is None:
        reference = acf_squared(data.returns, tau_max, label="data")
    jobs = [(data, m, cfg, replications, tau_max, seed) for m in m_grid]
    mse, errors, curves = [], {}, {}
    for m, rep in zip(m_grid, _map(_simulated_acf_job, jobs, workers)):
        if isinstance(rep, IsmmError):
            log.warning("sweep entry m=%d failed: %s", m, rep)
            errors[m] = f"{type(rep).__name__}: {rep}"
            mse.append(float("nan"))
            continue
        curves[m] = rep
        mse.append(mse_acf(reference, rep))
    return SweepReport(m_grid, mse, replications, best_memory(m_grid, mse),
                       errors, curves, reference)
