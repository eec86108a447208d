"""
Command-line entry point.

Every subcommand accepts ``--config file.json``; explicit flags override the
file, which overrides built-in defaults.  The effective configuration is
written next to the outputs in ``<command>.meta.json``.

Exit codes: 0 success, 2 ingest/parse, 3 estimation, 4 simulation,
5 acf/sweep, 6 renewal solver; a JSON error record goes to stderr.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import acf as acf_mod
from .errors import IsmmError
from .fileio import atomic_open, write_json
from .index import IndexParams, discretize_index, index_series
from .ingest import (TradingCalendar, compute_returns, read_returns_csv,
                     read_ticks, resample_to_minutes, write_minutes_csv,
                     write_returns_csv)
from .kernel import IndexedKernel
from .model import NO_INDEX, ModelConfig, fit_model, prepare
from .renewal import (PhiQuery, compare_with_simulation, default_grid,
                      phi_vector, toy_kernel)
from .simulate import (BenchmarkParams, SimConfig, make_regime_benchmark,
                       simulate)
from .states import EmbeddedChain

log = logging.getLogger("ismm")

EXIT = {"ingest": 2, "benchmark": 4, "estimate": 3, "simulate": 4,
        "acf": 5, "sweep": 5, "phi": 6}

DEFAULTS = {
    "seed": 0,
    "n_states": 5,
    "V": 5,
    "m": 30,
    "t_max": 60,
    "min_visits": 30,
    "levels": None,
    "every_minute": False,
    "tau_max": 100,
    "replications": 10,
    "m_grid": "5:200:5",
    "m_list": "no-index,10,30",
    "workers": 1,
    "return_kind": "log",
    "per_day": False,
    "horizon": None,
    "backoff": True,
    "mc_reps": 100_000,
}


class CommandFailed(Exception):
    pass


def _parse_grid(spec):
    if isinstance(spec, (list, tuple)):
        return [int(m) for m in spec]
    spec = str(spec)
    if ":" in spec:
        a, b, c = (int(x) for x in spec.split(":"))
        return list(range(a, b + 1, c))
    return [int(x) for x in spec.split(",") if x]


def _parse_m_list(spec):
    items = spec if isinstance(spec, (list, tuple)) else str(spec).split(",")
    out = []
    for x in items:
        x = str(x).strip()
        if x:
            out.append(NO_INDEX if x == NO_INDEX else int(x))
    return out


def _config(args, keys):
    cfg = {k: DEFAULTS[k] for k in keys if k in DEFAULTS}
    if args.config:
        with open(args.config, encoding="utf-8") as fh:
            cfg.update(json.load(fh))
    for k in keys:
        v = getattr(args, k, None)
        if v is not None:
            cfg[k] = v
    return cfg


INPUT_KEYS = ("input", "calendar", "returns", "kernel", "query")


def _describe_input(path):
    """Name and content hash, so reports do not depend on where files live."""
    data = Path(path).read_bytes()
    return {"name": Path(path).name,
            "sha256": hashlib.sha256(data).hexdigest()}


def _meta(command, cfg, outputs):
    # the worker count never changes results, so it is not echoed
    cfg = {k: v for k, v in cfg.items() if k != "workers"}
    for k in INPUT_KEYS:
        if cfg.get(k) and Path(cfg[k]).is_file():
            cfg[k] = _describe_input(cfg[k])
    blob = json.dumps(cfg, sort_keys=True, default=str)
    return {"command": command, "config": cfg,
            "config_hash": hashlib.sha256(blob.encode()).hexdigest(),
            "outputs": sorted(str(Path(o).name) for o in outputs)}


def _model_cfg(cfg):
    levels = cfg.get("levels")
    if isinstance(levels, str):
        levels = tuple(float(x) for x in levels.split(","))
    return ModelConfig(n_states=int(cfg["n_states"]), V=int(cfg["V"]),
                       t_max=int(cfg["t_max"]),
                       min_visits=int(cfg["min_visits"]),
                       every_minute=bool(cfg["every_minute"]), levels=levels)


def _require(path):
    if path is None or not Path(path).is_file():
        raise FileNotFoundError(f"no such file: {path}")
    return Path(path)


# -- commands --------------------------------------------------------------

def cmd_ingest(args):
    cfg = _config(args, ["input", "calendar", "return_kind"])
    src = _require(cfg["input"])
    cal = TradingCalendar.from_json(_require(cfg["calendar"])) \
        if cfg.get("calendar") else TradingCalendar()
    ticks = read_ticks(src)
    ms = resample_to_minutes(ticks, cal)
    rs = compute_returns(ms, cfg["return_kind"])
    out = Path(args.out)
    with atomic_open(out / "minutes.csv") as fh:
        write_minutes_csv(ms, fh)
    with atomic_open(out / "returns.csv") as fh:
        write_returns_csv(rs, fh)
    report = {
        "instrument": ms.instrument,
        "days": [{"date": d.isoformat(), "minutes": len(p),
                  "full_day": cal.full_day_length(d)} for d, p in ms.days],
        "skipped": [{"date": s.date.isoformat(), "reason": s.reason}
                    for s in rs.skipped],
        "n_returns": len(rs),
    }
    cfg["calendar_rules"] = cal.to_dict()
    report["meta"] = _meta("ingest", cfg, ["minutes.csv", "returns.csv"])
    write_json(out / "ingest_report.json", report)
    return report


def cmd_benchmark(args):
    cfg = _config(args, ["seed", "n_minutes", "rho", "sigma_low",
                         "sigma_high", "p_high"])
    params = BenchmarkParams(**{k: cfg[k] for k in
                                ("n_minutes", "rho", "sigma_low", "sigma_high",
                                 "p_high") if cfg.get(k) is not None})
    rs = make_regime_benchmark(params, int(cfg["seed"]))
    out = Path(args.out)
    with atomic_open(out / "returns.csv") as fh:
        write_returns_csv(rs, fh)
    meta = _meta("benchmark", cfg, ["returns.csv"])
    meta["params"] = params.to_dict()
    write_json(out / "benchmark.meta.json", meta)
    return meta


def cmd_estimate(args):
    cfg = _config(args, ["returns", "m", "n_states", "V", "t_max",
                         "min_visits", "levels", "every_minute"])
    rs = read_returns_csv(_require(cfg["returns"]))
    mcfg = _model_cfg(cfg)
    data = prepare(rs, mcfg)
    m = cfg["m"]
    m = NO_INDEX if m == NO_INDEX else int(m)
    kernel = fit_model(data, m, mcfg)
    problems = kernel.check_invariants()
    out = Path(args.out)
    kernel.meta.update(_meta("estimate", cfg, [
        "kernel.json", "chain.csv", "index.csv", "bins.json"]))
    kernel.meta["invariant_violations"] = problems
    with atomic_open(out / "kernel.json") as fh:
        kernel.to_json(fh)
    with atomic_open(out / "bins.json") as fh:
        json.dump({"returns": data.bins.to_dict(),
                   "index": kernel.index_bins.to_dict()}, fh, indent=2)
    with atomic_open(out / "chain.csv") as fh:
        data.chain.write_csv(fh)
    U = index_series(data.chain, IndexParams(kernel.m, data.bins.representatives))
    with atomic_open(out / "index.csv") as fh:
        fh.write("n,T,U,level\n")
        for n, (t, u) in enumerate(zip(data.chain.T, U)):
            if np.isfinite(u):
                fh.write(f"{n},{int(t)},{float(u)!r},"
                         f"{discretize_index(u, kernel.index_bins)}\n")
    if problems:
        raise CommandFailed("kernel self-check failed: " + "; ".join(problems))
    return kernel.meta


def _load_kernel(path):
    with open(_require(path), encoding="utf-8") as fh:
        return IndexedKernel.from_json(fh)


def cmd_simulate(args):
    cfg = _config(args, ["kernel", "seed", "horizon", "backoff", "replication"])
    kernel = _load_kernel(cfg["kernel"])
    hist = kernel.meta.get("init_history")
    if hist is None:
        raise IsmmError("kernel has no stored initial history")
    horizon = int(cfg["horizon"] or kernel.meta.get("n_minutes", 0))
    rep = int(cfg.get("replication") or 0)
    res = simulate(kernel, SimConfig(horizon, int(cfg["seed"]),
                                     EmbeddedChain(hist["J"], hist["T"]),
                                     bool(cfg["backoff"]), (kernel.m, rep)))
    out = Path(args.out)
    with atomic_open(out / "simulation.csv") as fh:
        res.write_csv(fh)
    meta = _meta("simulate", cfg, ["simulation.csv"])
    meta["transitions"] = len(res.chain) - 1
    meta["backoff_draws"] = res.provenance.count("backoff")
    write_json(out / "simulate.meta.json", meta)
    return meta


def _load_data(cfg):
    rs = read_returns_csv(_require(cfg["returns"]))
    mcfg = _model_cfg(cfg)
    return prepare(rs, mcfg), mcfg


def cmd_acf(args):
    cfg = _config(args, ["returns", "m_list", "tau_max", "replications",
                         "seed", "n_states", "V", "t_max", "min_visits",
                         "levels", "every_minute", "workers", "per_day"])
    data, mcfg = _load_data(cfg)
    tau_max = int(cfg["tau_max"])
    m_list = _parse_m_list(cfg["m_list"])
    curves = acf_mod.compare_models(data, m_list, tau_max, int(cfg["seed"]),
                                    int(cfg["replications"]), mcfg,
                                    int(cfg["workers"]))
    if cfg["per_day"]:
        curves["data"] = acf_mod.acf_squared(data.returns, tau_max, "data",
                                             per_day=True)
    out = Path(args.out)
    with atomic_open(out / "acf.csv") as fh:
        acf_mod.write_comparison_csv(curves, fh)
    meta = _meta("acf", cfg, ["acf.csv"])
    meta["replications_averaged"] = int(cfg["replications"])
    write_json(out / "acf.meta.json", meta)
    return meta


def cmd_sweep(args):
    cfg = _config(args, ["returns", "m_grid", "tau_max", "replications",
                         "seed", "n_states", "V", "t_max", "min_visits",
                         "levels", "every_minute", "workers"])
    data, mcfg = _load_data(cfg)
    grid = _parse_grid(cfg["m_grid"])
    rep = acf_mod.memory_sweep(data, grid, int(cfg["replications"]),
                               int(cfg["tau_max"]), int(cfg["seed"]), mcfg,
                               workers=int(cfg["workers"]))
    out = Path(args.out)
    with atomic_open(out / "sweep.csv") as fh:
        rep.write_csv(fh)
    summary = rep.summary()
    summary["meta"] = _meta("sweep", cfg, ["sweep.csv", "sweep.json"])
    write_json(out / "sweep.json", summary)
    return summary


def cmd_phi(args):
    cfg = _config(args, ["kernel", "query", "seed", "mc_reps", "grid"])
    kernel = _load_kernel(cfg["kernel"]) if cfg.get("kernel") else toy_kernel()
    out = Path(args.out)
    if cfg.get("query"):
        with open(_require(cfg["query"]), encoding="utf-8") as fh:
            q = PhiQuery.from_dict(json.load(fh))
        vec = phi_vector(kernel, q)
        res = {"query": q.to_dict(), "phi": float(np.clip(vec[q.j], 0, 1)),
               "phi_all_states": [float(x) for x in vec],
               "meta": _meta("phi", cfg, ["phi.json"])}
        write_json(out / "phi.json", res)
        return res
    checks = compare_with_simulation(kernel, default_grid(),
                                     int(cfg["mc_reps"]), int(cfg["seed"]))
    with atomic_open(out / "phi_grid.csv") as fh:
        fh.write("query,states,times,j,t,V_cap,phi,mc,se,z,status\n")
        for k, c in enumerate(checks):
            q = c.query
            fh.write(f"{k},{' '.join(map(str, q.states))},"
                     f"{' '.join(map(str, q.times))},{q.j},{q.t},{q.V_cap!r},"
                     f"{c.phi!r},{c.mc!r},{c.se!r},{c.z:.3f},"
                     f"{'pass' if c.passed else 'FAIL'}\n")
    meta = _meta("phi", cfg, ["phi_grid.csv"])
    meta["passed"] = sum(c.passed for c in checks)
    meta["total"] = len(checks)
    write_json(out / "phi.meta.json", meta)
    if not all(c.passed for c in checks):
        raise CommandFailed(f"{meta['total'] - meta['passed']} of "
                            f"{meta['total']} solver checks failed")
    return meta


# -- argument parsing --------------------------------------------------------

def _bool(s):
    return str(s).lower() in ("1", "true", "yes", "on")


def build_parser():
    p = argparse.ArgumentParser(prog="ismm", description=__doc__.split("\n")[1])
    sub = p.add_subparsers(dest="command", required=True)

    def add(name, fn, help):
        sp = sub.add_parser(name, help=help)
        sp.add_argument("--config", help="JSON file with default options")
        sp.add_argument("--out", default=".", help="output directory")
        sp.set_defaults(fn=fn)
        return sp

    def model_opts(sp):
        sp.add_argument("--returns", help="returns CSV (date,minute_index,return)")
        sp.add_argument("--n-states", dest="n_states", type=int)
        sp.add_argument("--V", type=int, help="index levels")
        sp.add_argument("--t-max", dest="t_max", type=int)
        sp.add_argument("--min-visits", dest="min_visits", type=int)
        sp.add_argument("--levels", help="comma-separated |r| quantile levels")
        sp.add_argument("--every-minute", dest="every_minute",
                        action="store_const", const=True,
                        help="treat every minute as a transition")

    sp = add("ingest", cmd_ingest, "resample ticks to minutes and returns")
    sp.add_argument("--input", help="tick CSV (timestamp,price)")
    sp.add_argument("--calendar", help="calendar JSON")
    sp.add_argument("--return-kind", dest="return_kind",
                    choices=["log", "simple"])

    sp = add("benchmark", cmd_benchmark, "write the synthetic regime benchmark")
    sp.add_argument("--seed", type=int)
    sp.add_argument("--n-minutes", dest="n_minutes", type=int)
    sp.add_argument("--rho", type=float)
    sp.add_argument("--sigma-low", dest="sigma_low", type=float)
    sp.add_argument("--sigma-high", dest="sigma_high", type=float)
    sp.add_argument("--p-high", dest="p_high", type=float)

    sp = add("estimate", cmd_estimate, "estimate the indexed kernel")
    model_opts(sp)
    sp.add_argument("--m", help="memory, or 'no-index'")

    sp = add("simulate", cmd_simulate, "simulate from a kernel")
    sp.add_argument("--kernel")
    sp.add_argument("--seed", type=int)
    sp.add_argument("--horizon", type=int)
    sp.add_argument("--replication", type=int)
    sp.add_argument("--backoff", type=_bool)

    for name, fn, help in (("acf", cmd_acf, "squared-return ACF curves"),
                           ("sweep", cmd_sweep, "MSE over the memory grid")):
        sp = add(name, fn, help)
        model_opts(sp)
        sp.add_argument("--tau-max", dest="tau_max", type=int)
        sp.add_argument("--replications", type=int)
        sp.add_argument("--seed", type=int)
        sp.add_argument("--workers", type=int)
        if name == "acf":
            sp.add_argument("--m-list", dest="m_list",
                            help="e.g. no-index,10,30")
            sp.add_argument("--per-day", dest="per_day",
                            action="store_const", const=True)
        else:
            sp.add_argument("--m-grid", dest="m_grid",
                            help="start:stop:step or comma list")

    sp = add("phi", cmd_phi, "renewal solver (query or comparison grid)")
    sp.add_argument("--kernel", help="kernel JSON (default: built-in toy)")
    sp.add_argument("--query", help="query JSON; omit to run the grid")
    sp.add_argument("--seed", type=int)
    sp.add_argument("--mc-reps", dest="mc_reps", type=int)
    return p


def main(argv=None):
    logging.basicConfig(level=os.environ.get("ISMM_LOG", "WARNING").upper(),
                        format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        args.fn(args)
    except (IsmmError, CommandFailed, FileNotFoundError, ValueError,
            KeyError, json.JSONDecodeError) as exc:
        code = EXIT[args.command]
        err = {"error": type(exc).__name__, "message": str(exc),
               "stage": args.command, "exit_code": code}
        if getattr(exc, "line", None) is not None:
            err["line"] = exc.line
        print(json.dumps(err), file=sys.stderr)
        return code
    return 0


if __name__ == "__main__":
    sys.exit(main())
