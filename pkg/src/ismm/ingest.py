"""
Tick ingestion and resampling onto the one-minute trading grid.

A trading day is laid out as::

    [opening price, p(b_1), p(b_2), ..., p(b_K), closing price]

where ``b_k = continuous_start + k minutes`` and ``p(b)`` is the price of
the last trade strictly before ``b``.  With the default calendar
(continuous trading 09:00-17:25) a full day has ``K = 505`` boundaries and
507 entries; before the regime-change date continuous trading starts at
09:05, giving 502 entries.

Days that open late or stop early keep only the boundaries inside their
effective trading window.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import math
from dataclasses import dataclass, field
from datetime import date, datetime, time, timedelta
from pathlib import Path

import numpy as np

from .errors import (DisorderedTicks, EmptyFile, MalformedRow, MissingOpen,
                     NonPositivePrice)

log = logging.getLogger(__name__)

REORDER_TOLERANCE = timedelta(seconds=1)


@dataclass(frozen=True)
class TickFormat:
    delimiter: str = ","
    timestamp_column: str = "timestamp"
    price_column: str = "price"


@dataclass
class TickSeries:
    instrument: str
    timestamps: list
    prices: np.ndarray

    def __len__(self):
        return len(self.timestamps)


@dataclass(frozen=True)
class TradingCalendar:
    session_open: time = time(9, 0)
    continuous_start: time = time(9, 0)
    continuous_end: time = time(17, 25)
    regime_change_date: date = date(2009, 9, 28)
    pre_change_continuous_start: time = time(9, 5)

    def __post_init__(self):
        for start in (self.continuous_start, self.pre_change_continuous_start):
            if not start < self.continuous_end:
                raise ValueError("continuous_start must precede continuous_end")
            if self.session_open > start:
                raise ValueError("session_open must not follow continuous_start")

    def start_for(self, day: date) -> time:
        if day < self.regime_change_date:
            return self.pre_change_continuous_start
        return self.continuous_start

    def boundary_count(self, day: date) -> int:
        """Number of one-minute boundaries in a full continuous session."""
        return _minutes_between(self.start_for(day), self.continuous_end)

    def full_day_length(self, day: date) -> int:
        return self.boundary_count(day) + 2

    @classmethod
    def from_dict(cls, d: dict) -> "TradingCalendar":
        kw = {}
        for key in ("session_open", "continuous_start", "continuous_end",
                    "pre_change_continuous_start"):
            if key in d:
                kw[key] = time.fromisoformat(d[key])
        if "regime_change_date" in d:
            kw["regime_change_date"] = date.fromisoformat(d["regime_change_date"])
        return cls(**kw)

    @classmethod
    def from_json(cls, path) -> "TradingCalendar":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))

    def to_dict(self) -> dict:
        return {
            "session_open": self.session_open.isoformat(),
            "continuous_start": self.continuous_start.isoformat(),
            "continuous_end": self.continuous_end.isoformat(),
            "regime_change_date": self.regime_change_date.isoformat(),
            "pre_change_continuous_start":
                self.pre_change_continuous_start.isoformat(),
        }


@dataclass
class SkippedDay:
    date: date
    reason: str


@dataclass
class MinuteSeries:
    instrument: str
    days: list  # list of (date, np.ndarray of prices)
    skipped: list = field(default_factory=list)

    def lengths(self):
        return [len(p) for _, p in self.days]


@dataclass
class ReturnSeries:
    """Intraday returns, one array per trading day."""

    instrument: str
    days: list  # list of (date or None, np.ndarray)
    kind: str = "log"
    skipped: list = field(default_factory=list)

    @classmethod
    def from_array(cls, values, instrument="", day_length=None):
        values = np.asarray(values, dtype=float)
        if day_length is None:
            return cls(instrument, [(None, values)])
        days = [(None, values[i:i + day_length])
                for i in range(0, len(values), day_length)]
        return cls(instrument, days)

    def concatenated(self) -> np.ndarray:
        if not self.days:
            return np.empty(0)
        return np.concatenate([r for _, r in self.days])

    def day_lengths(self):
        return [len(r) for _, r in self.days]

    def __len__(self):
        return sum(self.day_lengths())


def _minutes_between(a: time, b: time) -> int:
    secs = (b.hour * 3600 + b.minute * 60 + b.second) - \
        (a.hour * 3600 + a.minute * 60 + a.second)
    return secs // 60


def _seconds(t: time) -> float:
    return t.hour * 3600 + t.minute * 60 + t.second + t.microsecond * 1e-6


def parse_ticks(stream, fmt: TickFormat | None = None,
                instrument: str = "") -> TickSeries:
    """Parse a ``timestamp,price`` CSV stream into a :class:`TickSeries`.

    `stream` may be a binary or text file object.  Rows that are out of
    order by at most one second are stably re-sorted; larger disorder
    raises :class:`DisorderedTicks`.
    """
    fmt = fmt or TickFormat()
    if isinstance(stream, (io.RawIOBase, io.BufferedIOBase)) or \
            "b" in getattr(stream, "mode", ""):
        stream = io.TextIOWrapper(stream, encoding="utf-8", newline="")
    reader = csv.reader(stream, delimiter=fmt.delimiter)
    header = next(reader, None)
    if header is None:
        raise EmptyFile("empty tick file")
    header = [h.strip() for h in header]
    try:
        ts_col = header.index(fmt.timestamp_column)
        px_col = header.index(fmt.price_column)
    except ValueError:
        raise MalformedRow(f"header must contain {fmt.timestamp_column!r} "
                           f"and {fmt.price_column!r}, got {header}", line=1)

    rows = []
    latest = None
    for lineno, row in enumerate(reader, start=2):
        if not row or all(not c.strip() for c in row):
            continue
        try:
            ts = datetime.fromisoformat(row[ts_col].strip())
            px = float(row[px_col])
        except (ValueError, IndexError) as exc:
            raise MalformedRow(f"cannot parse {row!r} ({exc})", line=lineno)
        if not math.isfinite(px):
            raise MalformedRow(f"non-finite price {row[px_col]!r}", line=lineno)
        if px <= 0:
            raise NonPositivePrice(f"price {px} is not positive", line=lineno)
        if latest is not None and ts < latest - REORDER_TOLERANCE:
            raise DisorderedTicks(
                f"timestamp {ts} precedes {latest} by more than "
                f"{REORDER_TOLERANCE.total_seconds():g}s", line=lineno)
        if latest is None or ts > latest:
            latest = ts
        rows.append((ts, px))
    if not rows:
        raise EmptyFile("tick file has a header but no rows")

    rows.sort(key=lambda r: r[0])  # stable
    return TickSeries(instrument, [r[0] for r in rows],
                      np.array([r[1] for r in rows], dtype=float))


def read_ticks(path, fmt: TickFormat | None = None) -> TickSeries:
    path = Path(path)
    with open(path, "rb") as fh:
        return parse_ticks(fh, fmt, instrument=path.stem)


def _resample_day(day, times, prices, cal: TradingCalendar):
    """Return the price entries of one day, or raise MissingOpen."""
    start = _seconds(cal.start_for(day))
    end = _seconds(cal.continuous_end)
    keep = times >= _seconds(cal.session_open)
    times, prices = times[keep], prices[keep]

    continuous = times < end
    if not continuous.any():
        raise MissingOpen(f"{day}: no trade before the close of continuous "
                          "trading")
    t_cont, p_cont = times[continuous], prices[continuous]
    auction = prices[~continuous]

    n_bounds = int((end - start) // 60)
    bounds = start + 60.0 * np.arange(1, n_bounds + 1)
    first = int(np.searchsorted(bounds, t_cont[0], side="right"))
    if auction.size:
        last = n_bounds - 1
    else:
        last = min(int(np.searchsorted(bounds, t_cont[-1], side="right")),
                   n_bounds - 1)
    if first >= n_bounds:
        raise MissingOpen(f"{day}: first trade after the last minute boundary")

    eff = bounds[first:last + 1]
    idx = np.searchsorted(t_cont, eff, side="left") - 1
    entries = [p_cont[0]]
    entries.extend(p_cont[idx])
    if auction.size:
        entries.append(auction[-1])
    elif last == n_bounds - 1:
        entries.append(p_cont[-1])
    return np.asarray(entries, dtype=float)


def resample_to_minutes(ticks: TickSeries,
                        cal: TradingCalendar | None = None) -> MinuteSeries:
    """Resample ticks onto the effective one-minute grid of each day."""
    cal = cal or TradingCalendar()
    if len(ticks) == 0:
        raise EmptyFile("no ticks to resample")
    by_day = {}
    for ts, px in zip(ticks.timestamps, ticks.prices):
        tod = ts.hour * 3600 + ts.minute * 60 + ts.second + ts.microsecond * 1e-6
        by_day.setdefault(ts.date(), ([], []))
        by_day[ts.date()][0].append(tod)
        by_day[ts.date()][1].append(px)

    days, skipped = [], []
    for day in sorted(by_day):
        t, p = by_day[day]
        try:
            days.append((day, _resample_day(day, np.asarray(t),
                                            np.asarray(p), cal)))
        except MissingOpen as exc:
            log.warning("skipping day: %s", exc)
            skipped.append(SkippedDay(day, str(exc)))
    return MinuteSeries(ticks.instrument, days, skipped)


def compute_returns(ms: MinuteSeries, kind: str = "log") -> ReturnSeries:
    """Per-day returns; no return ever spans the overnight gap."""
    if kind not in ("log", "simple"):
        raise ValueError(f"unknown return kind {kind!r}")
    days, skipped = [], list(ms.skipped)
    for day, prices in ms.days:
        if len(prices) < 2:
            log.warning("skipping day %s: fewer than 2 prices", day)
            skipped.append(SkippedDay(day, "fewer than 2 prices"))
            continue
        if kind == "log":
            r = np.diff(np.log(prices))
        else:
            r = prices[1:] / prices[:-1] - 1.0
        days.append((day, r))
    return ReturnSeries(ms.instrument, days, kind, skipped)


def write_minutes_csv(ms: MinuteSeries, fh):
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(["date", "minute_index", "price"])
    for day, prices in ms.days:
        for i, p in enumerate(prices):
            w.writerow([day.isoformat(), i, repr(float(p))])


def write_returns_csv(rs: ReturnSeries, fh):
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(["date", "minute_index", "return"])
    for k, (day, r) in enumerate(rs.days):
        label = day.isoformat() if day is not None else f"day{k}"
        for i, x in enumerate(r):
            w.writerow([label, i, repr(float(x))])


def read_returns_csv(path, instrument=None) -> ReturnSeries:
    path = Path(path)
    days = {}
    order = []
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or "return" not in reader.fieldnames:
            raise MalformedRow("returns file needs a 'return' column", line=1)
        for lineno, row in enumerate(reader, start=2):
            try:
                x = float(row["return"])
            except (TypeError, ValueError):
                raise MalformedRow(f"bad return {row!r}", line=lineno)
            label = row.get("date") or "day0"
            if label not in days:
                days[label] = []
                order.append(label)
            days[label].append(x)
    if not order:
        raise EmptyFile(f"{path}: no returns")
    out = []
    for label in order:
        try:
            d = date.fromisoformat(label)
        except ValueError:
            d = None
        out.append((d, np.asarray(days[label], dtype=float)))
    return ReturnSeries(instrument or path.stem, out)
