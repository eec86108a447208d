import io
from datetime import date, datetime, timedelta

import numpy as np
import pytest

from ismm.simulate import BenchmarkParams, make_regime_benchmark
from ismm.model import prepare


def day_ticks(day, start="09:00:30", n=None, end="17:24:30", step=60,
              price=10.0, drift=0.005, closing=None):
    """Tick rows for one day: one trade every `step` seconds."""
    t0 = datetime.combine(day, datetime.strptime(start, "%H:%M:%S").time())
    t1 = datetime.combine(day, datetime.strptime(end, "%H:%M:%S").time())
    rows, k, t = [], 0, t0
    while t <= t1 and (n is None or k < n):
        rows.append((t, price + drift * (k % 7)))
        k += 1
        t += timedelta(seconds=step)
    if closing is not None:
        rows.append((datetime.combine(day, datetime.strptime(
            "17:31:00", "%H:%M:%S").time()), closing))
    return rows


def to_csv(rows):
    lines = ["timestamp,price"]
    lines += [f"{t.isoformat()},{p}" for t, p in rows]
    return "\n".join(lines) + "\n"


def csv_stream(rows):
    return io.BytesIO(to_csv(rows).encode())


@pytest.fixture(scope="session")
def small_benchmark():
    return make_regime_benchmark(BenchmarkParams(n_minutes=60_000), seed=3)


@pytest.fixture(scope="session")
def small_data(small_benchmark):
    return prepare(small_benchmark)


# One PASS/FAIL line per acceptance criterion, printed after the run.
ACCEPTANCE = []


def record_criterion(number, name, passed, detail):
    line = f"CRITERION {number} [{'PASS' if passed else 'FAIL'}] {name}: {detail}"
    ACCEPTANCE.append((number, line))
    print(line)
    return passed


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for _, line in sorted(ACCEPTANCE):
        terminalreporter.write_line(line)
