import datetime as dt

import numpy as np
import pytest

from invrisk.forward import ConstraintSet


def write_prices(path, rows):
    lines = ["date,ticker,open,close"] + [f"{d},{t},{o!r},{c!r}" for d, t, o, c in rows]
    path.write_text("\n".join(lines) + "\n")
    return path


def write_portfolios(path, rows):
    lines = ["date,ticker,weight"] + [f"{d},{t},{w!r}" for d, t, w in rows]
    path.write_text("\n".join(lines) + "\n")
    return path


def business_days(start, n):
    d = dt.date.fromisoformat(start)
    out = []
    while len(out) < n:
        if d.weekday() < 5:
            out.append(d)
        d += dt.timedelta(days=1)
    return out


def random_spd(n, rng, floor=0.05):
    B = rng.normal(size=(n, n))
    return B @ B.T / n + floor * np.eye(n)


@pytest.fixture
def simplex2():
    return ConstraintSet.long_only_budget(2)


ACCEPTANCE_LINES = []


def report(number, ok, detail):
    line = f"ACCEPTANCE {number:>2} {'PASS' if ok else 'FAIL'}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
