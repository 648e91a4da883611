"""Regenerate the bundled synthetic fixtures in src/invrisk/data.

Run from the repository root: ``python scripts/make_fixtures.py``.
Everything is seeded, so the output is byte-for-byte reproducible.
"""
from __future__ import annotations

import datetime as dt
from pathlib import Path

import numpy as np

from invrisk.datasets import robo_moments
from invrisk.io import fmt
from invrisk.metrics import PUBLISHED_BETAS
from invrisk.projections import SECTORS
from invrisk.validation import generate_multiperiod_fixture

OUT = Path(__file__).resolve().parents[1] / "src" / "invrisk" / "data"

# sector weights (percent) of an S&P 500 index fund at 2020-03-31
INDEX_FUND_SECTORS = (2.0585, 10.6418, 9.5455, 8.0814, 2.6315, 13.8400,
                      15.1290, 8.0863, 2.9809, 21.4863, 3.5461)
PER_SECTOR = 2


def business_days(start: str, count: int):
    d0 = np.datetime64(start, "D")
    return [d.astype(dt.date) for d in np.busday_offset(d0, np.arange(count), roll="forward")]


def write(name: str, lines):
    (OUT / name).write_text("\n".join(lines) + "\n", encoding="utf-8")


def sector_panel(rng):
    tickers, sectors = [], []
    for k, s in enumerate(SECTORS):
        for j in range(PER_SECTOR):
            tickers.append(f"S{k + 1:02d}{chr(ord('A') + j)}")
            sectors.append(s)
    write("sector_map.csv", ["ticker,sector"] + [f"{t},{s}" for t, s in zip(tickers, sectors)])

    days = business_days("2018-01-02", 783)
    n, ns = len(tickers), len(SECTORS)
    sec_idx = np.repeat(np.arange(ns), PER_SECTOR)
    mkt = 0.011 * rng.standard_normal(len(days))
    sec = 0.006 * rng.standard_normal((len(days), ns))
    idio = 0.008 * rng.standard_normal((len(days), n))
    drift = rng.uniform(0.0, 0.0008, n)
    beta = rng.uniform(0.7, 1.4, n)
    logret = drift + beta * mkt[:, None] + sec[:, sec_idx] + idio
    close = 50.0 * np.exp(np.cumsum(logret, axis=0))
    gap = 1.0 + 0.002 * rng.standard_normal((len(days), n))
    open_ = np.vstack([np.full((1, n), 50.0), close[:-1]]) * gap
    lines = ["date,ticker,open,close"]
    for i, d in enumerate(days):
        for j, t in enumerate(tickers):
            lines.append(f"{d.isoformat()},{t},{open_[i, j]:.6f},{close[i, j]:.6f}")
    write("sector_prices.csv", lines)

    quarters = ["2019-06-28", "2019-09-30", "2019-12-31", "2020-03-31",
                "2020-06-30", "2020-09-30", "2020-12-31"]
    base = np.array(INDEX_FUND_SECTORS)
    split = rng.uniform(0.3, 0.7, ns)
    lines = ["date,ticker,weight"]
    for q in quarters:
        if q == "2020-03-31":
            sw = base / base.sum()
        else:
            sw = base * np.exp(0.05 * rng.standard_normal(ns))
            sw = sw / sw.sum()
        for k in range(ns):
            parts = (split[k], 1.0 - split[k])
            for j in range(PER_SECTOR):
                lines.append(f"{q},{tickers[k * PER_SECTOR + j]},{fmt(sw[k] * parts[j])}")
    write("index_fund_holdings.csv", lines)


def multiperiod():
    c, Q = robo_moments()
    fx = generate_multiperiod_fixture(c, Q, 0.2, periods=12, seed=7)
    p = fx.prices
    lines = ["date,ticker,open,close"]
    for i, d in enumerate(p.dates):
        for j, t in enumerate(p.tickers):
            lines.append(f"{d.isoformat()},{t},{fmt(p.open[i, j])},{fmt(p.close[i, j])}")
    write("robo_prices.csv", lines)
    y = fx.portfolios
    lines = ["date,ticker,weight"]
    for i, d in enumerate(y.dates):
        for j, t in enumerate(y.tickers):
            lines.append(f"{d.isoformat()},{t},{fmt(y.holdings[i, j])}")
    write("robo_portfolios.csv", lines)


def betas():
    lines = ["label,year,beta"]
    for year, table in PUBLISHED_BETAS.items():
        for label, b in table.items():
            lines.append(f"{label},{year},{fmt(b)}")
    write("fund_betas.csv", lines)


if __name__ == "__main__":
    OUT.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(20200331)
    sector_panel(rng)
    multiperiod()
    betas()
