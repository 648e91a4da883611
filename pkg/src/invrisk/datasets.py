"""Bundled synthetic fixtures and seeded random problem generators."""
from __future__ import annotations

from importlib import resources
from pathlib import Path

import numpy as np

from .forward import ConstraintSet
from .inverse import frontier_breakpoints
from .market_data import align, load_portfolios, load_prices, rolling_annual_returns
from .projections import SectorMap, to_sector

__all__ = [
    "data_path",
    "load_index_fund",
    "sector_fixture",
    "random_psd",
    "random_fixture",
    "market_fixture",
    "scale_to_breakpoint",
    "robo_moments",
]

INDEX_FUND_DATE = "2020-03-31"


def data_path(name: str) -> Path:
    return Path(str(resources.files("invrisk") / "data" / name))


def load_index_fund():
    """``(portfolios, returns, sector_map)`` for the bundled index-fund fixture."""
    prices = load_prices(data_path("sector_prices.csv"))
    returns = rolling_annual_returns(prices)
    y = load_portfolios(data_path("index_fund_holdings.csv"))
    smap = SectorMap.from_csv(data_path("sector_map.csv"))
    return y, returns, smap


def scale_to_breakpoint(Q, c, cons: ConstraintSet, r_top: float) -> np.ndarray:
    """Rescale ``c`` so the forward optimizer stops changing at ``r = r_top``.

    ``x*(r; s c) = x*(s r; c)``, so scaling ``c`` by ``b / r_top`` moves the
    last breakpoint ``b`` of the path to ``r_top``.
    """
    bp = frontier_breakpoints(Q, c, cons)
    if bp.size == 0:
        return np.asarray(c, dtype=float)
    return np.asarray(c, dtype=float) * (bp[-1] / r_top)


def sector_fixture(lookback: int = 1, r_top: float | None = 25.0, date: str = INDEX_FUND_DATE):
    """Sector-space ``(Q_s, c_s, y_s, cons)`` of the index-fund fixture.

    With ``r_top`` set, ``c_s`` is rescaled so the sector frontier keeps
    moving up to that risk tolerance.
    """
    y, returns, smap = load_index_fund()
    data = align(y, returns, y.dates[0], y.dates[-1])
    y_s, Q_s, c_s = to_sector(data.portfolio, data.returns, smap, date, lookback)
    cons = ConstraintSet.long_only_budget(c_s.size)
    if r_top is not None:
        c_s = scale_to_breakpoint(Q_s, c_s, cons, r_top)
    return Q_s, c_s, y_s, cons


def random_psd(n: int, rng, floor: float = 0.01, scale: float = 0.1) -> np.ndarray:
    B = rng.normal(size=(n, n)) * scale
    return B @ B.T + floor * np.eye(n)


def random_fixture(n: int, seed: int, r_top: float | None = 25.0):
    """Random long-only problem ``(Q, c, cons)``, optionally scaled so the path moves up to ``r_top``."""
    rng = np.random.default_rng(seed)
    Q = random_psd(n, rng)
    c = rng.uniform(0.02, 0.3, n)
    cons = ConstraintSet.long_only_budget(n)
    if r_top is not None:
        c = scale_to_breakpoint(Q, c, cons, r_top)
    return Q, c, cons


def market_fixture(n: int, seed: int, extra_factors: int = 4):
    """Covariance with one dominant positive market factor, plus random ``c`` and ``y``.

    Factor-space constraints ``eps <= F x_f`` only admit solutions when the
    leading eigenvectors span a positive portfolio, which this structure gives.
    """
    rng = np.random.default_rng(seed)
    f = np.clip(1.0 + 0.2 * rng.normal(size=n), 0.5, 1.5)
    L = rng.normal(size=(n, extra_factors)) * 0.05
    Q = 0.04 * np.outer(f, f) + L @ L.T + np.diag(rng.uniform(0.01, 0.05, n))
    c = rng.uniform(0.02, 0.3, n)
    y = rng.dirichlet(np.ones(n))
    return Q, c, y


def robo_moments():
    """Annual expected returns and covariance driving the robo-portfolio fixture."""
    c = np.array([0.03, 0.08, 0.14, 0.20, 0.30, 0.45])
    vol = np.array([0.02, 0.03, 0.04, 0.05, 0.06, 0.08])
    Q = (0.3 + 0.7 * np.eye(c.size)) * np.outer(vol, vol)
    return c, Q
