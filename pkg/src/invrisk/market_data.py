"""Price and holdings ingestion, rolling annual returns, alignment and moments.

Row positions handed out by this module (``price_index_of``,
``portfolio_index_of``, ``lookback_offset``) are 1-based, so a look-back
offset of 1 keeps the full return history.
"""
from __future__ import annotations

import csv
import datetime as dt
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    InsufficientDataError,
    ParseError,
    UnresolvedTickerError,
    ValidationError,
)
from .io import fmt, header_line

__all__ = [
    "PricePanel",
    "ReturnPanel",
    "PortfolioSeries",
    "AlignedDataset",
    "MarketMoments",
    "load_prices",
    "load_portfolios",
    "rolling_annual_returns",
    "align",
    "moments",
    "moments_at_row",
    "last_trading_day_per_month",
]

DEFAULT_PRICE_SCHEMA = {"date": "date", "ticker": "ticker", "open": "open", "close": "close"}
DEFAULT_PORTFOLIO_SCHEMA = {"date": "date", "ticker": "ticker", "weight": "weight"}
TRADING_YEAR = 253
FILL_LIMIT = 5


def _to_date(value) -> dt.date:
    if isinstance(value, dt.datetime):
        return value.date()
    if isinstance(value, dt.date):
        return value
    if isinstance(value, np.datetime64):
        return value.astype("datetime64[D]").astype(dt.date)
    return dt.date.fromisoformat(str(value).strip())


def _freeze(*arrays):
    for a in arrays:
        a.setflags(write=False)


@dataclass(frozen=True, eq=False)
class PricePanel:
    dates: tuple
    tickers: tuple
    open: np.ndarray
    close: np.ndarray

    def __post_init__(self):
        dates = tuple(_to_date(d) for d in self.dates)
        if any(b <= a for a, b in zip(dates, dates[1:])):
            raise ValidationError("price dates must be strictly increasing without duplicates")
        o = np.array(self.open, dtype=float, ndmin=2)
        c = np.array(self.close, dtype=float, ndmin=2)
        if o.shape != c.shape or o.shape != (len(dates), len(self.tickers)):
            raise ValidationError("open/close shape does not match dates x tickers")
        if not np.array_equal(np.isnan(o), np.isnan(c)):
            raise ValidationError("open and close must share the same missing-data mask")
        present = ~np.isnan(o)
        if np.any(o[present] <= 0) or np.any(c[present] <= 0):
            raise ValidationError("prices must be strictly positive")
        _freeze(o, c)
        object.__setattr__(self, "dates", dates)
        object.__setattr__(self, "tickers", tuple(self.tickers))
        object.__setattr__(self, "open", o)
        object.__setattr__(self, "close", c)

    @property
    def mask(self) -> np.ndarray:
        """True where the (date, ticker) cell is missing."""
        return np.isnan(self.open)


@dataclass(frozen=True, eq=False)
class ReturnPanel:
    dates: tuple
    tickers: tuple
    returns: np.ndarray

    def __post_init__(self):
        dates = tuple(_to_date(d) for d in self.dates)
        r = np.array(self.returns, dtype=float, ndmin=2)
        if r.shape != (len(dates), len(self.tickers)):
            raise ValidationError("returns shape does not match dates x tickers")
        if np.any(r[~np.isnan(r)] <= -1.0):
            raise ValidationError("returns must exceed -1")
        _freeze(r)
        object.__setattr__(self, "dates", dates)
        object.__setattr__(self, "tickers", tuple(self.tickers))
        object.__setattr__(self, "returns", r)

    def row_of(self, date) -> int:
        """1-based position of the last row dated on or before ``date`` (0 if none)."""
        d = _to_date(date)
        lo, hi = 0, len(self.dates)
        while lo < hi:
            mid = (lo + hi) // 2
            if self.dates[mid] <= d:
                lo = mid + 1
            else:
                hi = mid
        return lo

    def select(self, tickers) -> "ReturnPanel":
        pos = {t: i for i, t in enumerate(self.tickers)}
        missing = [t for t in tickers if t not in pos]
        if missing:
            raise UnresolvedTickerError(missing)
        idx = [pos[t] for t in tickers]
        return ReturnPanel(self.dates, tuple(tickers), self.returns[:, idx])

    def to_csv(self, config: dict | None = None) -> str:
        lines = [header_line(config).rstrip("\n"), "date," + ",".join(self.tickers)]
        for d, row in zip(self.dates, self.returns):
            lines.append(d.isoformat() + "," + ",".join(fmt(v) for v in row))
        return "\n".join(lines) + "\n"

    @classmethod
    def from_csv(cls, path) -> "ReturnPanel":
        with open(path, encoding="utf-8", newline="") as fh:
            rows = [r for r in csv.reader(fh) if r and not r[0].startswith("#")]
        head, body = rows[0], rows[1:]
        dates = [r[0] for r in body]
        vals = np.array([[float(v) for v in r[1:]] for r in body]).reshape(len(body), len(head) - 1)
        return cls(tuple(dates), tuple(head[1:]), vals)


@dataclass(frozen=True, eq=False)
class PortfolioSeries:
    dates: tuple
    tickers: tuple
    holdings: np.ndarray

    def __post_init__(self):
        dates = tuple(_to_date(d) for d in self.dates)
        if any(b <= a for a, b in zip(dates, dates[1:])):
            raise ValidationError("portfolio dates must be strictly increasing")
        h = np.array(self.holdings, dtype=float, ndmin=2)
        if h.shape != (len(dates), len(self.tickers)):
            raise ValidationError("holdings shape does not match dates x tickers")
        if np.any(h < 0):
            raise ValidationError("portfolio weights must be non-negative")
        bad = np.where(np.abs(h.sum(axis=1) - 1.0) > 1e-8)[0]
        if bad.size:
            raise ValidationError(
                f"portfolio on {dates[bad[0]].isoformat()} sums to {h[bad[0]].sum()!r}, not 1"
            )
        _freeze(h)
        object.__setattr__(self, "dates", dates)
        object.__setattr__(self, "tickers", tuple(self.tickers))
        object.__setattr__(self, "holdings", h)

    def select(self, tickers) -> "PortfolioSeries":
        pos = {t: i for i, t in enumerate(self.tickers)}
        idx = [pos[t] for t in tickers]
        return PortfolioSeries(self.dates, tuple(tickers), self.holdings[:, idx])


@dataclass(frozen=True, eq=False)
class AlignedDataset:
    portfolio: PortfolioSeries
    returns: ReturnPanel
    observation_times: tuple
    portfolio_index_of: dict
    price_index_of: dict
    learn_start: dt.date
    learn_end: dt.date

    @property
    def tickers(self) -> tuple:
        return self.portfolio.tickers

    def holdings_at(self, date) -> np.ndarray:
        return self.portfolio.holdings[self.portfolio_index_of[_to_date(date)] - 1]


@dataclass(frozen=True, eq=False)
class MarketMoments:
    Q: np.ndarray
    c: np.ndarray
    as_of: dt.date | None = None
    lookback_offset: int = 1
    tickers: tuple = field(default_factory=tuple)

    def __post_init__(self):
        Q = np.array(self.Q, dtype=float, ndmin=2)
        c = np.array(self.c, dtype=float).ravel()
        if Q.shape != (c.size, c.size):
            raise ValidationError(f"Q has shape {Q.shape}, expected {(c.size, c.size)}")
        if not np.all(np.isfinite(c)) or not np.all(np.isfinite(Q)):
            raise ValidationError("moments must be finite")
        _freeze(Q, c)
        object.__setattr__(self, "Q", Q)
        object.__setattr__(self, "c", c)
        if self.as_of is not None:
            object.__setattr__(self, "as_of", _to_date(self.as_of))
        object.__setattr__(self, "tickers", tuple(self.tickers))

    def to_dict(self) -> dict:
        return {
            "as_of": None if self.as_of is None else self.as_of.isoformat(),
            "lookback_offset": int(self.lookback_offset),
            "tickers": list(self.tickers),
            "c": self.c,
            "Q": self.Q,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MarketMoments":
        try:
            return cls(
                Q=d["Q"],
                c=d["c"],
                as_of=d.get("as_of"),
                lookback_offset=int(d.get("lookback_offset", 1)),
                tickers=tuple(d.get("tickers") or ()),
            )
        except KeyError as exc:
            raise ValidationError(f"moments document lacks key {exc}") from exc


def _read_rows(path, required):
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(row for row in fh if not row.startswith("#"))
        if reader.fieldnames is None:
            raise ParseError("empty file", 1)
        missing = [c for c in required if c not in reader.fieldnames]
        if missing:
            raise ParseError(f"missing columns {missing}", 1)
        for row in reader:
            yield reader.line_num, row


def _parse_float(value, name, line):
    try:
        return float(value)
    except (TypeError, ValueError):
        raise ParseError(f"cannot parse {name} value {value!r}", line) from None


def _parse_date(value, line):
    try:
        return _to_date(value)
    except (TypeError, ValueError):
        raise ParseError(f"cannot parse date {value!r}", line) from None


def load_prices(path, schema: dict | None = None) -> PricePanel:
    """Read a long-format ``date,ticker,open,close`` CSV into a PricePanel.

    The calendar is the union of dates in the file; absent (date, ticker)
    cells are NaN and show up in ``PricePanel.mask``.
    """
    cols = {**DEFAULT_PRICE_SCHEMA, **(schema or {})}
    cells = {}
    for line, row in _read_rows(path, cols.values()):
        d = _parse_date(row[cols["date"]], line)
        t = (row[cols["ticker"]] or "").strip()
        if not t:
            raise ParseError("empty ticker", line)
        o = _parse_float(row[cols["open"]], "open", line)
        c = _parse_float(row[cols["close"]], "close", line)
        if not (o > 0 and c > 0):
            raise ValidationError(f"line {line}: non-positive price for {t} on {d.isoformat()}")
        if (d, t) in cells:
            raise ValidationError(f"line {line}: duplicate row for ({d.isoformat()}, {t})")
        cells[(d, t)] = (o, c)
    if not cells:
        raise ParseError("no price rows", 2)
    dates = sorted({k[0] for k in cells})
    tickers = sorted({k[1] for k in cells})
    di = {d: i for i, d in enumerate(dates)}
    ti = {t: j for j, t in enumerate(tickers)}
    o = np.full((len(dates), len(tickers)), np.nan)
    c = np.full_like(o, np.nan)
    for (d, t), (po, pc) in cells.items():
        o[di[d], ti[t]] = po
        c[di[d], ti[t]] = pc
    return PricePanel(tuple(dates), tuple(tickers), o, c)


def load_portfolios(path, schema: dict | None = None, normalize: bool = False) -> PortfolioSeries:
    """Read a long-format ``date,ticker,weight`` CSV; absent cells are zero weight.

    With ``normalize=True`` each date's weights are rescaled to sum to one
    (e.g. holdings reports that exclude cash).
    """
    cols = {**DEFAULT_PORTFOLIO_SCHEMA, **(schema or {})}
    cells = {}
    for line, row in _read_rows(path, cols.values()):
        d = _parse_date(row[cols["date"]], line)
        t = (row[cols["ticker"]] or "").strip()
        w = _parse_float(row[cols["weight"]], "weight", line)
        if w < 0:
            raise ValidationError(f"line {line}: negative weight for {t}")
        if (d, t) in cells:
            raise ValidationError(f"line {line}: duplicate row for ({d.isoformat()}, {t})")
        cells[(d, t)] = w
    if not cells:
        raise ParseError("no portfolio rows", 2)
    dates = sorted({k[0] for k in cells})
    tickers = sorted({k[1] for k in cells})
    di = {d: i for i, d in enumerate(dates)}
    ti = {t: j for j, t in enumerate(tickers)}
    h = np.zeros((len(dates), len(tickers)))
    for (d, t), w in cells.items():
        h[di[d], ti[t]] = w
    if normalize:
        s = h.sum(axis=1, keepdims=True)
        if np.any(s <= 0):
            raise ValidationError("cannot normalize an all-zero portfolio")
        h = h / s
    return PortfolioSeries(tuple(dates), tuple(tickers), h)


def _forward_fill(a: np.ndarray, limit: int, tickers, dates) -> np.ndarray:
    out = a.copy()
    for j in range(a.shape[1]):
        col = out[:, j]
        valid = np.where(~np.isnan(col))[0]
        if valid.size == 0:
            continue
        run = 0
        for i in range(valid[0] + 1, col.size):
            if np.isnan(col[i]):
                run += 1
                if run > limit:
                    raise ValidationError(
                        f"{tickers[j]}: more than {limit} consecutive missing prices "
                        f"ending {dates[i].isoformat()}"
                    )
                col[i] = col[i - 1]
            else:
                run = 0
    return out


def rolling_annual_returns(p: PricePanel, window: int = TRADING_YEAR, fill_limit: int = FILL_LIMIT) -> ReturnPanel:
    """Annual simple returns ``(close[t] - open[t-window+1]) / open[t-window+1]``.

    Gaps of up to ``fill_limit`` trading days inside an asset's history are
    forward-filled; longer gaps raise.
    """
    if window < 1:
        raise ValidationError("window must be positive")
    rows = len(p.dates)
    if rows < window:
        raise InsufficientDataError(f"{rows} price rows, need at least {window}")
    counts = np.sum(~p.mask, axis=0)
    short = [t for t, k in zip(p.tickers, counts) if k < window]
    if short:
        raise InsufficientDataError(f"fewer than {window} prices for: {', '.join(short)}")
    o = _forward_fill(p.open, fill_limit, p.tickers, p.dates)
    c = _forward_fill(p.close, fill_limit, p.tickers, p.dates)
    base = o[: rows - window + 1]
    ret = (c[window - 1:] - base) / base
    return ReturnPanel(p.dates[window - 1:], p.tickers, ret)


def align(y: PortfolioSeries, p: ReturnPanel, T_s, T_e) -> AlignedDataset:
    """Lay portfolios and returns on a common horizon over ``[T_s, T_e]``.

    Observation times are the portfolio dates inside the learning period;
    each maps to its portfolio row and to the last return row on or before it.
    """
    T_s, T_e = _to_date(T_s), _to_date(T_e)
    if T_e < T_s:
        raise ValidationError("learning period end precedes its start")
    held = np.any(y.holdings > 0, axis=0)
    priced = set(p.tickers)
    missing = [t for t, h in zip(y.tickers, held) if h and t not in priced]
    if missing:
        raise UnresolvedTickerError(missing)
    tickers = tuple(t for t, h in zip(y.tickers, held) if h)
    y = y.select(tickers)
    p = p.select(tickers)
    if T_s < y.dates[0]:
        raise ValidationError(f"T_s {T_s} precedes the first portfolio date {y.dates[0]}")
    last_common = min(y.dates[-1], p.dates[-1])
    if T_e > last_common:
        raise ValidationError(f"T_e {T_e} is after the last common date {last_common}")
    if T_s < p.dates[0]:
        raise ValidationError(f"T_s {T_s} precedes the first return date {p.dates[0]}")
    obs = tuple(d for d in y.dates if T_s <= d <= T_e)
    if not obs:
        raise ValidationError("no portfolio observations inside the learning period")
    y_index = {d: i + 1 for i, d in enumerate(y.dates)}
    p_index = {d: p.row_of(d) for d in obs}
    return AlignedDataset(
        portfolio=y,
        returns=p,
        observation_times=obs,
        portfolio_index_of={d: y_index[d] for d in obs},
        price_index_of=p_index,
        learn_start=T_s,
        learn_end=T_e,
    )


def psd_clamp(Q: np.ndarray) -> np.ndarray:
    """Symmetrize and, if numerically indefinite, zero the negative eigenvalues."""
    Q = 0.5 * (Q + Q.T)
    w, V = np.linalg.eigh(Q)
    if w.size and w[0] < 0:
        Q = (V * np.maximum(w, 0.0)) @ V.T
        Q = 0.5 * (Q + Q.T)
    return Q


def moments_at_row(p: ReturnPanel, t: int, lookback_offset: int = 1) -> MarketMoments:
    """Sample covariance and mean of return rows ``lookback_offset..t`` (1-based, inclusive)."""
    l = int(lookback_offset)
    if l < 1:
        raise ValidationError("lookback_offset must be >= 1")
    if t < 1 or t > len(p.dates):
        raise InsufficientDataError(f"row {t} outside the return panel")
    if t - l + 1 < 2:
        raise InsufficientDataError(
            f"window rows {l}..{t} hold fewer than 2 observations"
        )
    X = p.returns[l - 1:t]
    if np.isnan(X).any():
        raise InsufficientDataError(f"missing returns inside window rows {l}..{t}")
    Q = np.atleast_2d(np.cov(X, rowvar=False, ddof=1))
    Q = psd_clamp(Q)
    c = X.mean(axis=0)
    return MarketMoments(Q, c, as_of=p.dates[t - 1], lookback_offset=l, tickers=p.tickers)


def moments(p: ReturnPanel, as_of, lookback_offset: int = 1) -> MarketMoments:
    """Moments of the return history from row ``lookback_offset`` up to ``as_of``."""
    t = p.row_of(as_of)
    m = moments_at_row(p, t, lookback_offset)
    return MarketMoments(m.Q, m.c, as_of=_to_date(as_of), lookback_offset=m.lookback_offset, tickers=m.tickers)


def last_trading_day_per_month(p: ReturnPanel) -> ReturnPanel:
    """Keep the last available row of every calendar month."""
    keep = [
        i for i, d in enumerate(p.dates)
        if i + 1 == len(p.dates) or (p.dates[i + 1].year, p.dates[i + 1].month) != (d.year, d.month)
    ]
    return ReturnPanel(tuple(p.dates[i] for i in keep), p.tickers, p.returns[keep])
