"""Sector aggregation and eigen-factor projection of asset-space data."""
from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .errors import ParseError, UnresolvedTickerError, ValidationError
from .forward import ConstraintSet
from .market_data import PortfolioSeries, ReturnPanel, _to_date, moments_at_row, psd_clamp

__all__ = [
    "SECTORS",
    "SectorMap",
    "FactorModel",
    "to_sector",
    "sector_weights",
    "fit_factors",
    "to_factor",
    "reproject",
    "factor_constraints",
    "factor_problem",
    "truncation_error",
    "sector_moments_from_assets",
]

SECTORS = (
    "Basic Materials",
    "Communication Services",
    "Consumer Cyclical",
    "Consumer Defensive",
    "Energy",
    "Financial Services",
    "Healthcare",
    "Industrials",
    "Real Estate",
    "Technology",
    "Utilities",
)


@dataclass(frozen=True, eq=False)
class SectorMap:
    sector_of: dict
    sectors: tuple = SECTORS

    def __post_init__(self):
        unknown = sorted({s for s in self.sector_of.values() if s not in self.sectors})
        if unknown:
            raise ValidationError(f"unknown sector labels: {unknown}")
        object.__setattr__(self, "sector_of", dict(self.sector_of))
        object.__setattr__(self, "sectors", tuple(self.sectors))

    def members(self, tickers) -> list:
        """Per sector, the positions in ``tickers`` that belong to it."""
        out = [[] for _ in self.sectors]
        pos = {s: k for k, s in enumerate(self.sectors)}
        missing = [t for t in tickers if t not in self.sector_of]
        if missing:
            raise UnresolvedTickerError(missing)
        for j, t in enumerate(tickers):
            out[pos[self.sector_of[t]]].append(j)
        return out

    @classmethod
    def from_csv(cls, path, sectors=SECTORS) -> "SectorMap":
        mapping = {}
        with open(path, encoding="utf-8", newline="") as fh:
            reader = csv.DictReader(ln for ln in fh if not ln.startswith("#"))
            if reader.fieldnames is None or not {"ticker", "sector"} <= set(reader.fieldnames):
                raise ParseError("sector map needs columns ticker,sector", 1)
            for row in reader:
                t, s = row["ticker"].strip(), row["sector"].strip()
                if t in mapping and mapping[t] != s:
                    raise ValidationError(f"line {reader.line_num}: {t} mapped to two sectors")
                mapping[t] = s
        return cls(mapping, tuple(sectors))


def sector_weights(y: PortfolioSeries, smap: SectorMap, as_of):
    """Sector holdings and within-sector weights at the last portfolio date on or before ``as_of``.

    A sector without holdings at that date keeps the within-sector weights of
    the most recent date it was held, or equal weights if it never was.
    """
    d = _to_date(as_of)
    k = sum(1 for t in y.dates if t <= d)
    if k == 0:
        raise ValidationError(f"no portfolio on or before {d.isoformat()}")
    groups = smap.members(y.tickers)
    H = y.holdings
    y_s = np.array([H[k - 1, g].sum() for g in groups])
    W = np.zeros((len(groups), len(y.tickers)))
    for i, g in enumerate(groups):
        if not g:
            continue
        for row in range(k - 1, -1, -1):
            tot = H[row, g].sum()
            if tot > 0:
                W[i, g] = H[row, g] / tot
                break
        else:
            W[i, g] = 1.0 / len(g)
    return y_s, W


def to_sector(y: PortfolioSeries, returns: ReturnPanel, smap: SectorMap, as_of, lookback_offset: int = 1):
    """Sector-space observation ``(y_s, Q_s, c_s)`` at ``as_of``.

    Sector returns over rows ``lookback_offset..t`` use the within-sector
    weights of the observation date.
    """
    y_s, W = sector_weights(y, smap, as_of)
    panel = returns.select(y.tickers)
    t = panel.row_of(as_of)
    l = int(lookback_offset)
    if t < 1:
        raise ValidationError(f"no return row on or before {_to_date(as_of).isoformat()}")
    X = panel.returns[:t]
    # unheld assets may carry NaN history; they get zero weight everywhere
    X = np.where(np.isnan(X) & (W.sum(axis=0) == 0)[None, :], 0.0, X)
    sector_panel = ReturnPanel(panel.dates[:t], smap.sectors, X @ W.T)
    m = moments_at_row(sector_panel, t, l)
    return y_s, m.Q, m.c


@dataclass(frozen=True, eq=False)
class FactorModel:
    F: np.ndarray
    sigma: np.ndarray
    epsilon: float

    def __post_init__(self):
        F = np.array(self.F, dtype=float, ndmin=2)
        s = np.array(self.sigma, dtype=float).ravel()
        if F.shape[1] != s.size:
            raise ValidationError("F and sigma disagree on the number of factors")
        if np.any(s < 0) or np.any(np.diff(s) > 0):
            raise ValidationError("factor variances must be non-negative and sorted descending")
        if not self.epsilon > 0:
            raise ValidationError("epsilon must be positive")
        F.setflags(write=False)
        s.setflags(write=False)
        object.__setattr__(self, "F", F)
        object.__setattr__(self, "sigma", s)
        object.__setattr__(self, "epsilon", float(self.epsilon))

    @property
    def K(self) -> int:
        return self.sigma.size

    @property
    def N(self) -> int:
        return self.F.shape[0]

    @property
    def Sigma(self) -> np.ndarray:
        return np.diag(self.sigma)

    def to_dict(self) -> dict:
        return {"K": self.K, "epsilon": self.epsilon, "eigenvalues": self.sigma, "eigenvectors": self.F}

    @classmethod
    def from_dict(cls, d: dict) -> "FactorModel":
        return cls(np.asarray(d["eigenvectors"], dtype=float), d["eigenvalues"], d["epsilon"])


def fit_factors(Q, K: int = 5, epsilon: float = 0.005) -> FactorModel:
    """Top-K eigenpairs of Q with a deterministic sign convention.

    Each eigenvector is flipped so that its largest-magnitude entry is
    positive (the first such entry on ties).
    """
    Q = np.asarray(Q, dtype=float)
    N = Q.shape[0]
    if Q.shape != (N, N):
        raise ValidationError("Q must be square")
    if not 1 <= K <= N:
        raise ValidationError(f"K must satisfy 1 <= K <= {N}, got {K}")
    w, V = np.linalg.eigh(0.5 * (Q + Q.T))
    idx = np.argsort(-w, kind="stable")[:K]
    w, V = np.maximum(w[idx], 0.0), V[:, idx]
    lead = np.argmax(np.abs(V), axis=0)
    signs = np.sign(V[lead, np.arange(K)])
    signs[signs == 0] = 1.0
    return FactorModel(V * signs, w, epsilon)


def to_factor(v, model: FactorModel) -> np.ndarray:
    v = np.asarray(v, dtype=float).ravel()
    if v.size != model.N:
        raise ValidationError(f"vector has length {v.size}, factor model expects {model.N}")
    return model.F.T @ v


def reproject(x_f, model: FactorModel) -> np.ndarray:
    """Asset-space allocation ``F x_f``."""
    x_f = np.asarray(x_f, dtype=float).ravel()
    if x_f.size != model.K:
        raise ValidationError(f"factor vector has length {x_f.size}, expected {model.K}")
    return model.F @ x_f


def factor_constraints(model: FactorModel) -> ConstraintSet:
    """``eps <= (F x_f)_i <= 1`` and ``1'F x_f = 1`` as a dense ``(2N+2) x K`` system."""
    F, N = model.F, model.N
    s = F.sum(axis=0)[None, :]
    A = np.vstack([F, -F, s, -s])
    b = np.concatenate([np.full(N, model.epsilon), -np.ones(N), [1.0, -1.0]])
    return ConstraintSet(A, b, kind="factor_dense", epsilon=model.epsilon)


def factor_problem(Q, c, y, K: int = 5, epsilon: float = 0.005):
    """Factor-space ``(Q_f, c_f, y_f, cons_f, model)`` for asset-space data."""
    model = fit_factors(Q, K, epsilon)
    return model.Sigma, to_factor(c, model), to_factor(y, model), factor_constraints(model), model


def truncation_error(Q, model: FactorModel) -> float:
    """Frobenius norm of the covariance left out by the factor model."""
    Q = np.asarray(Q, dtype=float)
    return float(np.linalg.norm(Q - (model.F * model.sigma) @ model.F.T))


def sector_moments_from_assets(Q, c, W):
    """Moments of sector returns ``W p`` given asset moments (exact for fixed weights)."""
    W = np.asarray(W, dtype=float)
    return psd_clamp(W @ np.asarray(Q, dtype=float) @ W.T), W @ np.asarray(c, dtype=float)
