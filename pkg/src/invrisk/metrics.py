"""External risk measures used to sanity-check learned risk tolerances."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .errors import ParseError, UndefinedMetricError, ValidationError

__all__ = [
    "RiskMetricSeries",
    "BetaRecord",
    "RankComparison",
    "inverse_sharpe",
    "inverse_sharpe_series",
    "capm_beta",
    "rank_compare",
    "load_betas",
    "PUBLISHED_BETAS",
]

# published fund betas by year
PUBLISHED_BETAS = {
    2019: {"VFINX": 1.0, "SWPPX": 1.0, "FDCAX": 1.03, "VHCAX": 1.14, "VSEQX": 1.17, "VSTCX": 1.22, "LMPRX": 1.17},
    2020: {"VFINX": 1.0, "SWPPX": 1.0, "FDCAX": 1.01, "VHCAX": 1.13, "VSEQX": 1.30, "VSTCX": 1.38, "LMPRX": 1.07},
}


@dataclass
class RiskMetricSeries:
    label: str
    dates: tuple
    inverse_sharpe: np.ndarray
    defined: np.ndarray


@dataclass
class BetaRecord:
    label: str
    beta_by_year: dict = field(default_factory=dict)


@dataclass
class RankComparison:
    labels: tuple
    ranks_a: np.ndarray
    ranks_b: np.ndarray
    spearman: float | None
    kendall: float | None
    exact_match: bool

    def to_dict(self) -> dict:
        return {
            "labels": list(self.labels),
            "ranks_a": self.ranks_a,
            "ranks_b": self.ranks_b,
            "spearman": self.spearman,
            "kendall": self.kendall,
            "exact_match": self.exact_match,
        }


def inverse_sharpe(x, Q, c) -> float:
    """Variance per unit of expected return, ``x'Qx / c'x``."""
    x = np.asarray(x, dtype=float).ravel()
    ret = float(np.asarray(c, dtype=float).ravel() @ x)
    if ret == 0.0:
        raise UndefinedMetricError("inverse Sharpe ratio is undefined when c'x = 0")
    return float(x @ np.asarray(Q, dtype=float) @ x) / ret


def inverse_sharpe_series(label, dates, xs, Qs, cs) -> RiskMetricSeries:
    """Per-date inverse Sharpe ratios; dates with ``c'x <= 0`` are NaN and flagged."""
    vals, ok = [], []
    for x, Q, c in zip(xs, Qs, cs):
        ret = float(np.asarray(c) @ np.asarray(x))
        if ret > 0:
            vals.append(inverse_sharpe(x, Q, c))
            ok.append(True)
        else:
            vals.append(np.nan)
            ok.append(False)
    return RiskMetricSeries(label, tuple(dates), np.array(vals), np.array(ok, dtype=bool))


def capm_beta(asset_mean, market_mean, risk_free: float = 0.0) -> float:
    """Ratio of the asset's mean excess return to the market's."""
    den = float(market_mean) - risk_free
    if den == 0.0:
        raise UndefinedMetricError("market excess return is zero; beta is undefined")
    return (float(asset_mean) - risk_free) / den


def _ranks(values):
    return stats.rankdata(np.asarray(values, dtype=float), method="average")


def rank_compare(series_a: dict, series_b: dict) -> RankComparison:
    """Compare the orderings of two labelled series over their shared labels.

    Ties share their average rank. A constant series has no defined
    correlation; both statistics are then None.
    """
    shared = [k for k in series_a if k in series_b]
    if not shared:
        raise ValidationError("series share no labels")
    if len(shared) < 2:
        raise ValidationError("rank comparison needs at least two shared labels")
    labels = tuple(sorted(shared))
    a = np.array([series_a[k] for k in labels], dtype=float)
    b = np.array([series_b[k] for k in labels], dtype=float)
    ra, rb = _ranks(a), _ranks(b)
    if np.ptp(a) == 0 or np.ptp(b) == 0:
        rho = tau = None
    else:
        rho = float(stats.spearmanr(a, b).statistic)
        tau = float(stats.kendalltau(a, b).statistic)
    return RankComparison(labels, ra, rb, rho, tau, bool(np.array_equal(ra, rb)))


def load_betas(path) -> dict:
    """Read ``label,year,beta`` rows into ``{label: BetaRecord}``."""
    out: dict = {}
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(ln for ln in fh if not ln.startswith("#"))
        if reader.fieldnames is None or not {"label", "year", "beta"} <= set(reader.fieldnames):
            raise ParseError("beta file needs columns label,year,beta", 1)
        for row in reader:
            try:
                year, beta = int(row["year"]), float(row["beta"])
            except ValueError:
                raise ParseError(f"bad year or beta {row!r}", reader.line_num) from None
            rec = out.setdefault(row["label"], BetaRecord(row["label"]))
            rec.beta_by_year[year] = beta
    return out
