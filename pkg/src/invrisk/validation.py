"""Forward-inverse validation: grid search, ordered recovery and a synthetic rebalancer."""
from __future__ import annotations

import datetime as dt
import itertools
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .errors import InfeasibleTargetError, InvRiskError, ValidationError
from .forward import ConstraintSet, solve_po, solve_po_target
from .inverse import InverseInstance, solve_ipo
from .io import fmt, header_line
from .market_data import PortfolioSeries, PricePanel, moments_at_row, rolling_annual_returns
from .projections import factor_constraints, fit_factors, to_factor

__all__ = [
    "GridSpec",
    "OrderResult",
    "ValidationReport",
    "MultiperiodFixture",
    "estimate_from_repeated",
    "point_estimation_error",
    "relative_squared_error",
    "ordered_recovery",
    "generate_multiperiod_fixture",
]

DEFAULT_GRID = (100.0, 500.0, 1000.0, 5000.0, 10000.0)
EPSILON_GRID = (0.005, 0.01, 0.05, 0.1)


@dataclass(frozen=True)
class GridSpec:
    M_grid: tuple = DEFAULT_GRID
    lambda_grid: tuple = DEFAULT_GRID
    epsilon_grid: tuple = ()
    r_sample_range: tuple = (0.5, 20.0)
    r_guess_set: tuple = tuple(float(v) for v in range(1, 11))
    n_samples: int = 10
    seed: int = 0

    def __post_init__(self):
        for name in ("M_grid", "lambda_grid", "epsilon_grid", "r_guess_set"):
            vals = tuple(float(v) for v in getattr(self, name))
            object.__setattr__(self, name, vals)
        if not self.M_grid or not self.lambda_grid or not self.r_guess_set:
            raise ValidationError("grids must be non-empty")
        if any(v <= 0 for v in self.M_grid + self.epsilon_grid):
            raise ValidationError("M and epsilon grids must be positive")
        if any(v < 0 for v in self.lambda_grid + self.r_guess_set):
            raise ValidationError("lambda grid and guesses must be non-negative")
        lo, hi = (float(v) for v in self.r_sample_range)
        if not 0 < lo <= hi:
            raise ValidationError("r_sample_range must satisfy 0 < lo <= hi")
        object.__setattr__(self, "r_sample_range", (lo, hi))
        if self.n_samples < 1:
            raise ValidationError("n_samples must be >= 1")

    def samples(self) -> np.ndarray:
        lo, hi = self.r_sample_range
        return np.random.default_rng(self.seed).uniform(lo, hi, self.n_samples)

    def cells(self) -> list:
        if self.epsilon_grid:
            return list(itertools.product(self.M_grid, self.lambda_grid, self.epsilon_grid))
        return list(itertools.product(self.M_grid, self.lambda_grid))


@dataclass
class OrderResult:
    true_r: np.ndarray
    est_r: np.ndarray
    true_order: np.ndarray
    est_order: np.ndarray
    exact_match: bool
    spearman: float | None
    separated_order_ok: bool
    seed: int

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in (
            "seed", "exact_match", "spearman", "separated_order_ok",
            "true_r", "est_r", "true_order", "est_order")}


@dataclass
class ValidationReport:
    per_cell_error: dict = field(default_factory=dict)
    best_cell: tuple | None = None
    best_error: float = math.inf
    samples: np.ndarray | None = None
    seed: int | None = None
    failures: dict = field(default_factory=dict)
    order_result: OrderResult | None = None

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "samples": self.samples,
            "best_cell": None if self.best_cell is None else list(self.best_cell),
            "best_error": self.best_error,
            "cells": [
                {"cell": list(k), "error": v, "failure": self.failures.get(k)}
                for k, v in self.per_cell_error.items()
            ],
            "order_result": None if self.order_result is None else self.order_result.to_dict(),
        }

    def heatmap_csv(self, config: dict | None = None) -> str:
        lines = [header_line(config).rstrip("\n"), "M,lambda,epsilon,error"]
        for k, v in self.per_cell_error.items():
            eps = fmt(k[2]) if len(k) > 2 else ""
            lines.append(f"{fmt(k[0])},{fmt(k[1])},{eps},{fmt(v)}")
        return "\n".join(lines) + "\n"


def estimate_from_repeated(Q, c, cons, y, r0, lam, M, rounds, check_y=True) -> float:
    """Run the online update ``rounds`` times on one repeated observation."""
    r = float(r0)
    for t in range(1, rounds + 1):
        sol = solve_ipo(InverseInstance(Q, c, cons, y, r, lam / math.sqrt(t), M, check_y=check_y))
        if sol.status == "infeasible":
            raise ValidationError(f"round {t}: {sol.message}")
        r = sol.r
    return r


def relative_squared_error(true_r, est_r) -> float:
    """Mean of ``(r_s - r_e)^2 / r_s^2`` over all (sample, guess) pairs."""
    true_r = np.asarray(true_r, dtype=float)
    est_r = np.asarray(est_r, dtype=float)
    return float(np.mean((true_r - est_r) ** 2 / true_r ** 2))


def _cell_task(args):
    Q, c, cons, check_y, samples, guesses, M, lam, rounds = args
    truths, ests = [], []
    for rs in samples:
        y = solve_po(Q, c, rs, cons).x
        for rg in guesses:
            truths.append(rs)
            ests.append(estimate_from_repeated(Q, c, cons, y, rg, lam, M, rounds, check_y))
    return relative_squared_error(truths, ests)


def point_estimation_error(Q, c, cons: ConstraintSet, grid: GridSpec | None = None, rounds: int = 20,
                           K: int = 5, jobs: int = 1) -> ValidationReport:
    """Forward-inverse point estimation error for every grid cell.

    For each sampled ``r_s`` the observation is ``x*(r_s)``; each guess
    starts the online learner, which sees that observation ``rounds`` times.
    With an epsilon grid the whole protocol runs in factor space: ``Q`` is
    decomposed into ``K`` factors and the problem is rebuilt for each epsilon.
    A cell whose solves fail scores ``+inf`` and the sweep continues.
    """
    grid = grid or GridSpec()
    if rounds < 1:
        raise ValidationError("rounds must be >= 1")
    Q = np.asarray(Q, dtype=float)
    c = np.asarray(c, dtype=float).ravel()
    samples = grid.samples()
    cells = grid.cells()
    spaces = {}
    if grid.epsilon_grid:
        for eps in grid.epsilon_grid:
            model = fit_factors(Q, min(K, c.size), eps)
            spaces[eps] = (model.Sigma, to_factor(c, model), factor_constraints(model), False)
    tasks = []
    for cell in cells:
        Qc, cc, consc, chk = spaces[cell[2]] if grid.epsilon_grid else (Q, c, cons, True)
        tasks.append((Qc, cc, consc, chk, samples, grid.r_guess_set, cell[0], cell[1], rounds))
    report = ValidationReport(samples=samples, seed=grid.seed)
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_safe_cell, tasks))
    else:
        results = [_safe_cell(t) for t in tasks]
    for cell, (err, msg) in zip(cells, results):
        report.per_cell_error[cell] = err
        if msg is not None:
            report.failures[cell] = msg
        if err < report.best_error:
            report.best_error, report.best_cell = err, cell
    return report


def _safe_cell(task):
    try:
        return _cell_task(task), None
    except InvRiskError as exc:
        return math.inf, str(exc)


def ordered_recovery(Q, c, cons: ConstraintSet, n_samples: int = 30, log_range=(-5.0, 1.0), seed: int = 0,
                     r0: float = 1.0, lam: float = 1e4, M: float = 1e4, rounds: int = 20) -> OrderResult:
    """Sample log-uniform risk tolerances, forward-generate, invert and compare orders."""
    if n_samples < 2:
        raise ValidationError("ordered recovery needs at least two samples")
    rng = np.random.default_rng(seed)
    true_r = np.sort(10.0 ** rng.uniform(log_range[0], log_range[1], n_samples))
    est = np.empty(n_samples)
    for i, r in enumerate(true_r):
        try:
            y = solve_po(Q, c, r, cons).x
            est[i] = estimate_from_repeated(Q, c, cons, y, r0, lam, M, rounds)
        except InvRiskError as exc:
            exc.args = (f"sample {i} (r={r!r}): {exc}",) + exc.args[1:]
            raise
    return compare_orders(true_r, est, seed)


def compare_orders(true_r, est_r, seed=None) -> OrderResult:
    true_r = np.asarray(true_r, dtype=float)
    est_r = np.asarray(est_r, dtype=float)
    t_rank = stats.rankdata(true_r, method="average")
    e_rank = stats.rankdata(est_r, method="average")
    if np.ptp(true_r) == 0 or np.ptp(est_r) == 0:
        rho = None
    else:
        rho = float(stats.spearmanr(true_r, est_r).statistic)
    ok = True
    n = true_r.size
    for i in range(n):
        for j in range(n):
            if true_r[i] > 0 and true_r[j] >= 2.0 * true_r[i] and not est_r[j] > est_r[i]:
                ok = False
    return OrderResult(
        true_r=true_r, est_r=est_r,
        true_order=np.argsort(true_r, kind="stable"), est_order=np.argsort(est_r, kind="stable"),
        exact_match=bool(np.array_equal(t_rank, e_rank)), spearman=rho,
        separated_order_ok=ok, seed=seed,
    )


@dataclass
class MultiperiodFixture:
    portfolios: PortfolioSeries
    prices: PricePanel
    implied_r: np.ndarray
    observation_rows: tuple

    def __iter__(self):
        return iter((self.portfolios, self.prices))


def generate_multiperiod_fixture(c, Q, z: float, periods: int, seed: int, *, step: int = 21,
                                 warmup: int = 120, window: int = 253, start="2015-01-02",
                                 tickers=None, cons: ConstraintSet | None = None) -> MultiperiodFixture:
    """Simulated prices plus a scripted target-return rebalancer.

    Daily log returns are Gaussian with covariance ``Q / window`` and a
    drift that makes the expected annual simple return ``c``. Every ``step``
    trading days (starting at return row ``warmup``) the rebalancer computes
    the moments the learner will see (full history, look-back 1) and holds
    the minimum-variance portfolio with expected return ``z``.
    """
    c = np.asarray(c, dtype=float).ravel()
    Q = np.asarray(Q, dtype=float)
    n = c.size
    if periods < 1 or step < 1 or warmup < 2:
        raise ValidationError("periods and step must be >= 1 and warmup >= 2")
    tickers = tuple(tickers) if tickers is not None else tuple(f"A{i + 1:02d}" for i in range(n))
    cons = cons or ConstraintSet.long_only_budget(n)
    rows = warmup + (periods - 1) * step
    days = rows + window - 1
    rng = np.random.default_rng(seed)
    drift = np.log1p(c) / window - 0.5 * np.diag(Q) / window
    L = np.linalg.cholesky(Q / window + 1e-14 * np.eye(n))
    steps = drift + rng.standard_normal((days, n)) @ L.T
    close = 100.0 * np.exp(np.cumsum(steps, axis=0))
    open_ = np.vstack([np.full((1, n), 100.0), close[:-1]])
    start_d = np.datetime64(dt.date.fromisoformat(str(start)), "D")
    dates = np.busday_offset(start_d, np.arange(days), roll="forward")
    prices = PricePanel(tuple(d.astype(dt.date) for d in dates), tickers, open_, close)
    returns = rolling_annual_returns(prices, window)
    obs_rows = tuple(warmup + k * step for k in range(periods))
    holdings, implied = [], []
    for k, t in enumerate(obs_rows):
        mom = moments_at_row(returns, t, 1)
        try:
            sol = solve_po_target(mom.Q, mom.c, z, cons)
        except InfeasibleTargetError as exc:
            raise ValidationError(f"period {k + 1}: {exc}") from exc
        x = np.maximum(sol.x, 0.0)
        holdings.append(x / x.sum())
        implied.append(sol.return_multiplier)
    obs_dates = tuple(returns.dates[t - 1] for t in obs_rows)
    return MultiperiodFixture(
        PortfolioSeries(obs_dates, tickers, np.array(holdings)), prices, np.array(implied), obs_rows,
    )
