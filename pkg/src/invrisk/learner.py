"""Online learning of the risk tolerance over a stream of observations."""
from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, InvRiskError, SolverError
from .forward import ConstraintSet
from .inverse import InverseInstance, solve_ipo
from .io import fmt, header_line
from .market_data import AlignedDataset, moments_at_row
from .projections import SectorMap, factor_problem, to_sector

__all__ = [
    "LearnerConfig",
    "RoundRecord",
    "RiskTrace",
    "Observation",
    "observations",
    "learn_rounds",
    "learn_sequence",
    "learn_with_bands",
]

DEFAULT_LOOKBACKS = tuple(range(1, 101, 10))
SPACES = ("asset", "sector", "factor")


@dataclass(frozen=True)
class LearnerConfig:
    r0: float = 1.0
    lam: float = 1000.0
    M: float = 1000.0
    epsilon: float | None = None
    lookbacks: tuple = DEFAULT_LOOKBACKS
    space: str = "asset"
    K: int = 5

    def __post_init__(self):
        if not (self.r0 >= 0 and math.isfinite(self.r0)):
            raise ConfigError(f"r0 must be non-negative, got {self.r0!r}")
        if not (self.lam >= 0 and math.isfinite(self.lam)):
            raise ConfigError(f"lambda must be non-negative, got {self.lam!r}")
        if not (self.M > 0 and math.isfinite(self.M)):
            raise ConfigError(f"M must be positive, got {self.M!r}")
        if self.space not in SPACES:
            raise ConfigError(f"space must be one of {SPACES}, got {self.space!r}")
        if self.space == "factor" and self.epsilon is None:
            raise ConfigError("epsilon is required in factor space")
        if self.space != "factor" and self.epsilon is not None:
            raise ConfigError("epsilon is only used in factor space")
        if self.epsilon is not None and not self.epsilon > 0:
            raise ConfigError("epsilon must be positive")
        lb = tuple(int(v) for v in self.lookbacks)
        if not lb or min(lb) < 1:
            raise ConfigError("lookbacks must be a non-empty list of offsets >= 1")
        object.__setattr__(self, "lookbacks", lb)


@dataclass
class Observation:
    date: object
    Q: np.ndarray
    c: np.ndarray
    y: np.ndarray
    cons: ConstraintSet
    check_y: bool = True


@dataclass
class RoundRecord:
    t: int
    date: object
    r: float
    loss: float
    eta: float
    status: str
    binding_m: bool = False
    clamped: bool = False


def observations(data: AlignedDataset, cfg: LearnerConfig, lookback: int, sector_map: SectorMap | None = None):
    """Yield one ``Observation`` per learning date in the configured space."""
    returns = data.returns
    for d in data.observation_times:
        if cfg.space == "sector":
            if sector_map is None:
                raise ConfigError("sector space needs a sector map")
            y, Q, c = to_sector(data.portfolio, returns, sector_map, d, lookback)
            yield Observation(d, Q, c, y, ConstraintSet.long_only_budget(c.size))
            continue
        mom = moments_at_row(returns, data.price_index_of[d], lookback)
        y = data.holdings_at(d)
        if cfg.space == "asset":
            yield Observation(d, mom.Q, mom.c, y, ConstraintSet.long_only_budget(y.size))
        else:
            K = min(cfg.K, y.size)
            Qf, cf, yf, cons, _ = factor_problem(mom.Q, mom.c, y, K, cfg.epsilon)
            yield Observation(d, Qf, cf, yf, cons, check_y=False)


def learn_rounds(obs, cfg: LearnerConfig) -> list:
    """Fold ``solve_ipo`` over observations starting from ``cfg.r0``.

    Round ``t`` (1-based) uses the learning weight ``lam / sqrt(t)``.
    """
    r = float(cfg.r0)
    out = []
    it = iter(obs)
    t = 0
    while True:
        t += 1
        eta = cfg.lam / math.sqrt(t)
        ob = None
        try:
            ob = next(it, None)
            if ob is None:
                break
            inst = InverseInstance(ob.Q, ob.c, ob.cons, ob.y, r, eta, cfg.M, check_y=ob.check_y)
            sol = solve_ipo(inst)
        except InvRiskError as exc:
            exc.round = t
            where = f"round {t}" if ob is None else f"round {t} ({ob.date})"
            exc.args = (f"{where}: {exc}",) + exc.args[1:]
            raise
        if sol.status == "infeasible":
            err = SolverError(f"round {t} ({ob.date}): {sol.message}")
            err.round = t
            raise err
        r = sol.r
        out.append(RoundRecord(t, ob.date, r, sol.loss, eta, sol.status, sol.binding_m, sol.clamped))
    return out


def learn_sequence(data: AlignedDataset, cfg: LearnerConfig, lookback: int = 1,
                   sector_map: SectorMap | None = None) -> list:
    return learn_rounds(observations(data, cfg, lookback, sector_map), cfg)


@dataclass
class RiskTrace:
    dates: tuple
    lookbacks: tuple
    per_lookback: np.ndarray
    per_round_loss: np.ndarray
    binding: np.ndarray = field(default=None)

    def __post_init__(self):
        self.per_lookback = np.asarray(self.per_lookback, dtype=float)
        self.per_round_loss = np.asarray(self.per_round_loss, dtype=float)
        if self.binding is None:
            self.binding = np.zeros(self.per_lookback.shape, dtype=bool)

    @property
    def r_mean(self) -> np.ndarray:
        return self.per_lookback.mean(axis=0)

    @property
    def r_std(self) -> np.ndarray:
        return self.per_lookback.std(axis=0)

    def to_csv(self, config: dict | None = None) -> str:
        cols = ["date", "r_mean", "r_std"] + [f"r_l{l}" for l in self.lookbacks]
        lines = [header_line(config).rstrip("\n"), ",".join(cols)]
        mean, std = self.r_mean, self.r_std
        for k, d in enumerate(self.dates):
            vals = [mean[k], std[k]] + list(self.per_lookback[:, k])
            lines.append(str(d) + "," + ",".join(fmt(v) for v in vals))
        return "\n".join(lines) + "\n"


def _run_lookback(args):
    data, cfg, l, smap = args
    try:
        return learn_sequence(data, cfg, l, smap)
    except InvRiskError as exc:
        exc.lookback = l
        exc.args = (f"lookback {l}: {exc}",) + exc.args[1:]
        raise


def learn_with_bands(data: AlignedDataset, cfg: LearnerConfig, sector_map: SectorMap | None = None,
                     jobs: int = 1) -> RiskTrace:
    """Independent learning runs per look-back offset, stacked into a RiskTrace."""
    tasks = [(data, cfg, l, sector_map) for l in cfg.lookbacks]
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            runs = list(pool.map(_run_lookback, tasks))
    else:
        runs = [_run_lookback(t) for t in tasks]
    R = np.array([[rec.r for rec in run] for run in runs])
    L = np.array([[rec.loss for rec in run] for run in runs])
    B = np.array([[rec.binding_m for rec in run] for run in runs], dtype=bool)
    return RiskTrace(tuple(data.observation_times), cfg.lookbacks, R, L, B)
