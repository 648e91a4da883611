"""Command-line entry point.

Every subcommand reads a flat INI file with a single ``[run]`` section::

    invrisk learn --config learn.ini

Relative paths in the config resolve against the config file's directory;
a ``pkg:`` prefix names a file bundled with the package. Outputs go to
``output_dir`` (default ``invrisk-out``), which the ``INVRISK_OUTPUT_DIR``
environment variable overrides. Exit codes: 1 configuration, 2 data,
3 solver.
"""
from __future__ import annotations

import argparse
import configparser
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .datasets import data_path
from .errors import ConfigError, DataError, InfeasibleError, InvRiskError
from .forward import ConstraintSet, default_r_grid, efficient_frontier, solve_po, solve_po_target
from .inverse import InverseInstance, solve_ipo
from .io import atomic_write, dumps, fmt, header_line, load_json
from .learner import DEFAULT_LOOKBACKS, LearnerConfig, learn_with_bands
from .market_data import (
    MarketMoments,
    align,
    load_portfolios,
    load_prices,
    moments,
    rolling_annual_returns,
)
from .metrics import inverse_sharpe, load_betas, rank_compare
from .projections import SectorMap
from .validation import GridSpec, ordered_recovery, point_estimation_error

log = logging.getLogger("invrisk")

SCHEMA_VERSION = "1"
COMMON = {"schema_version", "output_dir"}
KEYS = {
    "ingest": {"prices", "window", "as_of", "lookback"},
    "forward": {"moments", "r", "z"},
    "frontier": {"moments", "r_grid"},
    "invert": {"instance"},
    "learn": {"prices", "portfolios", "start", "end", "r0", "lambda", "M", "epsilon",
              "lookbacks", "space", "sector_map", "window", "K", "normalize"},
    "gridsearch": {"moments", "M_grid", "lambda_grid", "epsilon_grid", "r_min", "r_max",
                   "guesses", "n_samples", "seed", "rounds", "K"},
    "validate-order": {"moments", "n_samples", "seed", "r0", "lambda", "M", "rounds",
                       "log_min", "log_max"},
    "metrics": {"traces", "betas", "beta_year", "moments", "allocation"},
}
REQUIRED = {
    "ingest": {"prices"},
    "forward": {"moments"},
    "frontier": {"moments"},
    "invert": {"instance"},
    "learn": {"prices", "portfolios", "start", "end"},
    "gridsearch": {"moments"},
    "validate-order": {"moments"},
    "metrics": {"traces", "betas"},
}
PATH_KEYS = {"prices", "portfolios", "moments", "instance", "sector_map", "betas"}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise ConfigError(message)


class Config:
    def __init__(self, command: str, path: Path):
        self.command = command
        self.path = path
        cp = configparser.ConfigParser(interpolation=None)
        cp.optionxform = str
        try:
            read = cp.read(path, encoding="utf-8")
        except configparser.Error as exc:
            raise ConfigError(f"{path}: {exc}") from exc
        if not read:
            raise ConfigError(f"config file not found: {path}")
        if cp.sections() != ["run"]:
            raise ConfigError("config must contain exactly one [run] section")
        self.values = dict(cp["run"])
        version = self.values.get("schema_version")
        if version != SCHEMA_VERSION:
            raise ConfigError(f"schema_version must be {SCHEMA_VERSION}, got {version!r}")
        unknown = set(self.values) - KEYS[command] - COMMON
        if unknown:
            raise ConfigError(f"unknown keys for {command}: {sorted(unknown)}")
        missing = REQUIRED[command] - set(self.values)
        if missing:
            raise ConfigError(f"missing keys for {command}: {sorted(missing)}")
        for k in PATH_KEYS & set(self.values):
            p = self.resolve(self.values[k])
            if not p.exists():
                raise ConfigError(f"{k}: file not found: {p}")

    def resolve(self, value: str) -> Path:
        if value.startswith("pkg:"):
            return data_path(value[4:])
        p = Path(value)
        return p if p.is_absolute() else (self.path.parent / p)

    def get(self, key, default=None):
        return self.values.get(key, default)

    def path_of(self, key) -> Path:
        return self.resolve(self.values[key])

    def float(self, key, default=None):
        v = self.values.get(key)
        if v is None:
            return default
        try:
            return float(v)
        except ValueError:
            raise ConfigError(f"{key}: expected a number, got {v!r}") from None

    def int(self, key, default=None):
        v = self.values.get(key)
        if v is None:
            return default
        try:
            return int(v)
        except ValueError:
            raise ConfigError(f"{key}: expected an integer, got {v!r}") from None

    def floats(self, key, default=()):
        v = self.values.get(key)
        if v is None:
            return tuple(default)
        try:
            return tuple(float(t) for t in v.replace(",", " ").split())
        except ValueError:
            raise ConfigError(f"{key}: expected a list of numbers, got {v!r}") from None

    def output_dir(self) -> Path:
        env = os.environ.get("INVRISK_OUTPUT_DIR")
        if env:
            return Path(env)
        return self.resolve(self.values.get("output_dir", "invrisk-out"))


def _write(cfg: Config, name: str, text: str) -> Path:
    path = atomic_write(cfg.output_dir() / name, text)
    log.info("event=wrote path=%s", path)
    return path


def _json_doc(cfg: Config, obj) -> str:
    return header_line(cfg.values) + dumps(obj)


def _load_moments(cfg: Config) -> MarketMoments:
    try:
        return MarketMoments.from_dict(load_json(cfg.path_of("moments")))
    except (json.JSONDecodeError, TypeError) as exc:
        raise DataError(f"moments file is not valid: {exc}") from exc


def _cons_for(n: int) -> ConstraintSet:
    return ConstraintSet.long_only_budget(n)


def cmd_ingest(cfg: Config):
    prices = load_prices(cfg.path_of("prices"))
    returns = rolling_annual_returns(prices, cfg.int("window", 253))
    _write(cfg, "returns.csv", returns.to_csv(cfg.values))
    if cfg.get("as_of"):
        m = moments(returns, cfg.get("as_of"), cfg.int("lookback", 1))
        _write(cfg, "moments.json", _json_doc(cfg, m.to_dict()))


def cmd_forward(cfg: Config):
    m = _load_moments(cfg)
    cons = _cons_for(m.c.size)
    if (cfg.get("r") is None) == (cfg.get("z") is None):
        raise ConfigError("forward needs exactly one of r or z")
    if cfg.get("r") is not None:
        r = cfg.float("r")
        sol = solve_po(m.Q, m.c, r, cons)
    else:
        sol = solve_po_target(m.Q, m.c, cfg.float("z"), cons)
        r = sol.return_multiplier
    doc = {
        "r": r, "x": sol.x, "u": sol.u, "objective": sol.objective, "risk": sol.risk,
        "return": sol.ret, "active_set": [int(i) for i in sol.active_set], "residuals": sol.residuals,
    }
    _write(cfg, "forward.json", _json_doc(cfg, doc))


def _parse_grid(spec: str | None):
    if spec is None:
        return default_r_grid()
    if spec.startswith("logspace:"):
        try:
            a, b, k = spec[len("logspace:"):].split(":")
            return np.logspace(float(a), float(b), int(k))
        except ValueError:
            raise ConfigError(f"r_grid: expected logspace:start:stop:count, got {spec!r}") from None
    try:
        return np.array([float(t) for t in spec.replace(",", " ").split()])
    except ValueError:
        raise ConfigError(f"r_grid: cannot parse {spec!r}") from None


def cmd_frontier(cfg: Config):
    m = _load_moments(cfg)
    pts = efficient_frontier(m.Q, m.c, _cons_for(m.c.size), _parse_grid(cfg.get("r_grid")))
    names = list(m.tickers) if m.tickers else [f"x{i + 1}" for i in range(m.c.size)]
    lines = [header_line(cfg.values).rstrip("\n"), ",".join(["r", "risk", "return"] + names)]
    for p in pts:
        lines.append(",".join(fmt(v) for v in [p.r, p.risk, p.ret, *p.x]))
    _write(cfg, "frontier.csv", "\n".join(lines) + "\n")


def cmd_invert(cfg: Config):
    try:
        inst = InverseInstance.from_dict(load_json(cfg.path_of("instance")))
    except (json.JSONDecodeError, TypeError, ValueError) as exc:
        if isinstance(exc, InvRiskError):
            raise
        raise DataError(f"instance file is not valid: {exc}") from exc
    sol = solve_ipo(inst)
    _write(cfg, "inverse.json", _json_doc(cfg, sol.to_dict()))
    if sol.status == "infeasible":
        raise InfeasibleError(sol.message)


def cmd_learn(cfg: Config, jobs: int):
    lookbacks = tuple(int(v) for v in cfg.floats("lookbacks", DEFAULT_LOOKBACKS))
    space = cfg.get("space", "asset")
    lc = LearnerConfig(
        r0=cfg.float("r0", 1.0), lam=cfg.float("lambda", 1000.0), M=cfg.float("M", 1000.0),
        epsilon=cfg.float("epsilon"), lookbacks=lookbacks, space=space, K=cfg.int("K", 5),
    )
    prices = load_prices(cfg.path_of("prices"))
    returns = rolling_annual_returns(prices, cfg.int("window", 253))
    normalize = cfg.get("normalize", "false").lower() in ("1", "true", "yes")
    y = load_portfolios(cfg.path_of("portfolios"), normalize=normalize)
    smap = None
    if space == "sector":
        if cfg.get("sector_map") is None:
            raise ConfigError("sector space needs sector_map")
        smap = SectorMap.from_csv(cfg.path_of("sector_map"))
    data = align(y, returns, cfg.get("start"), cfg.get("end"))
    trace = learn_with_bands(data, lc, smap, jobs=jobs)
    log.info("event=learned dates=%d lookbacks=%d binding=%d", len(trace.dates), len(lookbacks),
             int(trace.binding.sum()))
    _write(cfg, "risk_trace.csv", trace.to_csv(cfg.values))


def cmd_gridsearch(cfg: Config, jobs: int):
    m = _load_moments(cfg)
    default = GridSpec()
    grid = GridSpec(
        M_grid=cfg.floats("M_grid", default.M_grid),
        lambda_grid=cfg.floats("lambda_grid", default.lambda_grid),
        epsilon_grid=cfg.floats("epsilon_grid", ()),
        r_sample_range=(cfg.float("r_min", 0.5), cfg.float("r_max", 20.0)),
        r_guess_set=cfg.floats("guesses", default.r_guess_set),
        n_samples=cfg.int("n_samples", 10),
        seed=cfg.int("seed", 0),
    )
    rep = point_estimation_error(m.Q, m.c, _cons_for(m.c.size), grid, cfg.int("rounds", 20),
                                 K=cfg.int("K", 5), jobs=jobs)
    _write(cfg, "gridsearch.json", _json_doc(cfg, rep.to_dict()))
    _write(cfg, "gridsearch_heatmap.csv", rep.heatmap_csv(cfg.values))


def cmd_validate_order(cfg: Config):
    m = _load_moments(cfg)
    res = ordered_recovery(
        m.Q, m.c, _cons_for(m.c.size), n_samples=cfg.int("n_samples", 30),
        log_range=(cfg.float("log_min", -5.0), cfg.float("log_max", 1.0)), seed=cfg.int("seed", 0),
        r0=cfg.float("r0", 1.0), lam=cfg.float("lambda", 1e4), M=cfg.float("M", 1e4),
        rounds=cfg.int("rounds", 20),
    )
    _write(cfg, "order.json", _json_doc(cfg, res.to_dict()))


def _read_trace_mean(path: Path) -> float:
    import csv

    with open(path, encoding="utf-8", newline="") as fh:
        rows = list(csv.DictReader(ln for ln in fh if not ln.startswith("#")))
    if not rows or "r_mean" not in rows[0]:
        raise DataError(f"{path}: not a risk trace (no r_mean column)")
    return float(np.mean([float(r["r_mean"]) for r in rows]))


def cmd_metrics(cfg: Config):
    traces = {}
    for item in cfg.get("traces").split(","):
        label, _, p = item.strip().partition(":")
        if not p:
            raise ConfigError("traces must be a comma-separated list of label:path")
        path = cfg.resolve(p.strip())
        if not path.exists():
            raise ConfigError(f"trace not found: {path}")
        traces[label.strip()] = _read_trace_mean(path)
    betas = load_betas(cfg.path_of("betas"))
    year = cfg.int("beta_year")
    beta_series = {}
    for label, rec in betas.items():
        if year is None:
            beta_series[label] = float(np.mean(list(rec.beta_by_year.values())))
        elif year in rec.beta_by_year:
            beta_series[label] = rec.beta_by_year[year]
    cmp_ = rank_compare(traces, beta_series)
    doc = {"mean_r": traces, "beta": {k: beta_series[k] for k in cmp_.labels}, "comparison": cmp_.to_dict()}
    if cfg.get("moments") is not None:
        if cfg.get("allocation") is None:
            raise ConfigError("inverse Sharpe needs allocation alongside moments")
        m = _load_moments(cfg)
        doc["inverse_sharpe"] = inverse_sharpe(np.array(cfg.floats("allocation")), m.Q, m.c)
    _write(cfg, "metrics.json", _json_doc(cfg, doc))
    lines = [header_line(cfg.values).rstrip("\n"), "label,mean_r,beta,rank_r,rank_beta"]
    for k, label in enumerate(cmp_.labels):
        lines.append(f"{label},{fmt(traces[label])},{fmt(beta_series[label])},"
                     f"{fmt(cmp_.ranks_a[k])},{fmt(cmp_.ranks_b[k])}")
    _write(cfg, "metrics.csv", "\n".join(lines) + "\n")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="invrisk", description="Learn risk tolerance from observed portfolios.")
    p.add_argument("--version", action="version", version=f"invrisk {__version__}")
    sub = p.add_subparsers(dest="command", metavar="command", parser_class=_Parser)
    for name in KEYS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", required=True, type=Path)
        sp.add_argument("--error-json", action="store_true", help="print errors as JSON on stderr")
        sp.add_argument("--log-level", default="WARNING")
        if name in ("learn", "gridsearch"):
            sp.add_argument("--jobs", type=int, default=1)
    return p


def run(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    error_json = "--error-json" in argv
    try:
        args = build_parser().parse_args(argv)
        if args.command is None:
            build_parser().print_usage(sys.stderr)
            raise ConfigError("no subcommand given")
        logging.basicConfig(level=getattr(logging, str(args.log_level).upper(), logging.WARNING),
                            format="%(asctime)s %(levelname)s %(name)s %(message)s", stream=sys.stderr)
        cfg = Config(args.command, args.config)
        jobs = getattr(args, "jobs", 1)
        if jobs < 1:
            raise ConfigError("--jobs must be >= 1")
        handler = {
            "ingest": lambda: cmd_ingest(cfg),
            "forward": lambda: cmd_forward(cfg),
            "frontier": lambda: cmd_frontier(cfg),
            "invert": lambda: cmd_invert(cfg),
            "learn": lambda: cmd_learn(cfg, jobs),
            "gridsearch": lambda: cmd_gridsearch(cfg, jobs),
            "validate-order": lambda: cmd_validate_order(cfg),
            "metrics": lambda: cmd_metrics(cfg),
        }[args.command]
        handler()
        return 0
    except InvRiskError as exc:
        if error_json:
            d = exc.to_dict()
            d["exit_code"] = exc.exit_code
            sys.stderr.write(json.dumps(d) + "\n")
        else:
            sys.stderr.write(f"invrisk: error: {exc}\n")
        return exc.exit_code


def main() -> None:
    sys.exit(run())


__all__ = ["run", "main", "build_parser", "Config"]
