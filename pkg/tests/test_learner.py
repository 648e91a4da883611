import math

import numpy as np
import pytest

from conftest import random_spd
from invrisk.datasets import data_path
from invrisk.errors import ConfigError, InsufficientDataError
from invrisk.forward import ConstraintSet, solve_po
from invrisk.inverse import loss
from invrisk.learner import (
    LearnerConfig,
    Observation,
    RiskTrace,
    learn_rounds,
    learn_sequence,
    learn_with_bands,
)
from invrisk.market_data import align, load_portfolios, load_prices, rolling_annual_returns


def _stationary(n, seed, r_true, T):
    rng = np.random.default_rng(seed)
    Q = random_spd(n, rng, floor=0.02)
    c = rng.uniform(0.05, 1.0, n)
    cons = ConstraintSet.long_only_budget(n)
    y = solve_po(Q, c, r_true, cons).x
    return [Observation(t, Q, c, y, cons) for t in range(T)], (Q, c, cons, y)


@pytest.fixture(scope="module")
def robo():
    prices = load_prices(data_path("robo_prices.csv"))
    y = load_portfolios(data_path("robo_portfolios.csv"))
    returns = rolling_annual_returns(prices)
    return align(y, returns, y.dates[0], y.dates[-1])


def test_fixed_point_single_round():
    obs, _ = _stationary(4, 0, 1.0, 1)
    rec = learn_rounds(obs, LearnerConfig(r0=1.0, lam=1e4, M=1e4))
    assert rec[0].r == pytest.approx(1.0, abs=1e-12)


def test_zero_rate_keeps_prior():
    obs, _ = _stationary(4, 1, 2.0, 5)
    recs = learn_rounds(obs, LearnerConfig(r0=0.7, lam=0.0, M=1e4))
    assert [r.r for r in recs] == [0.7] * 5


def test_stationary_convergence_against_grid_fit():
    obs, (Q, c, cons, y) = _stationary(5, 2, 2.0, 20)
    recs = learn_rounds(obs, LearnerConfig(r0=1.0, lam=1e4, M=1e4))
    assert abs(recs[-1].r - 2.0) <= 1e-4
    # single-shot oracle: the r on a grid that best explains y
    grid = np.linspace(1.9, 2.1, 201)
    fit = grid[int(np.argmin([loss(y, Q, c, cons, r) for r in grid]))]
    assert abs(recs[-1].r - fit) <= 1e-3


def test_learning_rate_schedule():
    obs, _ = _stationary(3, 3, 1.5, 6)
    recs = learn_rounds(obs, LearnerConfig(r0=1.0, lam=250.0, M=1e4))
    for rec in recs:
        assert rec.eta == 250.0 / math.sqrt(rec.t)


def test_prefix_consistency():
    obs, _ = _stationary(4, 4, 0.8, 8)
    cfg = LearnerConfig(r0=3.0, lam=10.0, M=1e4)
    full = learn_rounds(obs, cfg)
    part = learn_rounds(obs[:5], cfg)
    assert [r.r for r in part] == [r.r for r in full[:5]]


def test_per_round_loss_settles():
    obs, _ = _stationary(5, 5, 2.0, 20)
    recs = learn_rounds(obs, LearnerConfig(r0=1.0, lam=1e3, M=1e4))
    losses = [r.loss for r in recs]
    for a, b in zip(losses[2:], losses[3:]):
        assert b <= a + 1e-9


def test_config_validation():
    with pytest.raises(ConfigError):
        LearnerConfig(space="factor")
    with pytest.raises(ConfigError):
        LearnerConfig(epsilon=0.01)
    with pytest.raises(ConfigError):
        LearnerConfig(lam=-1.0)
    with pytest.raises(ConfigError):
        LearnerConfig(lookbacks=())
    assert LearnerConfig().lookbacks == (1, 11, 21, 31, 41, 51, 61, 71, 81, 91)


def test_single_lookback_zero_band(robo):
    trace = learn_with_bands(robo, LearnerConfig(lookbacks=(1,)))
    assert np.all(trace.r_std == 0.0)


def test_identical_windows_zero_band(robo):
    trace = learn_with_bands(robo, LearnerConfig(lookbacks=(11, 11)))
    assert np.all(trace.r_std == 0.0)


def test_default_lookbacks_ten_rows(robo):
    trace = learn_with_bands(robo, LearnerConfig())
    assert trace.per_lookback.shape == (10, len(robo.observation_times))
    assert np.all(np.isfinite(trace.per_lookback))
    header = trace.to_csv({"x": 1}).splitlines()[1].split(",")
    assert header[:3] == ["date", "r_mean", "r_std"] and len(header) == 13


def test_parallel_matches_sequential(robo):
    cfg = LearnerConfig(lookbacks=(1, 21, 41))
    a = learn_with_bands(robo, cfg)
    b = learn_with_bands(robo, cfg, jobs=2)
    assert np.array_equal(a.per_lookback, b.per_lookback)


def test_round_error_carries_index(robo):
    # a look-back past the observation row leaves fewer than two returns
    t = robo.price_index_of[robo.observation_times[0]]
    with pytest.raises(InsufficientDataError, match="round 1"):
        learn_sequence(robo, LearnerConfig(), lookback=t)


def test_factor_space_runs(robo):
    recs = learn_sequence(robo, LearnerConfig(space="factor", epsilon=1e-3, K=3))
    assert all(np.isfinite(r.r) for r in recs)


def test_trace_statistics():
    tr = RiskTrace(("a", "b"), (1, 2), [[1.0, 2.0], [3.0, 2.0]], np.zeros((2, 2)))
    np.testing.assert_array_equal(tr.r_mean, [2.0, 2.0])
    np.testing.assert_array_equal(tr.r_std, [1.0, 0.0])
