import numpy as np
import pytest

from invrisk.datasets import random_fixture, robo_moments
from invrisk.errors import ValidationError
from invrisk.forward import ConstraintSet, solve_po, solve_po_target
from invrisk.learner import LearnerConfig, learn_sequence
from invrisk.market_data import align, moments_at_row, rolling_annual_returns
from invrisk.validation import (
    GridSpec,
    compare_orders,
    estimate_from_repeated,
    generate_multiperiod_fixture,
    ordered_recovery,
    point_estimation_error,
    relative_squared_error,
)


@pytest.fixture(scope="module")
def small():
    return random_fixture(4, seed=11)


def test_aggregation_hand_value():
    # (1/4 + 1/4 + 0 + 4/16) / 4
    assert relative_squared_error([2, 2, 4, 4], [1, 3, 4, 2]) == pytest.approx(0.1875, abs=1e-16)


def test_zero_rate_cell_closed_form(small):
    Q, c, cons = small
    grid = GridSpec(M_grid=(1e3,), lambda_grid=(0.0,), r_guess_set=(1.0, 3.0), n_samples=3, seed=4)
    rep = point_estimation_error(Q, c, cons, grid, rounds=5)
    rs = grid.samples()
    expected = np.mean([(s - g) ** 2 / s ** 2 for s in rs for g in (1.0, 3.0)])
    assert rep.per_cell_error[(1e3, 0.0)] == pytest.approx(expected, rel=1e-14)


def test_truth_as_guess_scores_zero(small):
    Q, c, cons = small
    grid = GridSpec(M_grid=(1e3,), lambda_grid=(1e3,), r_sample_range=(2.0, 2.0), r_guess_set=(2.0,),
                    n_samples=1)
    rep = point_estimation_error(Q, c, cons, grid, rounds=3)
    assert rep.best_error == pytest.approx(0.0, abs=1e-20)


def test_grid_is_full_product(small):
    Q, c, cons = small
    grid = GridSpec(M_grid=(100.0, 1e4), lambda_grid=(100.0, 1e3, 1e4), r_guess_set=(1.0,), n_samples=1)
    rep = point_estimation_error(Q, c, cons, grid, rounds=2)
    assert set(rep.per_cell_error) == {(m, l) for m in (100.0, 1e4) for l in (100.0, 1e3, 1e4)}
    assert rep.best_cell in rep.per_cell_error


def test_epsilon_grid_cells(small):
    Q, c, cons = small
    grid = GridSpec(M_grid=(1e3,), lambda_grid=(1e3,), epsilon_grid=(1e-3, 1e-2), r_guess_set=(1.0,),
                    n_samples=1)
    rep = point_estimation_error(Q, c, cons, grid, rounds=2, K=2)
    assert set(rep.per_cell_error) == {(1e3, 1e3, 1e-3), (1e3, 1e3, 1e-2)}


def test_failed_cell_scores_inf(small):
    Q, c, cons = small
    grid = GridSpec(M_grid=(0.1, 1e3), lambda_grid=(1e3,), r_guess_set=(1.0,), n_samples=1)
    rep = point_estimation_error(Q, c, cons, grid, rounds=2)
    assert rep.per_cell_error[(0.1, 1e3)] == np.inf
    assert (0.1, 1e3) in rep.failures
    assert np.isfinite(rep.per_cell_error[(1e3, 1e3)])


def test_deterministic(small):
    Q, c, cons = small
    grid = GridSpec(M_grid=(1e3,), lambda_grid=(1e2, 1e4), r_guess_set=(1.0, 5.0), n_samples=2, seed=9)
    a = point_estimation_error(Q, c, cons, grid, rounds=4)
    b = point_estimation_error(Q, c, cons, grid, rounds=4, jobs=2)
    assert a.per_cell_error == b.per_cell_error


def test_two_separated_values(small):
    Q, c, cons = small
    ests = []
    for r in (0.1, 5.0):
        y = solve_po(Q, c, r, cons).x
        ests.append(estimate_from_repeated(Q, c, cons, y, 1.0, 1e4, 1e4, 20))
        assert abs(ests[-1] - r) <= 1e-4
    assert compare_orders([0.1, 5.0], ests).exact_match


def test_equal_samples_degenerate():
    res = compare_orders([1.0, 1.0, 1.0], [1.0, 1.0, 1.0])
    assert res.exact_match and res.spearman is None and res.separated_order_ok


def test_separated_order_flag():
    assert not compare_orders([1.0, 2.5], [2.0, 1.0]).separated_order_ok
    assert compare_orders([1.0, 1.5], [2.0, 1.0]).separated_order_ok


def test_ordered_recovery_small(small):
    Q, c, cons = small
    res = ordered_recovery(Q, c, cons, n_samples=6, log_range=(-1.0, 1.0), seed=3)
    assert res.separated_order_ok
    assert res.spearman >= 0.95


def test_ordered_recovery_needs_two(small):
    with pytest.raises(ValidationError):
        ordered_recovery(*small, n_samples=1)


def test_single_period_is_one_forward_solve():
    c, Q = robo_moments()
    fx = generate_multiperiod_fixture(c, Q, 0.2, periods=1, seed=3)
    returns = rolling_annual_returns(fx.prices)
    mom = moments_at_row(returns, fx.observation_rows[0], 1)
    x = solve_po_target(mom.Q, mom.c, 0.2, ConstraintSet.long_only_budget(c.size)).x
    np.testing.assert_allclose(fx.portfolios.holdings[0], x, atol=1e-12)
    assert len(fx.portfolios.dates) == 1


def test_learner_recovers_implied_tolerance():
    c, Q = robo_moments()
    fx = generate_multiperiod_fixture(c, Q, 0.2, periods=4, seed=5)
    returns = rolling_annual_returns(fx.prices)
    y = fx.portfolios
    data = align(y, returns, y.dates[0], y.dates[-1])
    r0 = float(fx.implied_r[0])
    recs = learn_sequence(data, LearnerConfig(r0=r0, lam=1e6, M=1e4, lookbacks=(1,)), lookback=1)
    np.testing.assert_allclose([r.r for r in recs], fx.implied_r, rtol=1e-6)


def test_targets_order_learned_tolerance():
    c, Q = robo_moments()
    means = []
    for z in (0.15, 0.25):
        fx = generate_multiperiod_fixture(c, Q, z, periods=4, seed=8)
        returns = rolling_annual_returns(fx.prices)
        y = fx.portfolios
        data = align(y, returns, y.dates[0], y.dates[-1])
        recs = learn_sequence(data, LearnerConfig(lookbacks=(1,)), lookback=1)
        means.append(np.mean([r.r for r in recs]))
    assert means[0] < means[1]


def test_unattainable_target_names_period():
    c, Q = robo_moments()
    with pytest.raises(ValidationError, match="period 1"):
        generate_multiperiod_fixture(c, Q, 5.0, periods=2, seed=1)


def test_report_serializes(small):
    Q, c, cons = small
    grid = GridSpec(M_grid=(1e3,), lambda_grid=(1e3,), r_guess_set=(1.0,), n_samples=1)
    rep = point_estimation_error(Q, c, cons, grid, rounds=2)
    d = rep.to_dict()
    assert d["best_cell"] == [1e3, 1e3]
    assert rep.heatmap_csv().splitlines()[1] == "M,lambda,epsilon,error"


def test_published_epsilon_grid_accepted(small):
    from invrisk.validation import EPSILON_GRID

    Q, c, cons = small
    grid = GridSpec(M_grid=(1e3,), lambda_grid=(1e3,), epsilon_grid=EPSILON_GRID, r_guess_set=(1.0,),
                    n_samples=1)
    rep = point_estimation_error(Q, c, cons, grid, rounds=2, K=3)
    assert len(rep.per_cell_error) == 4
