import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import random_spd
from invrisk.errors import ValidationError
from invrisk.forward import ConstraintSet, solve_po
from invrisk.inverse import (
    BindingMWarning,
    InverseInstance,
    certificate_residuals,
    enumerate_active_sets,
    feasible_point_value,
    frontier_breakpoints,
    loss,
    relaxation_bound,
    solve_ipo,
)

I2 = np.eye(2)
C10 = np.array([1.0, 0.0])


def x_star_2asset(r):
    # hand KKT for Q = I, c = (1, 0) on the 2-asset simplex
    a = min(1.0, (1.0 + r) / 2.0)
    return np.array([a, 1.0 - a])


def test_loss_zero_on_optimal_set(simplex2):
    x = solve_po(I2, C10, 0.3, simplex2).x
    assert loss(x, I2, C10, simplex2, 0.3) == pytest.approx(0.0, abs=1e-24)


def test_loss_hand_value(simplex2):
    assert loss([1.0, 0.0], I2, C10, simplex2, 0.5) == pytest.approx(0.125, abs=1e-14)


def test_loss_rejects_infeasible_y(simplex2):
    with pytest.raises(ValidationError):
        loss([0.7, 0.4], I2, C10, simplex2, 0.5)


def test_fixed_point(simplex2):
    y = solve_po(I2, C10, 1.0, simplex2).x
    sol = solve_ipo(InverseInstance(I2, C10, simplex2, y, 1.0, 1e4, 1e3))
    assert sol.r == pytest.approx(1.0, abs=1e-12)
    assert sol.loss == pytest.approx(0.0, abs=1e-20)
    assert sol.objective == pytest.approx(0.0, abs=1e-20)


def test_two_asset_example_against_grid(simplex2):
    y = np.array([0.75, 0.25])
    sol = solve_ipo(InverseInstance(I2, C10, simplex2, y, 1.0, 1e4, 1e3))
    grid = np.arange(0.0, 2.0, 1e-5)
    vals = [0.5 * (r - 1.0) ** 2 + 1e4 * np.sum((y - x_star_2asset(r)) ** 2) for r in grid]
    r_grid = grid[int(np.argmin(vals))]
    assert 0.4999 <= sol.r <= 0.5001
    assert abs(sol.r - r_grid) <= 1e-5
    np.testing.assert_allclose(sol.x, x_star_2asset(sol.r), atol=1e-12)


def test_zero_weight_keeps_prior(simplex2):
    sol = solve_ipo(InverseInstance(I2, C10, simplex2, [0.75, 0.25], 1.0, 0.0, 1e3))
    assert sol.r == pytest.approx(1.0, abs=1e-12)
    np.testing.assert_allclose(sol.x, solve_po(I2, C10, 1.0, simplex2).x, atol=1e-12)


def test_single_asset_budget_only():
    cons = ConstraintSet(np.array([[1.0], [-1.0]]), np.array([1.0, -1.0]))
    inst = InverseInstance([[0.04]], [0.1], cons, [1.0], 0.7, 100.0, 1e3)
    # x is pinned at 1, the loss vanishes and r stays at the prior
    sol = solve_ipo(inst)
    assert sol.r == pytest.approx(0.7, abs=1e-12)
    assert enumerate_active_sets(inst).r == pytest.approx(0.7, abs=1e-12)


def test_relaxation_is_lower_bound(simplex2):
    Q = np.array([[0.04, 0.01], [0.01, 0.09]])
    c = np.array([0.05, 0.12])
    inst = InverseInstance(Q, c, simplex2, [0.3, 0.7], 2.0, 50.0, 1e6)
    assert relaxation_bound(inst) <= solve_ipo(inst).objective + 1e-12


def test_infeasible_small_m(simplex2):
    # with M < 1/2 every feasible x would have to sit at a vertex, where the
    # opposite bound has slack 1 > M
    inst = InverseInstance(I2, C10, simplex2, [0.6, 0.4], 1.0, 100.0, 0.1)
    sol = solve_ipo(inst)
    assert sol.status == "infeasible"
    assert "increase M" in sol.message
    assert enumerate_active_sets(inst).status == "infeasible"


def test_binding_m_warning(simplex2):
    Q = np.array([[1.0, 0.2], [0.2, 0.5]])
    with pytest.warns(BindingMWarning):
        sol = solve_ipo(InverseInstance(Q, C10, simplex2, [0.9, 0.1], 1.0, 100.0, 0.7))
    assert sol.binding_m


def test_degenerate_point_interval(simplex2):
    Q = np.array([[1.0, 0.2], [0.2, 0.5]])
    inst = InverseInstance(Q, C10, simplex2, [0.6, 0.4], 1.0, 100.0, 0.5)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", BindingMWarning)
        a, b = solve_ipo(inst), enumerate_active_sets(inst)
    assert a.status == b.status == "optimal"
    assert a.objective == pytest.approx(b.objective, abs=1e-12)


def test_instance_round_trip(simplex2):
    inst = InverseInstance(I2, C10, simplex2, [0.75, 0.25], 1.0, 10.0, 1e3)
    back = InverseInstance.from_dict(inst.to_dict())
    assert solve_ipo(back).r == solve_ipo(inst).r


def test_breakpoints_two_asset(simplex2):
    np.testing.assert_allclose(frontier_breakpoints(I2, C10, simplex2), [1.0], atol=1e-12)


def _instance(n, seed, eta, M, noisy):
    rng = np.random.default_rng(seed)
    Q = random_spd(n, rng, floor=0.01)
    c = rng.uniform(-0.1, 1.0, n)
    cons = ConstraintSet.long_only_budget(n)
    y = rng.dirichlet(np.ones(n)) if noisy else solve_po(Q, c, rng.uniform(0.0, 3.0), cons).x
    return InverseInstance(Q, c, cons, y, float(rng.uniform(0.0, 4.0)), eta, M)


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 3), st.integers(0, 10_000), st.sampled_from([0.0, 1.0, 100.0, 1e4]),
       st.sampled_from([1.0, 10.0, 100.0, 1e4]), st.booleans())
def test_matches_enumeration(n, seed, eta, M, noisy):
    inst = _instance(n, seed, eta, M, noisy)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", BindingMWarning)
        a, b = solve_ipo(inst), enumerate_active_sets(inst)
    assert a.status == b.status
    if a.status == "optimal":
        assert abs(a.objective - b.objective) <= 1e-9 * max(1.0, abs(b.objective))


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 6), st.integers(0, 10_000), st.sampled_from([1.0, 100.0, 1e4]), st.booleans())
def test_certificate_and_upper_bound(n, seed, eta, noisy):
    inst = _instance(n, seed, eta, 1e4, noisy)
    sol = solve_ipo(inst)
    res = certificate_residuals(inst, sol.r, sol.x, sol.u, sol.z)
    assert max(res.values()) <= 1e-8
    assert sol.r >= 0.0
    assert sol.objective <= feasible_point_value(inst) + 1e-9


@settings(max_examples=25, deadline=None)
@given(st.integers(2, 6), st.integers(0, 10_000), st.floats(0.2, 5.0))
def test_large_weight_moves_toward_truth(n, seed, r_true):
    rng = np.random.default_rng(seed)
    Q = random_spd(n, rng, floor=0.01)
    c = rng.uniform(0.0, 1.0, n)
    cons = ConstraintSet.long_only_budget(n)
    y = solve_po(Q, c, r_true, cons).x
    lo = solve_ipo(InverseInstance(Q, c, cons, y, 1.0, 1e2, 1e4)).r
    hi = solve_ipo(InverseInstance(Q, c, cons, y, 1.0, 1e6, 1e4)).r
    assert abs(hi - r_true) <= 10.0 * abs(lo - r_true) + 1e-12
