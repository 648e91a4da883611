"""Forward mean-variance problem.

``solve_po`` solves::

    minimize    0.5 x'Qx - r c'x
    subject to  A x >= b

and returns the allocation together with a KKT certificate (duals ``u`` with
``Q x - r c - A'u = 0``). ``solve_po_target`` solves the target-return form
(minimum variance subject to ``c'x = z``), and ``efficient_frontier`` sweeps
``r`` over a grid.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .errors import (
    InfeasibleTargetError,
    SingularMatrixError,
    SolverError,
    UnboundedError,
    ValidationError,
)
from .qp import independent_rows, solve_qp

__all__ = [
    "ConstraintSet",
    "ForwardSolution",
    "FrontierPoint",
    "solve_po",
    "solve_po_target",
    "attainable_returns",
    "risk_return_equivalence",
    "target_to_risk",
    "efficient_frontier",
    "default_r_grid",
    "kkt_residuals",
    "project_onto_optimal_set",
]

FEAS_TOL = 1e-8


@dataclass(frozen=True, eq=False)
class ConstraintSet:
    """Polyhedral constraints ``A x >= b``.

    ``kind`` is one of ``long_only_budget``, ``factor_dense`` or ``custom``;
    ``epsilon`` is only meaningful for ``factor_dense``.
    """

    A: np.ndarray
    b: np.ndarray
    kind: str = "custom"
    epsilon: float | None = None

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.A, dtype=float))
        b = np.asarray(self.b, dtype=float).ravel()
        if A.shape[0] != b.size:
            raise ValidationError(f"A has {A.shape[0]} rows but b has {b.size} entries")
        A.setflags(write=False)
        b.setflags(write=False)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "b", b)

    @classmethod
    def long_only_budget(cls, n: int) -> "ConstraintSet":
        """``0 <= x_i <= 1`` and ``sum(x) = 1`` as ``[I; -I; 1'; -1'] x >= [0; -1; 1; -1]``."""
        I = np.eye(n)
        one = np.ones((1, n))
        A = np.vstack([I, -I, one, -one])
        b = np.concatenate([np.zeros(n), -np.ones(n), [1.0, -1.0]])
        return cls(A, b, kind="long_only_budget")

    @classmethod
    def unconstrained(cls, n: int) -> "ConstraintSet":
        return cls(np.zeros((0, n)), np.zeros(0), kind="custom")

    @property
    def n(self) -> int:
        return self.A.shape[1]

    @property
    def m(self) -> int:
        return self.A.shape[0]

    @cached_property
    def _structure(self):
        # Rows i < j with A_j = -A_i and b_j = -b_i form an equality.
        A, b = self.A, self.b
        seen: dict = {}
        pairs = []
        paired = set()
        for i in range(self.m):
            key = A[i].tobytes() + b[i].tobytes()
            neg = (-A[i] + 0.0).tobytes() + (-b[i] + 0.0).tobytes()
            if neg in seen and seen[neg] not in paired:
                j = seen[neg]
                pairs.append((j, i))
                paired.update((i, j))
            elif key not in seen:
                seen[key] = i
        ineq = np.array([i for i in range(self.m) if i not in paired], dtype=int)
        eq_rows = np.array([p[0] for p in pairs], dtype=int)
        return pairs, ineq, eq_rows

    @property
    def equality_pairs(self) -> list:
        return self._structure[0]

    @property
    def inequality_rows(self) -> np.ndarray:
        return self._structure[1]

    def split(self):
        """Return ``(G, h, E, e)`` with genuine inequalities and merged equalities."""
        _, ineq, eq_rows = self._structure
        return self.A[ineq], self.b[ineq], self.A[eq_rows], self.b[eq_rows]

    def expand_duals(self, lam: np.ndarray, nu: np.ndarray) -> np.ndarray:
        """Map inequality multipliers and equality multipliers back to rows of A."""
        pairs, ineq, _ = self._structure
        u = np.zeros(self.m)
        u[ineq] = lam
        for k, (i, j) in enumerate(pairs):
            u[i] = max(nu[k], 0.0)
            u[j] = max(-nu[k], 0.0)
        return u

    def violation(self, x) -> float:
        """Largest constraint violation ``max(b - A x, 0)``."""
        if self.m == 0:
            return 0.0
        return float(max(np.max(self.b - self.A @ np.asarray(x, dtype=float)), 0.0))


@dataclass
class ForwardSolution:
    x: np.ndarray
    u: np.ndarray
    objective: float
    active_set: np.ndarray
    risk: float
    ret: float
    residuals: dict = field(default_factory=dict)
    return_multiplier: float | None = None
    working: list = field(default_factory=list, repr=False)


@dataclass
class FrontierPoint:
    r: float
    risk: float
    ret: float
    x: np.ndarray


def kkt_residuals(Q, c, r, cons: ConstraintSet, x, u) -> dict:
    """Feasibility, dual feasibility, complementarity and stationarity residuals (inf-norm)."""
    Q = np.asarray(Q, dtype=float)
    c = np.asarray(c, dtype=float)
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    if cons.m:
        slack = cons.A @ x - cons.b
        primal = max(0.0, float(-slack.min()))
        dual = max(0.0, float(-u.min()))
        comp = float(np.max(np.abs(u * slack)))
        stat = float(np.max(np.abs(Q @ x - r * c - cons.A.T @ u)))
    else:
        primal = dual = comp = 0.0
        stat = float(np.max(np.abs(Q @ x - r * c))) if x.size else 0.0
    return {"primal": primal, "dual": dual, "complementarity": comp, "stationarity": stat}


def _active(cons, x, tol=1e-9):
    if cons.m == 0:
        return np.zeros(0, dtype=int)
    slack = cons.A @ x - cons.b
    return np.where(np.abs(slack) <= tol * max(1.0, float(np.max(np.abs(cons.b)))))[0]


def _check_inputs(Q, c, cons):
    Q = np.asarray(Q, dtype=float)
    c = np.asarray(c, dtype=float).ravel()
    n = c.size
    if Q.shape != (n, n):
        raise ValidationError(f"Q has shape {Q.shape}, expected {(n, n)}")
    if cons.n != n:
        raise ValidationError(f"constraint set has {cons.n} columns, expected {n}")
    if not (np.all(np.isfinite(Q)) and np.all(np.isfinite(c))):
        raise ValidationError("Q and c must be finite")
    return Q, c


def _working_to_rows(cons, working):
    ineq = cons.inequality_rows
    return [int(ineq[i]) for i in working]


def _rows_to_working(cons, rows):
    if not rows:
        return None
    pos = {int(r): k for k, r in enumerate(cons.inequality_rows)}
    return [pos[r] for r in rows if r in pos]


def _min_distance_on_optimal_set(Q, c, r, cons, x_star, target):
    """argmin ||x - target|| over the optimal set of the forward problem.

    For a convex QP the optimal set is ``{x feasible : Qx = Qx*, c'x = c'x*}``.
    """
    G, h, E, e = cons.split()
    Qx = Q @ x_star
    E2 = np.vstack([E, Q, c[None, :]])
    e2 = np.concatenate([e, Qx, [c @ x_star]])
    keep = independent_rows(E2)
    n = c.size
    res = solve_qp(np.eye(n), -np.asarray(target, dtype=float), G, h, E2[keep], e2[keep], x0=x_star)
    return res.x


def solve_po(Q, c, r: float, cons: ConstraintSet, x0=None, working=None) -> ForwardSolution:
    """Solve the forward mean-variance problem at risk tolerance ``r``.

    When the optimum is not unique the minimum-norm optimizer is returned.
    ``x0``/``working`` warm-start the active-set engine (``working`` holds
    row indices of ``cons.A``).
    """
    Q, c = _check_inputs(Q, c, cons)
    if not np.isfinite(r) or r < 0:
        raise ValidationError(f"risk tolerance must be non-negative, got {r!r}")
    G, h, E, e = cons.split()
    res = solve_qp(Q, -r * c, G, h, E, e, x0=x0, working=_rows_to_working(cons, working))
    x = res.x
    if res.reduced_singular:
        x = _min_distance_on_optimal_set(Q, c, r, cons, x, np.zeros_like(x))
    u = cons.expand_duals(res.lam, res.nu)
    return _solution(Q, c, r, cons, x, u, _working_to_rows(cons, res.working))


def _solution(Q, c, r, cons, x, u, working, mult=None):
    risk = float(x @ Q @ x)
    ret = float(c @ x)
    return ForwardSolution(
        x=x,
        u=u,
        objective=0.5 * risk - r * ret,
        active_set=_active(cons, x),
        risk=risk,
        ret=ret,
        residuals=kkt_residuals(Q, c, r, cons, x, u),
        return_multiplier=mult,
        working=working,
    )


def project_onto_optimal_set(Q, c, r, cons, y, solution: ForwardSolution | None = None):
    """Closest point to ``y`` in the optimal set of the forward problem."""
    Q, c = _check_inputs(Q, c, cons)
    sol = solution if solution is not None else solve_po(Q, c, r, cons)
    G, h, E, e = cons.split()
    # unique optimum unless the reduced Hessian has a null direction
    res = solve_qp(Q, -r * c, G, h, E, e, x0=sol.x, working=_rows_to_working(cons, sol.working))
    if not res.reduced_singular:
        return sol.x
    return _min_distance_on_optimal_set(Q, c, r, cons, sol.x, y)


def attainable_returns(c, cons: ConstraintSet) -> tuple:
    """Range ``[min c'x, max c'x]`` over the feasible polytope."""
    c = np.asarray(c, dtype=float).ravel()
    if cons.kind == "long_only_budget":
        return float(c.min()), float(c.max())
    G, h, E, e = cons.split()
    Z = np.zeros((c.size, c.size))
    out = []
    for sign in (1.0, -1.0):
        try:
            res = solve_qp(Z, sign * c, G, h, E, e)
            out.append(float(c @ res.x))
        except UnboundedError:
            out.append(-sign * np.inf)
    return out[0], out[1]


def solve_po_target(Q, c, z: float, cons: ConstraintSet) -> ForwardSolution:
    """Minimum-variance allocation with expected return ``c'x = z``.

    ``return_multiplier`` on the result is the multiplier of the return
    constraint, i.e. the risk tolerance at which the target is optimal.
    """
    Q, c = _check_inputs(Q, c, cons)
    lo, hi = attainable_returns(c, cons)
    tol = 1e-10 * max(1.0, abs(z))
    if not (lo - tol <= z <= hi + tol):
        raise InfeasibleTargetError(float(z), lo, hi)
    G, h, E, e = cons.split()
    E2 = np.vstack([E, c[None, :]])
    e2 = np.concatenate([e, [z]])
    res = solve_qp(Q, np.zeros(c.size), G, h, E2, e2)
    x = res.x
    mult = float(res.nu[-1])
    u = cons.expand_duals(res.lam, res.nu[:-1])
    if res.reduced_singular:
        x = _min_distance_on_optimal_set(Q, c, mult, cons, x, np.zeros_like(x))
    return _solution(Q, c, mult, cons, x, u, _working_to_rows(cons, res.working), mult=mult)


def _quad_form_inverse(Q, c):
    Q = np.asarray(Q, dtype=float)
    c = np.asarray(c, dtype=float).ravel()
    try:
        cond = np.linalg.cond(Q)
    except np.linalg.LinAlgError:
        cond = np.inf
    if not np.isfinite(cond) or cond > 1e14:
        raise SingularMatrixError("covariance matrix is singular")
    return float(c @ np.linalg.solve(Q, c))


def risk_return_equivalence(Q, c, r: float) -> float:
    """Target return ``z = r c'Q^{-1}c`` equivalent to risk tolerance ``r`` (no constraints)."""
    return r * _quad_form_inverse(Q, c)


def target_to_risk(Q, c, z: float) -> float:
    """Inverse map ``r = z / (c'Q^{-1}c)``."""
    k = _quad_form_inverse(Q, c)
    if k == 0.0:
        raise SingularMatrixError("c'Q^{-1}c is zero; the map is not invertible")
    return z / k


def default_r_grid() -> np.ndarray:
    """100 log-spaced risk tolerances from 1e-5 to 10."""
    return np.logspace(-5, 1, 100)


def efficient_frontier(Q, c, cons: ConstraintSet, r_grid=None) -> list:
    """Solve the forward problem along an ascending grid of risk tolerances."""
    grid = default_r_grid() if r_grid is None else np.asarray(r_grid, dtype=float).ravel()
    if np.any(np.diff(grid) < 0):
        raise ValidationError("r_grid must be sorted ascending")
    points = []
    prev = None
    for r in grid:
        try:
            sol = solve_po(Q, c, float(r), cons,
                           x0=None if prev is None else prev.x,
                           working=None if prev is None else prev.working)
        except SolverError as exc:
            exc.r = float(r)
            exc.args = (f"at r={r!r}: {exc}",) + exc.args[1:]
            raise
        points.append(FrontierPoint(r=float(r), risk=sol.risk, ret=sol.ret, x=sol.x))
        prev = sol
    return points
