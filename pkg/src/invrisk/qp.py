"""Primal active-set engine for convex quadratic programs.

Solves::

    minimize    0.5 x'Hx + g'x
    subject to  A x >= b
                E x  = e

with H symmetric positive semidefinite. Each iteration solves the
equality-constrained subproblem on the current working set by a null-space
method; zero-curvature directions of the reduced Hessian are followed as rays
until a constraint blocks, which lets the same loop act as an LP solver
(H = 0) for phase one and for auxiliary interval computations.

The working set is kept linearly independent: a blocking row always has
a nonzero component along the step, which lies in the null space of the
current working rows.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .errors import InfeasibleError, NumericalFailure, UnboundedError

__all__ = ["QPResult", "solve_qp", "nullspace", "independent_rows"]


@dataclass
class QPResult:
    x: np.ndarray
    lam: np.ndarray  # multipliers of A x >= b, nonnegative
    nu: np.ndarray  # multipliers of E x = e, free sign
    working: list = field(default_factory=list)
    iterations: int = 0
    reduced_singular: bool = False


def nullspace(C: np.ndarray, n: int) -> np.ndarray:
    """Orthonormal basis of {p : C p = 0}; rows of `C` must be independent."""
    k = C.shape[0]
    if k == 0:
        return np.eye(n)
    if k >= n:
        return np.zeros((n, 0))
    Qm, _ = np.linalg.qr(C.T, mode="complete")
    return Qm[:, k:]


def independent_rows(C: np.ndarray, tol: float = 1e-10) -> np.ndarray:
    """Indices of a maximal linearly independent subset of rows, in pivot order."""
    if C.shape[0] == 0:
        return np.zeros(0, dtype=int)
    _, R, piv = scipy.linalg.qr(C.T, mode="economic", pivoting=True)
    d = np.abs(np.diag(R))
    if d.size == 0 or d[0] == 0.0:
        return np.zeros(0, dtype=int)
    rank = int(np.sum(d > tol * d[0]))
    return np.sort(piv[:rank])


def _as2d(M, n):
    if M is None:
        return np.zeros((0, n))
    M = np.asarray(M, dtype=float)
    return M.reshape(-1, n)


def solve_qp(
    H,
    g,
    A=None,
    b=None,
    E=None,
    e=None,
    x0=None,
    working=None,
    max_iter: int | None = None,
) -> QPResult:
    """Solve a convex QP by the primal active-set method.

    Parameters
    ----------
    H, g : Hessian (n x n, PSD) and linear term (n,).
    A, b : inequality rows, ``A x >= b``.
    E, e : equality rows, ``E x = e``; dependent rows are tolerated.
    x0 : optional feasible starting point; phase one runs otherwise.
    working : optional initial working set (indices into A), filtered to
        rows active at ``x0``.
    max_iter : iteration cap, default ``50 * (n + m)``.

    Returns
    -------
    QPResult
        Stationarity holds as ``H x + g = A' lam + E' nu`` with ``lam >= 0``.

    Raises
    ------
    InfeasibleError, UnboundedError, NumericalFailure
    """
    H = np.asarray(H, dtype=float)
    g = np.asarray(g, dtype=float).ravel()
    n = g.size
    H = H.reshape(n, n)
    A = _as2d(A, n)
    b = np.zeros(0) if b is None else np.asarray(b, dtype=float).ravel()
    E = _as2d(E, n)
    e = np.zeros(0) if e is None else np.asarray(e, dtype=float).ravel()
    m, p_all = A.shape[0], E.shape[0]
    if max_iter is None:
        max_iter = 50 * (n + m + p_all) + 50

    data_scale = max(1.0, np.max(np.abs(b)) if m else 0.0, np.max(np.abs(e)) if p_all else 0.0)
    feas_tol = 1e-9 * data_scale

    eq_idx = independent_rows(E) if p_all else np.zeros(0, dtype=int)
    Ei, ei = E[eq_idx], e[eq_idx]
    if p_all:
        xe = np.linalg.lstsq(Ei, ei, rcond=None)[0]
        if np.max(np.abs(E @ xe - e)) > feas_tol:
            raise InfeasibleError("equality constraints are inconsistent")

    start_working: list = []
    if x0 is not None:
        x = np.array(x0, dtype=float).ravel()
        ok = True
        if p_all and np.max(np.abs(E @ x - e)) > feas_tol:
            ok = False
        if m and np.min(A @ x - b) < -feas_tol:
            ok = False
        if not ok:
            x0 = None
        elif working:
            slack = A @ x - b
            cand = [i for i in working if 0 <= i < m and abs(slack[i]) <= feas_tol]
            start_working = _filter_independent(Ei, A, cand)
    if x0 is None:
        x = _phase_one(A, b, Ei, ei, n, feas_tol)

    res = _active_set_loop(H, g, A, b, Ei, x, start_working, max_iter)
    nu = np.zeros(p_all)
    nu[eq_idx] = res.nu
    res.nu = nu
    return res


def _filter_independent(Ei, A, cand):
    rows = []
    for i in cand:
        trial = rows + [i]
        C = np.vstack([Ei, A[trial]])
        if independent_rows(C).size == C.shape[0]:
            rows = trial
    return rows


def _phase_one(A, b, Ei, ei, n, feas_tol):
    if Ei.shape[0]:
        x = np.linalg.lstsq(Ei, ei, rcond=None)[0]
    else:
        x = np.zeros(n)
    m = A.shape[0]
    if m == 0:
        return x
    viol = float(np.max(b - A @ x))
    if viol <= 0.0:
        return x
    # min t  s.t.  A x + t >= b,  t >= 0,  E x = e
    A1 = np.zeros((m + 1, n + 1))
    A1[:m, :n] = A
    A1[:m, n] = 1.0
    A1[m, n] = 1.0
    b1 = np.concatenate([b, [0.0]])
    E1 = np.hstack([Ei, np.zeros((Ei.shape[0], 1))])
    g1 = np.zeros(n + 1)
    g1[n] = 1.0
    z0 = np.concatenate([x, [viol]])
    res = _active_set_loop(np.zeros((n + 1, n + 1)), g1, A1, b1, E1, z0, [], 50 * (n + m) + 100)
    if res.x[n] > feas_tol:
        raise InfeasibleError(f"constraints are infeasible (phase-one residual {res.x[n]:.3e})")
    return res.x[:n]


def _active_set_loop(H, g, A, b, Ei, x, W, max_iter):
    n = x.size
    m = A.shape[0]
    k_eq = Ei.shape[0]
    W = list(W)
    normH = float(np.max(np.abs(H))) if H.size else 0.0
    at_min = False
    ray = False
    singular = False
    it = 0
    while True:
        it += 1
        if it > max_iter:
            grad = H @ x + g
            raise NumericalFailure(
                f"active-set iteration cap {max_iter} reached",
                {"working_set_size": len(W), "grad_norm": float(np.max(np.abs(grad)))},
            )
        C = np.vstack([Ei, A[W]]) if W else Ei
        grad = H @ x + g
        gscale = max(normH * max(1.0, float(np.max(np.abs(x)))), float(np.max(np.abs(g))), 1e-300)
        if not at_min:
            Z = nullspace(C, n)
            if Z.shape[1] == 0:
                at_min = True
                singular = False
            else:
                gz = Z.T @ grad
                Hz = Z.T @ H @ Z
                w, V = np.linalg.eigh((Hz + Hz.T) * 0.5)
                curv_tol = 1e-11 * normH if normH > 0 else 0.0
                zero = w <= curv_tol
                singular = bool(np.any(zero))
                g0 = V[:, zero].T @ gz
                if g0.size and np.max(np.abs(g0)) > 1e-13 * gscale:
                    p = -(Z @ (V[:, zero] @ g0))
                    ray = True
                else:
                    pos = ~zero
                    pz = -(V[:, pos] @ ((V[:, pos].T @ gz) / w[pos]))
                    p = Z @ pz
                    ray = False
                if np.max(np.abs(p)) <= 1e-15 * max(1.0, float(np.max(np.abs(x)))):
                    at_min = True
        if at_min:
            if C.shape[0]:
                mult = np.linalg.lstsq(C.T, grad, rcond=None)[0]
            else:
                mult = np.zeros(0)
            lamW = mult[k_eq:]
            if lamW.size == 0 or float(np.min(lamW)) >= -1e-12 * gscale:
                lam = np.zeros(m)
                if W:
                    lam[W] = np.maximum(lamW, 0.0)
                return QPResult(
                    x=x, lam=lam, nu=mult[:k_eq].copy(), working=list(W),
                    iterations=it, reduced_singular=singular,
                )
            j = int(np.argmin(lamW))
            del W[j]
            at_min = False
            continue

        # ratio test over rows outside the working set
        alpha = np.inf if ray else 1.0
        block = -1
        if m:
            Ap = A @ p
            mask = np.ones(m, dtype=bool)
            if W:
                mask[W] = False
            pn = float(np.linalg.norm(p))
            thresh = 1e-14 * pn * np.linalg.norm(A, axis=1)
            cand = np.where(mask & (Ap < -thresh))[0]
            if cand.size:
                slack = np.maximum(A[cand] @ x - b[cand], 0.0)
                steps = slack / (-Ap[cand])
                k = int(np.argmin(steps))
                if steps[k] < alpha:
                    alpha = float(steps[k])
                    block = int(cand[k])
        if not np.isfinite(alpha):
            raise UnboundedError("objective is unbounded below on the feasible set")
        x = x + alpha * p
        if block >= 0:
            W.append(block)
            at_min = False
        else:
            at_min = True
