"""One round of inverse optimization over the mean-variance model.

Given an observed allocation ``y``, a prior risk tolerance ``r_prev`` and a
learning weight ``eta``, find

    minimize    0.5 (r - r_prev)^2 + eta ||y - x||^2
    over        r >= 0, x, u, z in {0,1}^m
    subject to  A x >= b,  u >= 0,  Q x - r c - A'u = 0,
                u <= M z,  A x - b <= M (1 - z).

``solve_ipo`` exploits the structure of the problem. When the reduced
Hessian is positive definite the forward optimizer ``x*(r)`` is piecewise
affine in ``r``, and each binary pattern ``z`` that admits a solution
corresponds to a piece (or a breakpoint) of that path on which the big-M
bounds carve out an interval of ``r``. The solver traces the path once,
then minimizes the one-dimensional convex quadratic on every interval in
closed form. The global minimum over pieces is exact.

``enumerate_active_sets`` is an independent brute-force oracle that solves
one convex QP in ``(r, x, u)`` per admissible binary pattern.
"""
from __future__ import annotations

import itertools
import warnings
from collections import OrderedDict
from dataclasses import dataclass, field

import numpy as np

from .errors import InfeasibleError, NumericalFailure, UnboundedError, ValidationError
from .forward import ConstraintSet, project_onto_optimal_set, solve_po
from .qp import independent_rows, nullspace, solve_qp

__all__ = [
    "InverseInstance",
    "InverseSolution",
    "BindingMWarning",
    "loss",
    "solve_ipo",
    "enumerate_active_sets",
    "relaxation_bound",
    "clear_path_cache",
    "frontier_breakpoints",
]

Y_HARD_TOL = 1e-2
Y_SOFT_TOL = 1e-6
FEAS_TOL = 1e-8
STAT_TOL = 1e-7
GAP_TOL = 1e-9
BINDING_FRACTION = 0.99
ENUM_MAX_M = 24
ENUM_FALLBACK_M = 14
R_MAX = 1e12


class BindingMWarning(UserWarning):
    """A dual or a slack in the returned certificate sits within 1% of M."""


@dataclass(frozen=True, eq=False)
class InverseInstance:
    Q: np.ndarray
    c: np.ndarray
    cons: ConstraintSet
    y: np.ndarray
    r_prev: float
    eta: float
    M: float
    check_y: bool = True

    def __post_init__(self):
        Q = np.array(self.Q, dtype=float, ndmin=2)
        c = np.array(self.c, dtype=float).ravel()
        y = np.array(self.y, dtype=float).ravel()
        n = c.size
        if Q.shape != (n, n) or y.size != n or self.cons.n != n:
            raise ValidationError("Q, c, y and the constraint set disagree on dimension")
        if not (np.all(np.isfinite(Q)) and np.all(np.isfinite(c)) and np.all(np.isfinite(y))):
            raise ValidationError("instance data must be finite")
        if not np.isfinite(self.r_prev) or self.r_prev < 0:
            raise ValidationError(f"r_prev must be non-negative, got {self.r_prev!r}")
        if not np.isfinite(self.eta) or self.eta < 0:
            raise ValidationError(f"eta must be non-negative, got {self.eta!r}")
        if not (self.M > 0 and np.isfinite(self.M)):
            raise ValidationError(f"M must be positive, got {self.M!r}")
        if self.check_y:
            v = self.cons.violation(y)
            if v > Y_HARD_TOL:
                raise ValidationError(f"observed allocation violates the constraints by {v:.3e}")
        for a in (Q, c, y):
            a.setflags(write=False)
        object.__setattr__(self, "Q", 0.5 * (Q + Q.T) if not np.array_equal(Q, Q.T) else Q)
        object.__setattr__(self, "c", c)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "r_prev", float(self.r_prev))
        object.__setattr__(self, "eta", float(self.eta))
        object.__setattr__(self, "M", float(self.M))

    @property
    def objective_constant(self) -> float:
        return 0.5 * self.r_prev ** 2 + self.eta * float(self.y @ self.y)

    def objective(self, r, x) -> float:
        d = self.y - np.asarray(x, dtype=float)
        return 0.5 * (r - self.r_prev) ** 2 + self.eta * float(d @ d)

    def to_dict(self) -> dict:
        return {
            "Q": self.Q, "c": self.c, "A": self.cons.A, "b": self.cons.b, "y": self.y,
            "r_prev": self.r_prev, "eta": self.eta, "M": self.M,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "InverseInstance":
        try:
            n = len(d["c"])
            if "A" in d:
                cons = ConstraintSet(np.asarray(d["A"], dtype=float).reshape(-1, n), d["b"])
            else:
                cons = ConstraintSet.long_only_budget(n)
            return cls(d["Q"], d["c"], cons, d["y"], d["r_prev"], d["eta"], d["M"])
        except KeyError as exc:
            raise ValidationError(f"instance lacks key {exc}") from exc


@dataclass
class InverseSolution:
    r: float
    x: np.ndarray
    u: np.ndarray
    z: np.ndarray
    objective: float
    loss: float
    status: str
    clamped: bool = False
    binding_m: bool = False
    residuals: dict = field(default_factory=dict)
    message: str = ""
    method: str = "path"

    def to_dict(self) -> dict:
        return {
            "status": self.status,
            "r": self.r,
            "objective": self.objective,
            "loss": self.loss,
            "x": self.x,
            "u": self.u,
            "z": [int(v) for v in self.z],
            "clamped": self.clamped,
            "binding_m": self.binding_m,
            "method": self.method,
            "residuals": self.residuals,
            "message": self.message,
        }


def certificate_residuals(inst: InverseInstance, r, x, u, z) -> dict:
    """Violation of every IPO constraint at ``(r, x, u, z)`` (inf-norm, zero if satisfied)."""
    A, b, M = inst.cons.A, inst.cons.b, inst.M
    out = {
        "r_sign": max(0.0, -float(r)),
        "stationarity": float(np.max(np.abs(inst.Q @ x - r * inst.c - A.T @ u))) if x.size else 0.0,
    }
    if inst.cons.m:
        slack = A @ x - b
        out["primal"] = max(0.0, float(-slack.min()))
        out["dual"] = max(0.0, float(-u.min()))
        out["big_m_dual"] = max(0.0, float(np.max(u - M * z)))
        out["big_m_slack"] = max(0.0, float(np.max(slack - M * (1 - z))))
    else:
        out.update(primal=0.0, dual=0.0, big_m_dual=0.0, big_m_slack=0.0)
    return out


def loss(y, Q, c, cons: ConstraintSet, r: float) -> float:
    """Squared distance from ``y`` to the optimal set of the forward problem at ``r``."""
    y = np.asarray(y, dtype=float).ravel()
    v = cons.violation(y)
    if v > Y_HARD_TOL:
        raise ValidationError(f"observed allocation violates the constraints by {v:.3e}")
    x = project_onto_optimal_set(Q, c, r, cons, y)
    d = y - x
    return float(d @ d)


# ---------------------------------------------------------------------------
# parametric path of the forward optimizer


@dataclass
class _Piece:
    lo: float
    hi: float
    alpha: np.ndarray
    beta: np.ndarray
    singular: bool = False


def _ratio_interval(v0, v1, lo, hi, floor=0.0):
    """Restrict [lo, hi] to {r : v0 + r v1 >= floor} (componentwise)."""
    scale = np.maximum(1.0, np.abs(v0))
    for a0, a1, s in zip(v0, v1, scale):
        if abs(a1) <= 1e-13 * s:
            if a0 < floor - 1e-11 * s:
                return 1.0, 0.0
            continue
        rho = (floor - a0) / a1
        if a1 > 0:
            lo = max(lo, rho)
        else:
            hi = min(hi, rho)
    return lo, hi


def _collapse(lo, hi, rtol=1e-12):
    """Treat an interval that is empty only by round-off as a single point."""
    if lo > hi and lo - hi <= rtol * max(1.0, abs(lo)):
        mid = 0.5 * (lo + hi)
        return mid, mid
    return lo, hi


class _Path:
    """Pieces of ``x*(r) = alpha + r beta`` covering ``r >= 0``."""

    def __init__(self, Q, c, cons: ConstraintSet):
        self.Q, self.c, self.cons = Q, c, cons
        self.n = c.size
        G, h, E, e = cons.split()
        self.G, self.h = G, h
        keep = independent_rows(E) if E.shape[0] else np.zeros(0, dtype=int)
        self.Ei, self.ei = E[keep], e[keep]
        self.normQ = max(float(np.max(np.abs(Q))) if Q.size else 0.0, 1e-300)
        self.pieces: list = []
        self.singular = False
        self._m_cache: dict = {}
        self._build()

    def _piece_at(self, r, x0=None, working=None) -> _Piece:
        Q, c, G, h = self.Q, self.c, self.G, self.h
        res = solve_qp(Q, -r * c, G, h, self.Ei, self.ei, x0=x0, working=working)
        W = list(res.working)
        C = np.vstack([self.Ei, G[W]]) if W else self.Ei
        d = np.concatenate([self.ei, h[W]]) if W else self.ei
        n = self.n
        Z = nullspace(C, n)
        x_p = np.linalg.lstsq(C, d, rcond=None)[0] if C.shape[0] else np.zeros(n)
        singular = False
        if Z.shape[1]:
            Hr = Z.T @ Q @ Z
            Hr = 0.5 * (Hr + Hr.T)
            if np.linalg.eigvalsh(Hr)[0] <= 1e-11 * self.normQ:
                singular = True
                alpha = res.x.copy()
                beta = np.zeros(n)
                return _Piece(r, r, alpha, beta, singular=True)
            alpha = x_p - Z @ np.linalg.solve(Hr, Z.T @ (Q @ x_p))
            beta = Z @ np.linalg.solve(Hr, Z.T @ c)
        else:
            alpha, beta = x_p, np.zeros(n)
        lo, hi = 0.0, np.inf
        k_eq = self.Ei.shape[0]
        if W:
            mu0 = np.linalg.lstsq(C.T, Q @ alpha, rcond=None)[0][k_eq:]
            mu1 = np.linalg.lstsq(C.T, Q @ beta - c, rcond=None)[0][k_eq:]
            lo, hi = _ratio_interval(mu0, mu1, lo, hi)
        if G.shape[0]:
            out = np.ones(G.shape[0], dtype=bool)
            out[W] = False
            lo, hi = _ratio_interval(G[out] @ alpha - h[out], G[out] @ beta, lo, hi)
        lo, hi = min(lo, r), max(hi, r)
        p = _Piece(float(lo), float(hi), alpha, beta, singular)
        p.working = W
        p.x = res.x
        return p

    def _build(self):
        tol_gap = 1e-12
        p = self._piece_at(0.0)
        pieces = [p]
        if p.singular:
            self.singular = True
            self.pieces = pieces
            return

        def fill(a, b, depth):
            if b - a <= tol_gap * max(1.0, abs(a)) or depth > 60:
                return
            mid = 0.5 * (a + b)
            q = self._piece_at(mid)
            if q.singular:
                self.singular = True
                return
            pieces.append(q)
            fill(a, q.lo, depth + 1)
            fill(q.hi, b, depth + 1)

        cur = p
        guard = 0
        while cur.hi < R_MAX and not self.singular:
            guard += 1
            if guard > 20 * (self.G.shape[0] + self.n) + 100:
                raise NumericalFailure("path tracing did not terminate", {"pieces": len(pieces)})
            r_next = cur.hi + 1e-7 * max(1.0, cur.hi)
            try:
                nxt = self._piece_at(r_next, x0=cur.alpha + cur.hi * cur.beta, working=cur.working)
            except UnboundedError:
                break
            if nxt.singular:
                self.singular = True
                break
            fill(cur.hi, nxt.lo, 0)
            pieces.append(nxt)
            if nxt.hi <= cur.hi:
                # no progress at this sample; step past it
                nxt.hi = r_next
            cur = nxt
        pieces.sort(key=lambda q: (q.lo, q.hi))
        # close round-off gaps so that shared breakpoints belong to both sides
        for a, b in zip(pieces, pieces[1:]):
            if 0.0 < b.lo - a.hi <= tol_gap * max(1.0, abs(a.hi)):
                a.hi = b.lo = 0.5 * (a.hi + b.lo)
        self.pieces = pieces

    # -- big-M restricted intervals -------------------------------------

    def candidates(self, M: float) -> list:
        """Per piece: (lo, hi, piece, P, dual) with the big-M feasible r-interval."""
        if M in self._m_cache:
            return self._m_cache[M]
        cons = self.cons
        A, b = cons.A, cons.b
        tolA = 1e-9 * max(1.0, float(np.max(np.abs(b))) if b.size else 1.0)
        out = []
        for p in self.pieces:
            S0 = A @ p.alpha - b
            S1 = A @ p.beta
            P = np.where((np.abs(S0) <= tolA) & (np.abs(S1) <= tolA))[0]
            lo, hi = p.lo, p.hi
            off = np.ones(A.shape[0], dtype=bool)
            off[P] = False
            if np.any(off):
                lo, hi = _collapse(*_ratio_interval(M - S0[off], -S1[off], lo, hi))
            if lo > hi:
                continue
            lo, hi, dual = self._dual_interval(p, P, M, lo, hi)
            lo, hi = _collapse(lo, hi)
            if lo > hi:
                continue
            out.append((lo, hi, p, P, dual))
        # isolated breakpoints not covered by any interval
        covered = [(a, bb) for a, bb, *_ in out]
        points = sorted({q.lo for q in self.pieces} | {q.hi for q in self.pieces if np.isfinite(q.hi)})
        for rb in points:
            if any(a - 1e-14 <= rb <= bb + 1e-14 for a, bb in covered):
                continue
            owner = min(self.pieces, key=lambda q: max(q.lo - rb, rb - q.hi, 0.0))
            x = owner.alpha + rb * owner.beta
            slack = A @ x - b
            P = np.where(np.abs(slack) <= tolA)[0]
            off = np.ones(A.shape[0], dtype=bool)
            off[P] = False
            if np.any(slack[off] > M):
                continue
            if self._dual_at(rb, x, P, M) is None:
                continue
            pt = _Piece(rb, rb, x, np.zeros_like(x))
            out.append((rb, rb, pt, P, ("lp",)))
        self._m_cache[M] = out
        return out

    def _merged(self, P):
        pair_of = {}
        for i, j in self.cons.equality_pairs:
            pair_of[i] = j
            pair_of[j] = i
        Pset = set(int(i) for i in P)
        rows, free = [], []
        used = set()
        for i in P:
            i = int(i)
            if i in used:
                continue
            j = pair_of.get(i)
            if j is not None and j in Pset:
                used.update((i, j))
                rows.append((i, j))
                free.append(True)
            else:
                used.add(i)
                rows.append((i, None))
                free.append(False)
        return rows, np.array(free, dtype=bool)

    def _dual_interval(self, p, P, M, lo, hi):
        Q, c, A = self.Q, self.c, self.cons.A
        if P.size == 0:
            return lo, hi, ("none",)
        rows, free = self._merged(P)
        R = A[[i for i, _ in rows]]
        if independent_rows(R).size == R.shape[0]:
            mu0 = np.linalg.lstsq(R.T, Q @ p.alpha, rcond=None)[0]
            mu1 = np.linalg.lstsq(R.T, Q @ p.beta - c, rcond=None)[0]
            lo, hi = _ratio_interval(M - mu0, -mu1, lo, hi)
            lb = np.where(free, -M, 0.0)
            lo, hi = _ratio_interval(mu0 - lb, mu1, lo, hi)
            return lo, hi, ("unique", rows, mu0, mu1)
        # dependent active rows: the feasible (r, u) set is a polyhedron; its
        # projection on r is an interval found by two small LPs
        k = P.size
        AP = A[P]
        E = np.hstack([-(Q @ p.beta - c)[:, None], AP.T])
        e = Q @ p.alpha
        Gi = [np.hstack([np.zeros((k, 1)), np.eye(k)]), np.hstack([np.zeros((k, 1)), -np.eye(k)]),
              np.eye(1, k + 1)]
        hi_rows = [np.zeros(k), -M * np.ones(k), [lo]]
        if np.isfinite(hi):
            Gi.append(-np.eye(1, k + 1))
            hi_rows.append([-hi])
        Gm, hm = np.vstack(Gi), np.concatenate(hi_rows)
        H0 = np.zeros((k + 1, k + 1))
        ends = []
        for sign in (1.0, -1.0):
            g = np.zeros(k + 1)
            g[0] = sign
            try:
                res = solve_qp(H0, g, Gm, hm, E, e)
                ends.append(float(res.x[0]))
            except InfeasibleError:
                return 1.0, 0.0, None
            except UnboundedError:
                ends.append(np.inf)
        return max(lo, ends[0]), min(hi, ends[1]), ("lp",)

    def _dual_at(self, r, x, P, M):
        """Minimum-norm u on rows P with 0 <= u <= M and A_P'u = Qx - rc, or None."""
        if P.size == 0:
            g = self.Q @ x - r * self.c
            return np.zeros(0) if np.max(np.abs(g), initial=0.0) <= STAT_TOL else None
        AP = self.cons.A[P]
        k = P.size
        G = np.vstack([np.eye(k), -np.eye(k)])
        h = np.concatenate([np.zeros(k), -M * np.ones(k)])
        try:
            res = solve_qp(np.eye(k), np.zeros(k), G, h, AP.T, self.Q @ x - r * self.c)
        except InfeasibleError:
            return None
        return np.clip(res.x, 0.0, M)


_PATH_CACHE: "OrderedDict[bytes, _Path]" = OrderedDict()
_PATH_CACHE_SIZE = 256


def clear_path_cache() -> None:
    _PATH_CACHE.clear()


def _path_for(Q, c, cons) -> _Path:
    key = b"|".join([Q.tobytes(), c.tobytes(), cons.A.tobytes(), cons.b.tobytes(), str(cons.A.shape).encode()])
    path = _PATH_CACHE.get(key)
    if path is None:
        path = _Path(Q, c, cons)
        _PATH_CACHE[key] = path
        if len(_PATH_CACHE) > _PATH_CACHE_SIZE:
            _PATH_CACHE.popitem(last=False)
    else:
        _PATH_CACHE.move_to_end(key)
    return path


def _finish(inst, r, x, u, P, status, method, clamped=False, message=""):
    m = inst.cons.m
    z = np.zeros(m, dtype=int)
    z[np.asarray(P, dtype=int)] = 1
    d = inst.y - x
    ls = float(d @ d)
    binding = False
    if m:
        slack = inst.cons.A @ x - inst.cons.b
        limit = BINDING_FRACTION * inst.M
        binding = bool(np.any(u >= limit) or np.any(slack[z == 0] >= limit))
    sol = InverseSolution(
        r=float(r), x=x, u=u, z=z,
        objective=0.5 * (r - inst.r_prev) ** 2 + inst.eta * ls,
        loss=ls, status=status, clamped=clamped, binding_m=binding,
        residuals=certificate_residuals(inst, r, x, u, z),
        message=message, method=method,
    )
    if binding:
        sol.message = (sol.message + "; " if sol.message else "") + \
            f"big-M constraint binding at M={inst.M!r}; consider a larger M"
        warnings.warn(sol.message, BindingMWarning, stacklevel=3)
    return sol


def _infeasible(inst, method):
    n, m = inst.c.size, inst.cons.m
    return InverseSolution(
        r=float("nan"), x=np.full(n, np.nan), u=np.full(m, np.nan), z=np.zeros(m, dtype=int),
        objective=float("inf"), loss=float("nan"), status="infeasible",
        message=f"no binary pattern is feasible with M={inst.M!r}; increase M",
        method=method,
    )


def solve_ipo(inst: InverseInstance) -> InverseSolution:
    """Globally solve one inverse round.

    Status is ``optimal`` on an exact solve; ``gap_tolerance`` when a
    singular reduced Hessian on a large instance forced a tiny ridge on Q;
    ``infeasible`` when no binary pattern admits a certificate within M.
    """
    Q, c, cons = inst.Q, inst.c, inst.cons
    status = "optimal"
    path = _path_for(Q, c, cons)
    if path.singular:
        if cons.m <= ENUM_FALLBACK_M:
            sol = enumerate_active_sets(inst)
            sol.method = "enumeration"
            return sol
        ridge = 1e-10 * max(1.0, path.normQ)
        path = _path_for(Q + ridge * np.eye(c.size), c, cons)
        status = "gap_tolerance"
        if path.singular:
            raise NumericalFailure("reduced Hessian singular even after regularization")

    rp, eta, y = inst.r_prev, inst.eta, inst.y
    best = None
    for lo, hi, p, P, dual in path.candidates(inst.M):
        dvec = y - p.alpha
        bb = float(p.beta @ p.beta)
        r_free = (rp + 2.0 * eta * float(p.beta @ dvec)) / (1.0 + 2.0 * eta * bb)
        r = min(max(r_free, lo), hi)
        res = dvec - r * p.beta
        obj = 0.5 * (r - rp) ** 2 + eta * float(res @ res)
        if best is None or obj < best[0]:
            best = (obj, r, r_free, p, P, dual)
    if best is None:
        return _infeasible(inst, "path")
    _, r, r_free, p, P, dual = best
    x = p.alpha + r * p.beta
    u = np.zeros(cons.m)
    if dual[0] == "unique":
        rows, mu0, mu1 = dual[1], dual[2], dual[3]
        mu = np.clip(mu0 + r * mu1, -inst.M, inst.M)
        for (i, j), v in zip(rows, mu):
            if j is None:
                u[i] = max(v, 0.0)
            else:
                u[i] = max(v, 0.0)
                u[j] = max(-v, 0.0)
    elif dual[0] == "lp":
        uP = path._dual_at(r, x, P, inst.M)
        if uP is None:
            raise NumericalFailure("dual certificate lost at the selected risk tolerance")
        u[P] = uP
    clamped = bool(r == 0.0 and r_free < 0.0)
    return _finish(inst, r, x, u, P, status, "path", clamped=clamped)


# ---------------------------------------------------------------------------
# brute-force oracle


def _pattern_groups(cons: ConstraintSet):
    """Group rows so that exclusive pairs are enumerated as 3 states, not 4."""
    A, b = cons.A, cons.b
    m = cons.m
    partner = {}
    for i in range(m):
        if i in partner:
            continue
        for j in range(i + 1, m):
            if j in partner:
                continue
            if np.array_equal(A[j], -A[i]) and b[i] + b[j] < 0:
                partner[i], partner[j] = j, i
                break
    groups = []
    done = set()
    for i in range(m):
        if i in done:
            continue
        j = partner.get(i)
        if j is None:
            groups.append(((i,), [(0,), (1,)]))
            done.add(i)
        else:
            groups.append(((i, j), [(0, 0), (1, 0), (0, 1)]))
            done.update((i, j))
    return groups


def _solve_pattern(inst, z, relax=False):
    Q, c, A, b = inst.Q, inst.c, inst.cons.A, inst.cons.b
    n, m, M = c.size, inst.cons.m, inst.M
    P = np.where(z == 1)[0]
    off = np.where(z == 0)[0]
    k = P.size
    nv = 1 + n + k
    H = np.zeros((nv, nv))
    H[0, 0] = 1.0
    H[1:1 + n, 1:1 + n] = 2.0 * inst.eta * np.eye(n)
    g = np.zeros(nv)
    g[0] = -inst.r_prev
    g[1:1 + n] = -2.0 * inst.eta * inst.y
    # stationarity and active rows
    E1 = np.hstack([-c[:, None], Q, -A[P].T])
    E2 = np.hstack([np.zeros((k, 1)), A[P], np.zeros((k, k))])
    E = np.vstack([E1, E2])
    e = np.concatenate([np.zeros(n), b[P]])
    Gr = [np.eye(1, nv)]
    hr = [np.zeros(1)]
    if k:
        Iu = np.hstack([np.zeros((k, 1 + n)), np.eye(k)])
        Gr += [Iu, -Iu]
        hr += [np.zeros(k), -M * np.ones(k)]
    if off.size:
        Ao = np.hstack([np.zeros((off.size, 1)), A[off], np.zeros((off.size, k))])
        Gr += [Ao, -Ao]
        hr += [b[off], -(b[off] + M)]
    res = solve_qp(H, g, np.vstack(Gr), np.concatenate(hr), E, e)
    v = res.x
    r, x = float(v[0]), v[1:1 + n]
    u = np.zeros(m)
    u[P] = np.clip(v[1 + n:], 0.0, M)
    return r, x, u, P


def enumerate_active_sets(inst: InverseInstance) -> InverseSolution:
    """Exhaustive search over binary patterns (``m <= 24``).

    Row pairs ``(a'x >= b_i, -a'x >= b_j)`` with ``b_i + b_j < 0`` cannot be
    active together and are enumerated as three states.
    """
    m = inst.cons.m
    if m > ENUM_MAX_M:
        raise ValidationError(f"enumeration needs m <= {ENUM_MAX_M}, got {m}")
    groups = _pattern_groups(inst.cons)
    best = None
    for choice in itertools.product(*(states for _, states in groups)):
        z = np.zeros(m, dtype=int)
        for (rows, _), st in zip(groups, choice):
            for i, s in zip(rows, st):
                z[i] = s
        try:
            r, x, u, P = _solve_pattern(inst, z)
        except (InfeasibleError, UnboundedError, NumericalFailure):
            continue
        obj = inst.objective(r, x)
        if best is None or obj < best[0] - 1e-15:
            best = (obj, r, x, u, P)
    if best is None:
        return _infeasible(inst, "enumeration")
    _, r, x, u, P = best
    return _finish(inst, max(r, 0.0), x, u, P, "optimal", "enumeration")


def relaxation_bound(inst: InverseInstance) -> float:
    """Objective of the continuous relaxation ``0 <= z <= 1``; a lower bound on the optimum."""
    Q, c, A, b = inst.Q, inst.c, inst.cons.A, inst.cons.b
    n, m, M = c.size, inst.cons.m, inst.M
    nv = 1 + n + 2 * m
    H = np.zeros((nv, nv))
    H[0, 0] = 1.0
    H[1:1 + n, 1:1 + n] = 2.0 * inst.eta * np.eye(n)
    g = np.zeros(nv)
    g[0] = -inst.r_prev
    g[1:1 + n] = -2.0 * inst.eta * inst.y
    iu, iz = 1 + n, 1 + n + m
    E = np.zeros((n, nv))
    E[:, 0] = -c
    E[:, 1:1 + n] = Q
    E[:, iu:iz] = -A.T
    rows, rhs = [], []

    def add(row, val):
        rows.append(row)
        rhs.append(val)

    add(np.eye(1, nv, 0)[0], 0.0)
    for i in range(m):
        ru = np.zeros(nv); ru[iu + i] = 1.0; add(ru, 0.0)
        rz = np.zeros(nv); rz[iz + i] = 1.0; add(rz, 0.0)
        rz1 = np.zeros(nv); rz1[iz + i] = -1.0; add(rz1, -1.0)
        # M z_i - u_i >= 0
        rm = np.zeros(nv); rm[iz + i] = M; rm[iu + i] = -1.0; add(rm, 0.0)
        ra = np.zeros(nv); ra[1:1 + n] = A[i]; add(ra, b[i])
        # M (1 - z_i) - (A_i x - b_i) >= 0
        rs = np.zeros(nv); rs[1:1 + n] = -A[i]; rs[iz + i] = -M; add(rs, -M - b[i])
    res = solve_qp(H, g, np.array(rows), np.array(rhs), E, np.zeros(n))
    r, x = float(res.x[0]), res.x[1:1 + n]
    return inst.objective(r, x)


def feasible_point_value(inst: InverseInstance) -> float:
    """Objective at ``(r_prev, x*(r_prev))``, an upper bound on the optimum when M is loose."""
    sol = solve_po(inst.Q, inst.c, inst.r_prev, inst.cons)
    return inst.objective(inst.r_prev, sol.x)


def frontier_breakpoints(Q, c, cons: ConstraintSet) -> np.ndarray:
    """Risk tolerances at which the active set of the forward optimizer changes."""
    Q = np.asarray(Q, dtype=float)
    c = np.asarray(c, dtype=float).ravel()
    path = _path_for(Q, c, cons)
    if path.singular:
        raise NumericalFailure("forward optimizer is not unique along the path")
    return np.array([p.lo for p in path.pieces[1:]])
