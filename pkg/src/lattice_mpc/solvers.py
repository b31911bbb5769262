"""Dense solvers: strictly convex QP, small LPs and row-rank selection.

The QP solver works on the shifted form used throughout the package,

    minimize    0.5 z' H z
    subject to  G z <= b

with ``b = w + S x`` for a given parameter ``x``.  The unconstrained
minimizer is ``z = 0``, which makes the dual active-set method of
Goldfarb and Idnani a natural fit: it starts from the unconstrained
optimum, adds violated constraints one at a time and keeps the working
set linearly independent.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

TOL_ACT = 1e-8
TOL_WEAK = 1e-9
PIVOT_TOL = 1e-10


class SolverError(RuntimeError):
    """Raised when an iterative solver exceeds its iteration budget."""


@dataclass
class QpSolution:
    status: str
    z_star: np.ndarray | None = None
    active_set: list[int] = field(default_factory=list)
    multipliers: np.ndarray = field(default_factory=lambda: np.zeros(0))
    objective: float = float("nan")
    # rows that are active with (numerically) zero multiplier
    weakly_active: list[int] = field(default_factory=list)
    iterations: int = 0

    @property
    def optimal(self) -> bool:
        return self.status == "optimal"


@dataclass
class LpSolution:
    status: str
    x_opt: np.ndarray | None = None
    objective: float = float("nan")
    iterations: int = 0


def independent_rows(M, tol: float = PIVOT_TOL, order=None) -> list[int]:
    """Indices of a maximal linearly independent subset of the rows of ``M``.

    Rows are visited in ascending order (or in ``order`` when given) and
    kept greedily whenever they are not in the span of the rows already
    kept.  Independence is decided by Gaussian elimination with partial
    pivoting on the column of largest magnitude.
    """
    M = np.atleast_2d(np.asarray(M, dtype=float))
    if M.size == 0:
        return []
    rows = range(M.shape[0]) if order is None else order
    scale = max(1.0, float(np.max(np.abs(M))))
    basis: list[tuple[np.ndarray, int]] = []
    chosen = []
    for i in rows:
        r = M[i].copy()
        for v, col in basis:
            if r[col] != 0.0:
                r -= (r[col] / v[col]) * v
        col = int(np.argmax(np.abs(r)))
        if abs(r[col]) > tol * scale:
            basis.append((r, col))
            chosen.append(int(i))
    return sorted(chosen)


def solve_dense_qp(H, G, b, Hinv=None, HG=None, GHG=None, tol=TOL_ACT, max_iter=None) -> QpSolution:
    """Goldfarb-Idnani dual active-set solve of ``min 0.5 z'Hz s.t. Gz <= b``.

    ``HG = H^-1 G'`` and ``GHG = G H^-1 G'`` may be supplied precomputed;
    :class:`~lattice_mpc.model.CondensedQp` caches both.
    """
    H = np.asarray(H, dtype=float)
    G = np.asarray(G, dtype=float)
    b = np.asarray(b, dtype=float)
    p, m = G.shape
    if Hinv is None:
        Hinv = np.linalg.inv(H)
    if HG is None:
        HG = Hinv @ G.T
    if GHG is None:
        GHG = G @ HG
    if max_iter is None:
        max_iter = 10 * (p + m) + 50

    z = np.zeros(m)
    W: list[int] = []
    lam = np.zeros(0)
    it = 0
    while True:
        slack = b - G @ z
        viol = np.where(slack < -tol)[0]
        if viol.size == 0:
            break
        # most violated row, lowest index on ties
        pidx = int(viol[np.argmin(slack[viol])])
        lam_p = 0.0
        while True:
            it += 1
            if it > max_iter:
                raise SolverError(f"QP active-set loop exceeded {max_iter} iterations")
            if W:
                Wa = np.asarray(W)
                r = np.linalg.solve(GHG[np.ix_(Wa, Wa)], GHG[Wa, pidx])
                dz = -HG[:, pidx] + HG[:, Wa] @ r
                curv = GHG[pidx, pidx] - GHG[pidx, Wa] @ r
            else:
                r = np.zeros(0)
                dz = -HG[:, pidx]
                curv = GHG[pidx, pidx]
            dependent = curv <= 1e-12 * max(GHG[pidx, pidx], 1e-300)

            t1, drop = np.inf, -1
            for q, rq in enumerate(r):
                if rq > 1e-14:
                    tq = lam[q] / rq
                    if tq < t1:
                        t1, drop = tq, q
            t2 = np.inf if dependent else (b[pidx] - G[pidx] @ z) / (-curv)
            if not np.isfinite(t1) and not np.isfinite(t2):
                return QpSolution(status="infeasible", iterations=it)
            t = min(t1, t2)
            z = z + t * dz
            lam = lam - t * r
            lam_p += t
            if t2 <= t1:
                W.append(pidx)
                lam = np.append(lam, lam_p)
                break
            del W[drop]
            lam = np.delete(lam, drop)

    if W:
        # polish: solve the equality-constrained KKT system of the final working set
        Wa = np.asarray(W)
        lam = -np.linalg.solve(GHG[np.ix_(Wa, Wa)], b[Wa])
        z = -HG[:, Wa] @ lam
    mult_by_row = dict(zip(W, lam))
    resid = np.abs(G @ z - b)
    active = [int(j) for j in np.where(resid <= tol * np.maximum(1.0, np.abs(b)))[0]]
    mults = np.array([mult_by_row.get(j, 0.0) for j in active])
    weak = [j for j, mu in zip(active, mults) if mu < TOL_WEAK]
    return QpSolution(
        status="optimal",
        z_star=z,
        active_set=active,
        multipliers=mults,
        objective=0.5 * float(z @ H @ z),
        weakly_active=weak,
        iterations=it,
    )


def solve_qp(qp, x) -> QpSolution:
    """Solve the condensed QP at parameter ``x``."""
    x = np.asarray(x, dtype=float)
    b = qp.w + qp.S @ x
    return solve_dense_qp(qp.H, qp.G, b, Hinv=qp.Hinv, HG=qp.HG, GHG=qp.GHG)


def _pivot(T, row, col):
    T[row] /= T[row, col]
    colv = T[:, col].copy()
    colv[row] = 0.0
    T -= np.outer(colv, T[row])


def _simplex(T, basis, ncols, tol, max_iter):
    """Primal simplex with Bland's rule on tableau ``T`` (last row = costs)."""
    it = 0
    while True:
        costs = T[-1, :ncols]
        enter = next((j for j in range(ncols) if costs[j] < -tol), -1)
        if enter < 0:
            return "optimal", it
        colv = T[:-1, enter]
        best, leave = np.inf, -1
        for i in np.where(colv > tol)[0]:
            ratio = T[i, -1] / colv[i]
            if leave < 0 or ratio < best - 1e-14 or (abs(ratio - best) <= 1e-14 and basis[i] < basis[leave]):
                best, leave = ratio, i
        if leave < 0:
            return "unbounded", it
        _pivot(T, leave, enter)
        basis[leave] = enter
        it += 1
        if it > max_iter:
            raise SolverError(f"simplex exceeded {max_iter} pivots")


def solve_lp(c, A_ub, b_ub, bounds=None, tol: float = 1e-10) -> LpSolution:
    """Minimize ``c'x`` subject to ``A_ub x <= b_ub`` and ``bounds``.

    ``bounds`` is a list of ``(lo, hi)`` pairs, ``None`` meaning unbounded
    on that side; the default makes every variable nonnegative.  Solved by
    a two-phase dense tableau simplex with Bland's anti-cycling rule.
    """
    c = np.asarray(c, dtype=float)
    n = c.size
    A_ub = np.asarray(A_ub, dtype=float).reshape(-1, n)
    b_ub = np.asarray(b_ub, dtype=float).ravel()
    if bounds is None:
        bounds = [(0.0, None)] * n

    # x = shift + Tm @ v with v >= 0
    cols = []
    shift = np.zeros(n)
    extra_rows, extra_rhs = [], []
    for i, (lo, hi) in enumerate(bounds):
        lo = None if lo is None or not np.isfinite(lo) else float(lo)
        hi = None if hi is None or not np.isfinite(hi) else float(hi)
        if lo is not None and hi is not None and hi < lo:
            return LpSolution(status="infeasible")
        if lo is not None:
            shift[i] = lo
            cols.append((i, 1.0))
            if hi is not None:
                extra_rows.append(len(cols) - 1)
                extra_rhs.append(hi - lo)
        elif hi is not None:
            shift[i] = hi
            cols.append((i, -1.0))
        else:
            cols.append((i, 1.0))
            cols.append((i, -1.0))
    nv = len(cols)
    Tm = np.zeros((n, nv))
    for k, (i, s) in enumerate(cols):
        Tm[i, k] = s

    A = A_ub @ Tm
    rhs = b_ub - A_ub @ shift
    if extra_rows:
        E = np.zeros((len(extra_rows), nv))
        E[np.arange(len(extra_rows)), extra_rows] = 1.0
        A = np.vstack([A, E])
        rhs = np.concatenate([rhs, extra_rhs])
    cv = Tm.T @ c
    mrows = A.shape[0]

    # columns: v (nv), slacks (mrows), artificials (one per negative rhs row)
    neg = np.where(rhs < 0)[0]
    nart = neg.size
    ncols = nv + mrows + nart
    T = np.zeros((mrows + 1, ncols + 1))
    T[:mrows, :nv] = A
    T[:mrows, nv:nv + mrows] = np.eye(mrows)
    T[:mrows, -1] = rhs
    basis = list(range(nv, nv + mrows))
    for k, i in enumerate(neg):
        T[i] *= -1.0
        T[i, nv + mrows + k] = 1.0
        basis[i] = nv + mrows + k
    max_iter = 50 * (ncols + mrows) + 1000
    iters = 0

    if nart:
        T[-1, nv + mrows:ncols] = 1.0
        for i in neg:
            T[-1] -= T[i]
        status, it = _simplex(T, basis, ncols, tol, max_iter)
        iters += it
        if -T[-1, -1] > 1e-9 * max(1.0, float(np.max(np.abs(rhs)))):
            return LpSolution(status="infeasible", iterations=iters)
        # drive artificials out of the basis
        keep = np.ones(mrows, dtype=bool)
        for i in range(mrows):
            if basis[i] >= nv + mrows:
                cand = np.where(np.abs(T[i, :nv + mrows]) > 1e-9)[0]
                if cand.size:
                    _pivot(T, i, int(cand[0]))
                    basis[i] = int(cand[0])
                else:
                    keep[i] = False
        T = np.vstack([T[:-1][keep], T[-1:]])
        basis = [bi for bi, k in zip(basis, keep) if k]
        T = np.delete(T, np.s_[nv + mrows:ncols], axis=1)
        ncols = nv + mrows

    T[-1] = 0.0
    T[-1, :nv] = cv
    for i, bi in enumerate(basis):
        if T[-1, bi] != 0.0:
            T[-1] -= T[-1, bi] * T[i]
    status, it = _simplex(T, basis, ncols, tol, max_iter)
    iters += it
    if status != "optimal":
        return LpSolution(status=status, iterations=iters)
    v = np.zeros(ncols)
    for i, bi in enumerate(basis):
        v[bi] = T[i, -1]
    x = shift + Tm @ v[:nv]
    return LpSolution(status="optimal", x_opt=x, objective=float(c @ x), iterations=iters)
