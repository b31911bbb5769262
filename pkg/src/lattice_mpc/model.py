"""Linear MPC problem definition and condensation to a parametric QP.

The finite-horizon problem

    min  sum_{k=0}^{N-1} x_k'Q x_k + u_k'R u_k  +  x_N'P x_N
    s.t. x_{k+1} = A x_k + B u_k,
         u_min <= u_k <= u_max           (k = 0..N-1)
         x_min <= x_k <= x_max           (k = 1..N)
         c_x x_k + c_u u_k <= d          (k = 0..N-1, optional rows)

is condensed into  min_U 0.5 U'HU + x'FU  s.t.  GU <= w + Ex, and then
shifted with z = U + H^-1 F'x to  min_z 0.5 z'Hz  s.t.  Gz <= w + Sx.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


class ProblemError(ValueError):
    """Inconsistent or ill-posed MPC problem data."""


@dataclass(frozen=True, eq=False)
class ExtraRow:
    c_x: np.ndarray
    c_u: np.ndarray
    d: float


@dataclass(frozen=True, eq=False)
class MpcProblem:
    A: np.ndarray
    B: np.ndarray
    Q: np.ndarray
    R: np.ndarray
    P: np.ndarray
    N_p: int
    x_min: np.ndarray
    x_max: np.ndarray
    u_min: np.ndarray
    u_max: np.ndarray
    extra_rows: tuple[ExtraRow, ...] = ()
    domain_lo: np.ndarray | None = None
    domain_hi: np.ndarray | None = None
    name: str = ""

    def __post_init__(self):
        def mat(v):
            return np.atleast_2d(np.asarray(v, dtype=float))

        def vec(v, n):
            a = np.asarray(v, dtype=float).ravel()
            return np.full(n, a.item()) if a.size == 1 and n > 1 else a

        A, B = mat(self.A), mat(self.B)
        n_x, n_u = B.shape
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)
        object.__setattr__(self, "Q", mat(self.Q))
        object.__setattr__(self, "R", mat(self.R))
        object.__setattr__(self, "P", mat(self.P))
        for name, n in (("x_min", n_x), ("x_max", n_x), ("u_min", n_u), ("u_max", n_u)):
            object.__setattr__(self, name, vec(getattr(self, name), n))
        for name in ("domain_lo", "domain_hi"):
            if getattr(self, name) is not None:
                object.__setattr__(self, name, vec(getattr(self, name), n_x))
        self._validate()

    @property
    def n_x(self) -> int:
        return self.A.shape[0]

    @property
    def n_u(self) -> int:
        return self.B.shape[1]

    @property
    def domain(self):
        if self.domain_lo is None:
            return None
        return Box(self.domain_lo, self.domain_hi)

    def _validate(self):
        n_x, n_u = self.n_x, self.n_u
        if self.A.shape != (n_x, n_x) or self.B.shape[0] != n_x:
            raise ProblemError("A must be n_x x n_x and B n_x x n_u")
        for name, M, n in (("Q", self.Q, n_x), ("P", self.P, n_x), ("R", self.R, n_u)):
            if M.shape != (n, n):
                raise ProblemError(f"{name} has shape {M.shape}, expected {(n, n)}")
            if not np.allclose(M, M.T, atol=1e-12, rtol=0):
                raise ProblemError(f"{name} is not symmetric")
        if np.min(np.linalg.eigvalsh(self.R)) <= 0:
            raise ProblemError("R must be positive definite")
        for name, M in (("Q", self.Q), ("P", self.P)):
            if np.min(np.linalg.eigvalsh(M)) < -1e-10 * max(1.0, np.abs(M).max()):
                raise ProblemError(f"{name} must be positive semidefinite")
        if self.x_min.shape != (n_x,) or self.x_max.shape != (n_x,):
            raise ProblemError("state bounds must have length n_x")
        if self.u_min.shape != (n_u,) or self.u_max.shape != (n_u,):
            raise ProblemError("input bounds must have length n_u")
        if np.any(self.x_min >= self.x_max) or np.any(self.u_min >= self.u_max):
            raise ProblemError("lower bounds must be strictly below upper bounds")
        if int(self.N_p) < 1:
            raise ProblemError("horizon must be a positive integer")
        for row in self.extra_rows:
            if np.size(row.c_x) != n_x or np.size(row.c_u) != n_u:
                raise ProblemError("general constraint row has wrong dimension")


@dataclass(frozen=True, eq=False)
class Box:
    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        lo = np.asarray(self.lo, dtype=float).ravel()
        hi = np.asarray(self.hi, dtype=float).ravel()
        if lo.shape != hi.shape or np.any(lo >= hi):
            raise ProblemError("box needs lo < hi elementwise")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @property
    def dim(self) -> int:
        return self.lo.size

    @property
    def width(self) -> np.ndarray:
        return self.hi - self.lo

    def contains(self, x, tol: float = 0.0) -> bool:
        x = np.asarray(x)
        return bool(np.all(x >= self.lo - tol) and np.all(x <= self.hi + tol))

    def uniform(self, rng, n: int) -> np.ndarray:
        return self.lo + rng.random((n, self.dim)) * self.width

    def to_dict(self):
        return {"lo": self.lo.tolist(), "hi": self.hi.tolist()}

    @classmethod
    def from_dict(cls, d):
        return cls(d["lo"], d["hi"])


@dataclass(frozen=True, eq=False)
class CondensedQp:
    H: np.ndarray
    F: np.ndarray
    G: np.ndarray
    w: np.ndarray
    E: np.ndarray
    S: np.ndarray
    Hinv_Ft: np.ndarray
    n_x: int
    n_u: int
    N_p: int
    # rollout matrices X = Sx x0 + Su U, kept for cost/constraint checks
    Sx: np.ndarray = field(repr=False, default=None)
    Su: np.ndarray = field(repr=False, default=None)
    Hinv: np.ndarray = field(repr=False, default=None)
    HG: np.ndarray = field(repr=False, default=None)
    GHG: np.ndarray = field(repr=False, default=None)

    @property
    def m(self) -> int:
        return self.H.shape[0]

    @property
    def p(self) -> int:
        return self.G.shape[0]

    def inputs_from_z(self, z, x) -> np.ndarray:
        """Map a shifted optimizer z back to the input sequence U."""
        return np.asarray(z) - self.Hinv_Ft @ np.asarray(x, dtype=float)


def prediction_matrices(A, B, N):
    """``Sx = [A; A^2; ...; A^N]`` and block lower-triangular ``Su``."""
    n_x, n_u = B.shape
    Sx = np.zeros((N * n_x, n_x))
    Su = np.zeros((N * n_x, N * n_u))
    powers = [np.eye(n_x)]
    for _ in range(N):
        powers.append(A @ powers[-1])
    for i in range(N):
        Sx[i * n_x:(i + 1) * n_x] = powers[i + 1]
        for j in range(i + 1):
            Su[i * n_x:(i + 1) * n_x, j * n_u:(j + 1) * n_u] = powers[i - j] @ B
    return Sx, Su


def condense(problem: MpcProblem) -> CondensedQp:
    A, B, N = problem.A, problem.B, int(problem.N_p)
    n_x, n_u = problem.n_x, problem.n_u
    Sx, Su = prediction_matrices(A, B, N)
    Qbar = np.kron(np.eye(N), problem.Q)
    Qbar[-n_x:, -n_x:] = problem.P
    Rbar = np.kron(np.eye(N), problem.R)
    H = 2.0 * (Su.T @ Qbar @ Su + Rbar)
    H = 0.5 * (H + H.T)
    F = 2.0 * Sx.T @ Qbar @ Su

    m = N * n_u
    G_rows, w_rows, E_rows = [], [], []

    def add(g, w, e):
        G_rows.append(g)
        w_rows.append(w)
        E_rows.append(e)

    I_m = np.eye(m)
    for k in range(N):
        for i in range(n_u):
            r = k * n_u + i
            if np.isfinite(problem.u_max[i]):
                add(I_m[r], problem.u_max[i], np.zeros(n_x))
            if np.isfinite(problem.u_min[i]):
                add(-I_m[r], -problem.u_min[i], np.zeros(n_x))
    for k in range(N):
        for i in range(n_x):
            r = k * n_x + i
            if np.isfinite(problem.x_max[i]):
                add(Su[r], problem.x_max[i], -Sx[r])
            if np.isfinite(problem.x_min[i]):
                add(-Su[r], -problem.x_min[i], Sx[r])
    for row in problem.extra_rows:
        c_x = np.asarray(row.c_x, dtype=float).ravel()
        c_u = np.asarray(row.c_u, dtype=float).ravel()
        for k in range(N):
            g = np.zeros(m)
            g[k * n_u:(k + 1) * n_u] += c_u
            if k == 0:
                e = -c_x
            else:
                blk = slice((k - 1) * n_x, k * n_x)
                g += c_x @ Su[blk]
                e = -c_x @ Sx[blk]
            add(g, float(row.d), e)

    G = np.array(G_rows).reshape(-1, m)
    w = np.array(w_rows, dtype=float)
    E = np.array(E_rows).reshape(-1, n_x)

    L = np.linalg.cholesky(H)
    Linv = np.linalg.inv(L)
    Hinv = Linv.T @ Linv
    Hinv = 0.5 * (Hinv + Hinv.T)
    Hinv_Ft = Hinv @ F.T
    S = E + G @ Hinv_Ft
    HG = Hinv @ G.T
    return CondensedQp(
        H=H, F=F, G=G, w=w, E=E, S=S, Hinv_Ft=Hinv_Ft,
        n_x=n_x, n_u=n_u, N_p=N, Sx=Sx, Su=Su, Hinv=Hinv, HG=HG, GHG=G @ HG,
    )


def rollout_cost(problem: MpcProblem, U, x0) -> float:
    """Cost of an input sequence by direct simulation."""
    U = np.asarray(U, dtype=float).reshape(problem.N_p, problem.n_u)
    x = np.asarray(x0, dtype=float)
    J = 0.0
    for u in U:
        J += x @ problem.Q @ x + u @ problem.R @ u
        x = problem.A @ x + problem.B @ u
    return float(J + x @ problem.P @ x)


def rollout_feasible(problem: MpcProblem, U, x0, tol: float = 0.0) -> bool:
    """Whether an input sequence respects every constraint, by simulation."""
    U = np.asarray(U, dtype=float).reshape(problem.N_p, problem.n_u)
    x = np.asarray(x0, dtype=float)
    for u in U:
        if np.any(u > problem.u_max + tol) or np.any(u < problem.u_min - tol):
            return False
        for row in problem.extra_rows:
            if row.c_x @ x + row.c_u @ u > row.d + tol:
                return False
        x = problem.A @ x + problem.B @ u
        if np.any(x > problem.x_max + tol) or np.any(x < problem.x_min - tol):
            return False
    return True


def solve_dare(A, B, Q, R, tol: float = 1e-10, max_iter: int = 100_000) -> np.ndarray:
    """Stabilizing solution of the discrete algebraic Riccati equation.

    Plain Riccati value iteration from ``P = Q``.  Raises ``RuntimeError``
    when the fixed-point residual does not drop below ``tol`` within
    ``max_iter`` steps.
    """
    A, B, Q, R = (np.atleast_2d(np.asarray(M, dtype=float)) for M in (A, B, Q, R))

    def step(P):
        PB = P @ B
        K = np.linalg.solve(R + B.T @ PB, PB.T @ A)
        Pn = A.T @ P @ A - A.T @ PB @ K + Q
        return 0.5 * (Pn + Pn.T)

    P = Q.copy()
    for _ in range(max_iter):
        Pn = step(P)
        if np.max(np.abs(Pn - P)) <= 0.1 * tol:
            if np.max(np.abs(step(Pn) - Pn)) <= tol:
                return Pn
        P = Pn
    raise RuntimeError(f"Riccati iteration did not converge in {max_iter} steps")


def lqr_gain(A, B, Q, R, P=None) -> np.ndarray:
    """``K`` with ``u = -K x`` for terminal weight ``P`` (DARE solution by default)."""
    if P is None:
        P = solve_dare(A, B, Q, R)
    return np.linalg.solve(R + B.T @ P @ B, B.T @ P @ A)


def expm(M) -> np.ndarray:
    """Matrix exponential by scaling and squaring of a truncated Taylor series."""
    M = np.atleast_2d(np.asarray(M, dtype=float))
    norm = np.max(np.sum(np.abs(M), axis=1)) if M.size else 0.0
    s = max(0, int(np.ceil(np.log2(norm / 0.5)))) if norm > 0.5 else 0
    X = M / 2.0**s
    E = np.eye(M.shape[0])
    term = np.eye(M.shape[0])
    for k in range(1, 40):
        term = term @ X / k
        E = E + term
        if np.max(np.abs(term)) <= 1e-18 * max(1.0, np.max(np.abs(E))):
            break
    for _ in range(s):
        E = E @ E
    return E


def discretize_zoh(A_c, B_c, Ts: float):
    """Zero-order-hold discretization via the augmented matrix exponential."""
    if Ts <= 0:
        raise ProblemError("sampling time must be positive")
    A_c = np.atleast_2d(np.asarray(A_c, dtype=float))
    B_c = np.asarray(B_c, dtype=float)
    if B_c.ndim == 1:
        B_c = B_c.reshape(-1, 1)
    n, m = B_c.shape
    if A_c.shape != (n, n):
        raise ProblemError("A_c and B_c dimensions disagree")
    aug = np.zeros((n + m, n + m))
    aug[:n, :n] = A_c
    aug[:n, n:] = B_c
    Md = expm(aug * Ts)
    return Md[:n, :n], Md[:n, n:]


def companion_form(den) -> tuple[np.ndarray, np.ndarray]:
    """Controllable canonical realization of ``1 / den(s)`` (leading coefficient first)."""
    den = np.asarray(den, dtype=float)
    den = den / den[0]
    n = den.size - 1
    A = np.zeros((n, n))
    A[0] = -den[1:]
    A[1:, :-1] = np.eye(n - 1)
    B = np.zeros((n, 1))
    B[0, 0] = 1.0
    return A, B


def _bound(v, n, sign):
    if v is None:
        return np.full(n, sign * np.inf)
    return np.array([sign * np.inf if e is None else float(e) for e in np.atleast_1d(v)])


def problem_from_dict(d: dict) -> MpcProblem:
    """Build an :class:`MpcProblem` from the JSON problem document.

    ``null`` entries in bound vectors mean "unbounded".  ``"P": "dare"``
    selects the Riccati terminal weight.  A ``"continuous"`` block with
    ``A_c``/``B_c`` plus ``"Ts"`` replaces ``A``/``B`` by their ZOH
    discretization.
    """
    if "continuous" in d and d["continuous"]:
        A, B = discretize_zoh(d["continuous"]["A_c"], d["continuous"]["B_c"], float(d["Ts"]))
    else:
        A = np.atleast_2d(np.asarray(d["A"], dtype=float))
        B = np.atleast_2d(np.asarray(d["B"], dtype=float))
        if B.shape[0] != A.shape[0] and B.shape[1] == A.shape[0]:
            B = B.T
    n_x, n_u = B.shape
    Q = np.atleast_2d(np.asarray(d["Q"], dtype=float))
    R = np.atleast_2d(np.asarray(d["R"], dtype=float))
    P = d.get("P", "dare")
    if isinstance(P, str):
        if P != "dare":
            raise ProblemError(f"unknown terminal weight spec {P!r}")
        P = solve_dare(A, B, Q, R)
    extra = tuple(
        ExtraRow(np.asarray(r["c_x"], dtype=float), np.asarray(r["c_u"], dtype=float), float(r["d"]))
        for r in d.get("extra_rows", [])
    )
    dom = d.get("domain")
    return MpcProblem(
        A=A, B=B, Q=Q, R=R, P=P, N_p=int(d["N_p"]),
        x_min=_bound(d.get("x_min"), n_x, -1), x_max=_bound(d.get("x_max"), n_x, 1),
        u_min=_bound(d.get("u_min"), n_u, -1), u_max=_bound(d.get("u_max"), n_u, 1),
        extra_rows=extra,
        domain_lo=None if dom is None else dom["lo"],
        domain_hi=None if dom is None else dom["hi"],
        name=d.get("name", ""),
    )


def problem_to_dict(problem: MpcProblem) -> dict:
    def bnd(v):
        return [None if not np.isfinite(e) else float(e) for e in v]

    d = {
        "name": problem.name,
        "A": problem.A.tolist(), "B": problem.B.tolist(),
        "Q": problem.Q.tolist(), "R": problem.R.tolist(), "P": problem.P.tolist(),
        "N_p": int(problem.N_p),
        "x_min": bnd(problem.x_min), "x_max": bnd(problem.x_max),
        "u_min": bnd(problem.u_min), "u_max": bnd(problem.u_max),
    }
    if problem.extra_rows:
        d["extra_rows"] = [
            {"c_x": r.c_x.tolist(), "c_u": r.c_u.tolist(), "d": r.d} for r in problem.extra_rows
        ]
    if problem.domain is not None:
        d["domain"] = problem.domain.to_dict()
    return d


def load_problem(path) -> MpcProblem:
    return problem_from_dict(json.loads(Path(path).read_text()))
