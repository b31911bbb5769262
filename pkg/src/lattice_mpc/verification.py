"""Equivalence checks between the two lattice forms and the optimal law."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .lattice import LatticeForm, evaluate_many
from .model import Box
from .solvers import solve_lp

TOL_EQ = 1e-9
LP_TOL = 1e-9
MAX_WITNESSES = 1000


@dataclass
class LpWitness:
    x: list[float]
    term_c: int
    term_d: int
    anchor_c: int | None
    anchor_d: int | None
    objective: float


@dataclass
class VerificationReport:
    lp_pairs_checked: int = 0
    lp_min_objective: float = math.inf
    lp_witnesses: list[LpWitness] = field(default_factory=list)
    sandwich_points: int = 0
    sandwich_skipped: int = 0
    sandwich_max_lower_violation: float = -math.inf
    sandwich_max_upper_violation: float = -math.inf
    epsilon_hat: float = -math.inf

    def merge(self, other: "VerificationReport") -> "VerificationReport":
        # fields filled by lp_scan and sandwich_check are disjoint
        out = VerificationReport(**{k: getattr(self, k) for k in self.__dataclass_fields__})
        for k in other.__dataclass_fields__:
            v = getattr(other, k)
            if v != getattr(VerificationReport(), k):
                setattr(out, k, v)
        return out

    def to_dict(self):
        return asdict(self)


@dataclass
class ValidationReport:
    N_v: int
    epsilon: float
    I_bar: float
    confidence: float
    mismatches: list[list[float]]
    n_mismatch: int
    seed: int
    max_abs_diff: float

    def to_dict(self):
        return asdict(self)


def hoeffding_confidence(N_v: int, epsilon: float) -> float:
    return 1.0 - 2.0 * math.exp(-2.0 * N_v * epsilon**2)


def pair_lp(form_c: LatticeForm, form_d: LatticeForm, i: int, k: int, domain: Box):
    """Minimize ``max_{j in C_i} u_j(x) - min_{j in D_k} u_j(x)`` over the box, as an LP."""
    n = form_c.n_x
    a, b = form_c._a, form_c._b
    rows, rhs = [], []
    for j in form_c.terms[i]:
        rows.append(np.concatenate([a[j], [-1.0, 0.0]]))
        rhs.append(-b[j])
    for j in form_d.terms[k]:
        rows.append(np.concatenate([-a[j], [0.0, -1.0]]))
        rhs.append(b[j])
    c = np.zeros(n + 2)
    c[n:] = 1.0
    bounds = list(zip(domain.lo, domain.hi)) + [(None, None), (None, None)]
    return solve_lp(c, np.array(rows), np.array(rhs), bounds)


def lp_scan(form_c: LatticeForm, form_d: LatticeForm, domain: Box, tol: float = LP_TOL) -> VerificationReport:
    """Necessary-condition scan over every (conjunctive term, disjunctive term) pair."""
    if len(form_c.literals) != len(form_d.literals) or not (
        np.array_equal(form_c._a, form_d._a) and np.array_equal(form_c._b, form_d._b)
    ):
        raise ValueError("both forms must share one literal pool")
    rep = VerificationReport()
    for i in range(len(form_c.terms)):
        for k in range(len(form_d.terms)):
            sol = pair_lp(form_c, form_d, i, k, domain)
            rep.lp_pairs_checked += 1
            if sol.status != "optimal":
                raise RuntimeError(f"LP for pair ({i}, {k}) returned {sol.status}")
            rep.lp_min_objective = min(rep.lp_min_objective, sol.objective)
            if sol.objective < -tol:
                rep.lp_witnesses.append(LpWitness(
                    x=sol.x_opt[:form_c.n_x].tolist(), term_c=i, term_d=k,
                    anchor_c=None if form_c.anchor is None else form_c.anchor[i],
                    anchor_d=None if form_d.anchor is None else form_d.anchor[k],
                    objective=sol.objective,
                ))
    return rep


def hoeffding_validate(form_d: LatticeForm, form_c: LatticeForm, domain: Box, N_v: int,
                       epsilon: float, seed: int = 0, tol_eq: float = TOL_EQ,
                       chunk: int = 100_000) -> ValidationReport:
    """Compare the two forms at ``N_v`` i.i.d. uniform points of ``domain``."""
    if N_v < 1 or epsilon <= 0:
        raise ValueError("need N_v >= 1 and epsilon > 0")
    rng = np.random.Generator(np.random.Philox(seed))
    mism, n_bad, worst = [], 0, 0.0
    done = 0
    while done < N_v:
        n = min(chunk, N_v - done)
        X = domain.uniform(rng, n)
        diff = np.abs(evaluate_many(form_d, X) - evaluate_many(form_c, X))
        bad = np.flatnonzero(diff > tol_eq)
        n_bad += bad.size
        if diff.size:
            worst = max(worst, float(diff.max()))
        for j in bad[: max(0, MAX_WITNESSES - len(mism))]:
            mism.append(X[j].tolist())
        done += n
    return ValidationReport(
        N_v=N_v, epsilon=epsilon, I_bar=(N_v - n_bad) / N_v,
        confidence=hoeffding_confidence(N_v, epsilon), mismatches=mism, n_mismatch=n_bad,
        seed=seed, max_abs_diff=worst,
    )


def sandwich_check(form_d: LatticeForm, form_c: LatticeForm, oracle, domain: Box, n_points: int,
                   seed: int = 0, max_draw_factor: int = 200) -> VerificationReport:
    """Check ``f_d <= u* <= f_c`` at ``n_points`` random feasible states.

    ``oracle.value(x)`` supplies the optimal input (``None`` when the
    state is infeasible; such draws are skipped and counted).
    """
    rng = np.random.Generator(np.random.Philox(seed))
    X, U = [], []
    skipped = 0
    while len(X) < n_points and skipped <= max_draw_factor * n_points:
        for x in domain.uniform(rng, n_points - len(X)):
            u = oracle.value(x)
            if u is None:
                skipped += 1
                continue
            X.append(x)
            U.append(u)
    rep = VerificationReport(sandwich_points=len(X), sandwich_skipped=skipped)
    if not X:
        return rep
    X = np.array(X)
    U = np.array(U)
    fd = evaluate_many(form_d, X)
    fc = evaluate_many(form_c, X)
    rep.sandwich_max_lower_violation = float(np.max(fd - U))
    rep.sandwich_max_upper_violation = float(np.max(U - fc))
    rep.epsilon_hat = float(np.max(fc - fd))
    return rep
