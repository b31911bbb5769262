"""Sampling of the explicit MPC law: states paired with local affine laws.

Every stored sample lies strictly inside a unique-order region of the
sampled literals, i.e. no two distinct sampled affine laws take the same
value there.  Points violating that (or sitting on a critical-region
boundary, detected through weakly active constraints or a rank-deficient
active set) are nudged by a small random displacement and re-solved.
"""
from __future__ import annotations

import json
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .model import Box, CondensedQp
from .solvers import QpSolution, independent_rows, solve_qp

log = logging.getLogger(__name__)

DEDUP_TOL = 1e-6
TIE_TOL = 1e-9
MAX_PERTURB = 10


@dataclass(eq=False)
class AffineLaw:
    """``u(x) = a'x + b``, optionally with the full input-sequence map ``U(x) = K x + k``."""

    a: np.ndarray
    b: float
    full_K: np.ndarray | None = None
    k: np.ndarray | None = None
    origin_active_set: tuple[int, ...] = ()

    def __post_init__(self):
        self.a = np.asarray(self.a, dtype=float).ravel()
        self.b = float(self.b)

    def __call__(self, x) -> float:
        return float(self.a @ np.asarray(x, dtype=float) + self.b)

    def distance(self, other: "AffineLaw") -> float:
        return float(np.max(np.abs(self.a - other.a)) + abs(self.b - other.b))

    def to_dict(self):
        return {"a": self.a.tolist(), "b": self.b, "active_set": list(self.origin_active_set)}

    @classmethod
    def from_dict(cls, d):
        return cls(d["a"], d["b"], origin_active_set=tuple(d.get("active_set", ())))


@dataclass(eq=False)
class SamplePoint:
    x: np.ndarray
    law_index: int
    u_value: float
    source: str = "grid"

    def to_dict(self):
        return {"x": np.asarray(self.x).tolist(), "law": self.law_index, "u": self.u_value,
                "source": self.source}


@dataclass(eq=False)
class SampleDataset:
    points: list[SamplePoint]
    literals: list[AffineLaw]
    domain: Box
    skipped: list[tuple[list[float], str]] = field(default_factory=list)
    n_perturbed: int = 0
    perturb_scale: float = 1e-3

    def __len__(self):
        return len(self.points)

    @property
    def X(self) -> np.ndarray:
        return np.array([p.x for p in self.points]).reshape(len(self.points), self.domain.dim)

    @property
    def law_idx(self) -> np.ndarray:
        return np.array([p.law_index for p in self.points], dtype=int)

    @property
    def u(self) -> np.ndarray:
        return np.array([p.u_value for p in self.points])

    def literal_matrix(self):
        a = np.array([l.a for l in self.literals]).reshape(len(self.literals), self.domain.dim)
        b = np.array([l.b for l in self.literals])
        return a, b

    def literal_values(self, X=None) -> np.ndarray:
        """All pool literals evaluated at ``X`` (defaults to the sample states)."""
        a, b = self.literal_matrix()
        X = self.X if X is None else np.atleast_2d(X)
        return X @ a.T + b

    def copy(self) -> "SampleDataset":
        return SampleDataset(
            points=[SamplePoint(p.x.copy(), p.law_index, p.u_value, p.source) for p in self.points],
            literals=list(self.literals),
            domain=self.domain,
            skipped=list(self.skipped),
            n_perturbed=self.n_perturbed,
            perturb_scale=self.perturb_scale,
        )

    def to_dict(self):
        return {
            "points": [p.to_dict() for p in self.points],
            "literals": [l.to_dict() for l in self.literals],
            "domain": self.domain.to_dict(),
            "perturb_scale": self.perturb_scale,
            "n_perturbed": self.n_perturbed,
            "skipped": [{"x": x, "reason": r} for x, r in self.skipped],
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            points=[SamplePoint(np.asarray(p["x"], dtype=float), int(p["law"]), float(p["u"]),
                                p.get("source", "grid")) for p in d["points"]],
            literals=[AffineLaw.from_dict(l) for l in d["literals"]],
            domain=Box.from_dict(d["domain"]),
            skipped=[(s["x"], s["reason"]) for s in d.get("skipped", [])],
            n_perturbed=int(d.get("n_perturbed", 0)),
            perturb_scale=float(d.get("perturb_scale", 1e-3)),
        )

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_dict()))

    @classmethod
    def load(cls, path):
        return cls.from_dict(json.loads(Path(path).read_text()))


def dedup_law(pool: list[AffineLaw], candidate: AffineLaw, tol: float = DEDUP_TOL) -> int:
    """Index of ``candidate`` in ``pool``, appending it when no match exists."""
    for i, law in enumerate(pool):
        if law.distance(candidate) <= tol:
            return i
    pool.append(candidate)
    return len(pool) - 1


def extract_affine_law(qp: CondensedQp, sol: QpSolution) -> AffineLaw:
    """Local affine law ``U(x) = z*(x) - H^-1 F'x`` from an optimal active set.

    Dependent active rows are dropped first (strongly active rows take
    precedence over weakly active ones when choosing the independent
    subset).
    """
    if not sol.optimal:
        raise ValueError("cannot extract a law from a non-optimal solution")
    weak = set(sol.weakly_active)
    order = [j for j in sol.active_set if j not in weak] + [j for j in sol.active_set if j in weak]
    m, n_x = qp.m, qp.n_x
    if order:
        sub = independent_rows(qp.G[order])
        act = sorted(order[i] for i in sub)
    else:
        act = []
    if act:
        HGa = qp.HG[:, act]
        M = np.linalg.solve(qp.GHG[np.ix_(act, act)], np.hstack([qp.S[act], qp.w[act, None]]))
        Kz = HGa @ M[:, :n_x]
        kz = HGa @ M[:, n_x]
    else:
        Kz = np.zeros((m, n_x))
        kz = np.zeros(m)
    K = Kz - qp.Hinv_Ft
    return AffineLaw(a=K[0], b=kz[0], full_K=K, k=kz, origin_active_set=tuple(act))


@dataclass
class OracleResult:
    law: AffineLaw
    u: float
    boundary: bool


class QpOracle:
    """Evaluate the explicit MPC law pointwise through the condensed QP."""

    def __init__(self, qp: CondensedQp):
        self.qp = qp

    def __call__(self, x) -> OracleResult | None:
        x = np.asarray(x, dtype=float)
        sol = solve_qp(self.qp, x)
        if not sol.optimal:
            return None
        law = extract_affine_law(self.qp, sol)
        U = self.qp.inputs_from_z(sol.z_star, x)
        degenerate = len(law.origin_active_set) < len(sol.active_set)
        return OracleResult(law, float(U[0]), bool(sol.weakly_active) or degenerate)

    def value(self, x) -> float | None:
        x = np.asarray(x, dtype=float)
        sol = solve_qp(self.qp, x)
        if not sol.optimal:
            return None
        return float(self.qp.inputs_from_z(sol.z_star, x)[0])


class PwaOracle:
    """Oracle for a known 1-D continuous PWA function given as pieces ``(a, b, lo, hi)``."""

    def __init__(self, pieces, tol: float = 1e-12):
        self.pieces = [(float(a), float(b), float(lo), float(hi)) for a, b, lo, hi in pieces]
        self.tol = tol

    def __call__(self, x) -> OracleResult | None:
        t = float(np.ravel(x)[0])
        hits = [p for p in self.pieces if p[2] - self.tol <= t <= p[3] + self.tol]
        if not hits:
            return None
        a, b, _, _ = hits[0]
        return OracleResult(AffineLaw([a], b), a * t + b, len(hits) > 1)

    def value(self, x) -> float | None:
        r = self(x)
        return None if r is None else r.u


def has_tie(values: np.ndarray, own: float, tol: float = TIE_TOL) -> bool:
    """Whether two distinct literals take numerically equal values."""
    if values.size < 2:
        return False
    v = np.sort(values)
    return bool(np.any(np.diff(v) <= tol * max(1.0, abs(own))))


def _unit(rng, n):
    d = rng.standard_normal(n)
    return d / np.linalg.norm(d)


def _reflect(x, box: Box):
    x = np.where(x < box.lo, 2 * box.lo - x, x)
    return np.where(x > box.hi, 2 * box.hi - x, x)


def _interior(oracle_res: OracleResult, x, pool: list[AffineLaw]) -> bool:
    if oracle_res.boundary:
        return False
    a = np.array([l.a for l in pool] + [oracle_res.law.a])
    b = np.array([l.b for l in pool] + [oracle_res.law.b])
    vals = a @ x + b
    # the candidate law may already be in the pool: drop exact duplicates before the tie scan
    idx = [i for i, l in enumerate(pool) if l.distance(oracle_res.law) <= DEDUP_TOL]
    if idx:
        vals = vals[:-1]
    return not has_tie(vals, oracle_res.u)


def perturb_to_interior(oracle, x0, pool, domain: Box, delta: float, rng, tries: int = MAX_PERTURB):
    """Displace ``x0`` by ``delta`` in random directions until it is a UO-interior point.

    Returns ``(x, OracleResult)`` or ``None`` after ``tries`` failures.
    Displacements leaving ``domain`` are mirrored back into it.
    """
    x0 = np.asarray(x0, dtype=float)
    for _ in range(tries):
        x = _reflect(x0 + delta * _unit(rng, x0.size), domain)
        res = oracle(x)
        if res is None:
            continue
        if _interior(res, x, pool):
            return x, res
    return None


def settle(ds: SampleDataset, oracle, rng, pending=(), delta=None, tube=None) -> int:
    """Perturb samples until every one is UO-interior w.r.t. the whole pool.

    ``pending`` lists indices of points already known to need a
    perturbation (boundary solutions).  A new literal discovered while
    perturbing can create ties at earlier points, so passes repeat until
    the pool stops growing.  Returns the number of points perturbed.
    """
    delta = ds.perturb_scale if delta is None else delta
    pending = set(pending)
    moved = set()
    while True:
        n_lit = len(ds.literals)
        V = ds.literal_values() if ds.points else np.zeros((0, 0))
        drop = []
        for i, p in enumerate(ds.points):
            if i not in pending and not has_tie(V[i], p.u_value):
                continue
            out = perturb_to_interior(oracle, p.x, ds.literals, ds.domain, delta, rng)
            if out is None:
                drop.append(i)
                ds.skipped.append((np.asarray(p.x).tolist(), "perturbation failed"))
                continue
            x, res = out
            li = dedup_law(ds.literals, res.law)
            ds.points[i] = SamplePoint(x, li, res.u, p.source if p.source != "grid" else "perturbed")
            moved.add(i)
            if len(ds.literals) != n_lit:
                # refresh values so later points in this pass see the new literal
                V = ds.literal_values()
        pending.clear()
        if drop:
            for i in sorted(drop, reverse=True):
                del ds.points[i]
            moved = {j - sum(1 for d in drop if d < j) for j in moved if j not in drop}
        if len(ds.literals) == n_lit and not drop:
            break
        if len(ds.literals) == n_lit:
            # only drops happened; one more pass re-verifies with the same pool
            continue
    return len(moved)


def _solve_all(oracle, X, workers):
    if workers <= 1:
        return [oracle(x) for x in X]
    with ThreadPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(oracle, X))


def default_workers() -> int:
    return max(1, int(os.environ.get("LATTICE_MPC_THREADS", "1")))


def grid_points(domain: Box, counts) -> np.ndarray:
    counts = np.broadcast_to(np.asarray(counts, dtype=int), (domain.dim,))
    if np.any(counts < 2):
        raise ValueError("grid needs at least two points per dimension")
    axes = [np.linspace(lo, hi, c) for lo, hi, c in zip(domain.lo, domain.hi, counts)]
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=1)


def build_dataset(oracle, X, domain: Box, source: str, delta: float, seed: int = 0,
                  workers: int = 1) -> SampleDataset:
    """Solve ``oracle`` at each row of ``X`` (canonical order) and settle ties."""
    results = _solve_all(oracle, X, workers)
    ds = SampleDataset(points=[], literals=[], domain=domain, perturb_scale=delta)
    pending = []
    for x, res in zip(X, results):
        if res is None:
            ds.skipped.append((np.asarray(x).tolist(), "infeasible"))
            continue
        if res.boundary:
            pending.append(len(ds.points))
            ds.points.append(SamplePoint(np.asarray(x, dtype=float), -1, res.u, source))
            continue
        li = dedup_law(ds.literals, res.law)
        ds.points.append(SamplePoint(np.asarray(x, dtype=float), li, res.u, source))
    if not ds.literals and pending:
        # every point on a boundary: seed the pool from the first one
        res = oracle(ds.points[pending[0]].x)
        dedup_law(ds.literals, res.law)
    # placeholder law for pending points so literal_values() stays well-formed
    for i in pending:
        ds.points[i].law_index = 0
    rng = np.random.Generator(np.random.Philox(seed))
    ds.n_perturbed = settle(ds, oracle, rng, pending=pending, delta=delta)
    return ds


def sample_grid(qp_or_oracle, domain: Box, counts, seed: int = 0, workers: int | None = None,
                delta_factor: float = 1e-3) -> SampleDataset:
    """Uniform grid sampling of the control law over ``domain``."""
    oracle = as_oracle(qp_or_oracle)
    X = grid_points(domain, counts)
    counts = np.broadcast_to(np.asarray(counts, dtype=int), (domain.dim,))
    step = float(np.min(domain.width / (counts - 1)))
    workers = default_workers() if workers is None else workers
    return build_dataset(oracle, X, domain, "grid", delta_factor * step, seed, workers)


def sample_points(qp_or_oracle, domain: Box, X, seed: int = 0, delta: float | None = None,
                  source: str = "grid") -> SampleDataset:
    """Dataset from an explicit list of states."""
    oracle = as_oracle(qp_or_oracle)
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if X.shape[1] != domain.dim:
        X = X.reshape(-1, domain.dim)
    if delta is None:
        delta = 1e-3 * float(np.min(domain.width)) / 10
    return build_dataset(oracle, X, domain, source, delta, seed)


def sample_trajectories(qp: CondensedQp, A, B, domain: Box, n_init: int, steps: int, seed: int = 0,
                        x0s=None, max_draws: int = 1_000_000) -> SampleDataset:
    """Closed-loop trajectory sampling under the optimal law.

    ``n_init`` initial states are drawn uniformly from ``domain``
    (infeasible draws are redrawn); each is rolled forward ``steps``
    times or until the QP becomes infeasible.  Visited states inside the
    domain become samples; exact repeats are stored once.
    """
    oracle = QpOracle(qp)
    rng = np.random.Generator(np.random.Philox(seed))
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)
    starts = [] if x0s is None else [np.asarray(x, dtype=float) for x in x0s]
    redraws = 0
    while len(starts) < n_init:
        x = domain.uniform(rng, 1)[0]
        if oracle.value(x) is None:
            redraws += 1
            if redraws > max_draws:
                raise RuntimeError("could not draw feasible initial states")
            continue
        starts.append(x)
    X, seen = [], set()
    for x in starts:
        for _ in range(steps + 1):
            u = oracle.value(x)
            if u is None:
                break
            key = tuple(np.round(x, 12))
            if domain.contains(x) and key not in seen:
                seen.add(key)
                X.append(x)
            x = A @ x + B.ravel() * u if B.shape[1] == 1 else A @ x + B @ np.atleast_1d(u)
    delta = 1e-5 * float(np.min(domain.width))
    ds = build_dataset(oracle, np.array(X).reshape(-1, domain.dim), domain, "trajectory", delta, seed)
    ds.skipped.append(([], f"{redraws} infeasible initial draws"))
    return ds


def as_oracle(obj):
    if isinstance(obj, CondensedQp):
        return QpOracle(obj)
    return obj
