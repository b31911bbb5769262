"""Closed-loop simulation and evaluation-latency benchmarks."""
from __future__ import annotations

import csv
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .lattice import CONJUNCTIVE, LatticeForm, evaluate
from .model import Box, CondensedQp, MpcProblem, condense
from .solvers import solve_qp

LATTICE_D = "lattice_d"
LATTICE_C = "lattice_c"
ONLINE_QP = "online_qp"
TAGS = (LATTICE_D, LATTICE_C, ONLINE_QP)


@dataclass
class Trajectory:
    states: list[np.ndarray]
    inputs: list[float]
    costs: list[float]
    controller_tag: str
    truncated: bool = False

    def __post_init__(self):
        if self.controller_tag not in TAGS:
            raise ValueError(f"unknown controller tag {self.controller_tag!r}")

    def __len__(self):
        return len(self.inputs)

    @property
    def X(self) -> np.ndarray:
        return np.array(self.states)

    def dynamics_residual(self, A, B) -> float:
        """``max_k ||x_{k+1} - A x_k - B u_k||_inf`` (0 for an empty trajectory)."""
        A = np.asarray(A, dtype=float)
        b = np.asarray(B, dtype=float).reshape(A.shape[0], -1)[:, 0]
        r = 0.0
        for k, u in enumerate(self.inputs):
            r = max(r, float(np.max(np.abs(self.states[k + 1] - A @ self.states[k] - b * u))))
        return r

    def to_csv(self, path):
        """Write rows ``k, x_1..x_n, u, cost``; the final state has empty ``u``."""
        n = len(self.states[0])
        with open(Path(path), "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["k"] + [f"x_{i + 1}" for i in range(n)] + ["u", "cost"])
            for k, x in enumerate(self.states):
                u = repr(self.inputs[k]) if k < len(self.inputs) else ""
                c = repr(self.costs[k]) if k < len(self.costs) else ""
                w.writerow([k] + [repr(float(v)) for v in x] + [u, c])


def _tag(controller) -> str:
    if isinstance(controller, LatticeForm):
        return LATTICE_C if controller.kind == CONJUNCTIVE else LATTICE_D
    if controller == ONLINE_QP:
        return ONLINE_QP
    raise ValueError("controller must be a LatticeForm or 'online_qp'")


def simulate(problem: MpcProblem, controller, x0, steps: int, qp: CondensedQp | None = None) -> Trajectory:
    """Roll ``x+ = A x + B u(x)`` for ``steps`` steps.

    ``controller`` is a lattice form or the string ``"online_qp"``.  The
    controller output is applied as is.  The MPC problem is solved at
    every visited state; if it is infeasible the trajectory stops there
    and is flagged as truncated.  ``costs[k]`` is the stage cost at step
    ``k``.
    """
    tag = _tag(controller)
    qp = condense(problem) if qp is None else qp
    A = problem.A
    b = problem.B[:, 0]
    Q, R = problem.Q, float(problem.R[0, 0])
    x = np.asarray(x0, dtype=float).copy()
    states, inputs, costs = [x], [], []
    truncated = False
    for _ in range(steps):
        sol = solve_qp(qp, x)
        if not sol.optimal:
            truncated = True
            break
        if tag == ONLINE_QP:
            u = float(qp.inputs_from_z(sol.z_star, x)[0])
        else:
            u = float(evaluate(controller, x))
        inputs.append(u)
        costs.append(float(x @ Q @ x + R * u * u))
        x = A @ x + b * u
        states.append(x)
    return Trajectory(states, inputs, costs, tag, truncated)


@dataclass
class BenchStats:
    n_evals: int
    mean_ns: float
    median_ns: float
    p99_ns: float
    qp_mean_ns: float | None = None
    qp_median_ns: float | None = None
    qp_p99_ns: float | None = None
    speedup: float | None = None
    extra: dict = field(default_factory=dict)

    def to_dict(self):
        return asdict(self)


def _stats(ns):
    ns = np.asarray(ns, dtype=float)
    return float(ns.mean()), float(np.median(ns)), float(np.percentile(ns, 99))


def bench_eval(form: LatticeForm, n_evals: int, seed: int = 0, domain: Box | None = None,
               qp: CondensedQp | None = None) -> BenchStats:
    """Per-call latency of :func:`evaluate` at uniform random points.

    With ``qp`` given, the online QP is timed on the same points and the
    ratio of mean times is reported as ``speedup``.  The domain defaults
    to the unit box.
    """
    if domain is None:
        domain = Box(-np.ones(form.n_x), np.ones(form.n_x))
    rng = np.random.Generator(np.random.Philox(seed))
    X = domain.uniform(rng, n_evals)
    clock = time.perf_counter_ns
    lat = np.empty(n_evals)
    for j, x in enumerate(X):
        t0 = clock()
        evaluate(form, x)
        lat[j] = clock() - t0
    mean, med, p99 = _stats(lat)
    out = BenchStats(n_evals, mean, med, p99)
    if qp is not None:
        q = np.empty(n_evals)
        for j, x in enumerate(X):
            t0 = clock()
            solve_qp(qp, x)
            q[j] = clock() - t0
        out.qp_mean_ns, out.qp_median_ns, out.qp_p99_ns = _stats(q)
        out.speedup = out.qp_mean_ns / mean
    return out
