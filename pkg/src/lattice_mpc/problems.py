"""Benchmark MPC problems and the one-dimensional PWA fixture."""
from __future__ import annotations

from math import comb
from pathlib import Path

import numpy as np

from .model import (
    Box,
    MpcProblem,
    companion_form,
    discretize_zoh,
    load_problem,
    problem_from_dict,
    solve_dare,
)


def double_integrator(N_p: int = 2, Ts: float = 0.3, half_ts2: bool = False,
                      x2_bound: float = 0.5) -> MpcProblem:
    """Double integrator with |u| <= 1, |x2| <= x2_bound and a DARE terminal weight.

    ``half_ts2`` switches the input column from ``[Ts^2; Ts]`` to the
    textbook ``[Ts^2/2; Ts]``.
    """
    A = np.array([[1.0, Ts], [0.0, 1.0]])
    B = np.array([[Ts**2 / 2 if half_ts2 else Ts**2], [Ts]])
    Q = np.diag([1.0, 0.0])
    R = np.eye(1)
    P = solve_dare(A, B, Q, R)
    return MpcProblem(
        A=A, B=B, Q=Q, R=R, P=P, N_p=N_p,
        x_min=[-np.inf, -x2_bound], x_max=[np.inf, x2_bound], u_min=[-1.0], u_max=[1.0],
        domain_lo=[-1.0, -1.0], domain_hi=[1.0, 1.0],
        name=f"double_integrator_N{N_p}",
    )


PENDULUM_A = np.array([
    [1.0, 0.1, 0.0, 0.0],
    [0.0, 0.9818, 0.2673, 0.0],
    [0.0, 0.0, 1.0, 0.1],
    [0.0, -0.0455, 3.1182, 1.0],
])
PENDULUM_B = np.array([[0.0], [0.1818], [0.0], [0.4546]])
PENDULUM_DOMAIN = Box([-0.6, -0.9, -0.21, -0.6], [0.6, 0.9, 0.21, 0.6])


def inverted_pendulum(N_p: int = 10) -> MpcProblem:
    xb = np.array([1.0, 1.5, 0.35, 1.0])
    return MpcProblem(
        A=PENDULUM_A, B=PENDULUM_B, Q=2.0 * np.eye(4), R=np.eye(1), P=np.zeros((4, 4)),
        N_p=N_p, x_min=-xb, x_max=xb, u_min=[-1.0], u_max=[1.0],
        domain_lo=PENDULUM_DOMAIN.lo, domain_hi=PENDULUM_DOMAIN.hi,
        name="inverted_pendulum",
    )


def chain_model(order: int = 10, Ts: float = 1.0, continuous_states: bool = False):
    """State-space model of ``1/(s+1)^order`` sampled with zero-order hold.

    By default the transfer function is discretized first and then put
    in controllable canonical form, whose ``(A, B)`` depend only on the
    discrete denominator ``(z - exp(-Ts))^order``.  With
    ``continuous_states`` the continuous companion realization is
    discretized instead (same poles, different coordinates).
    """
    if continuous_states:
        den = [comb(order, k) for k in range(order + 1)]
        A_c, B_c = companion_form(den)
        return discretize_zoh(A_c, B_c, Ts)
    p = np.exp(-Ts)
    den = [comb(order, k) * (-p) ** k for k in range(order + 1)]
    return companion_form(den)


def chain10(N_p: int = 10, continuous_states: bool = False) -> MpcProblem:
    A, B = chain_model(10, 1.0, continuous_states)
    n = A.shape[0]
    return MpcProblem(
        A=A, B=B, Q=np.eye(n), R=np.eye(1), P=np.eye(n), N_p=N_p,
        x_min=-10.0 * np.ones(n), x_max=10.0 * np.ones(n), u_min=[-1.0], u_max=[1.0],
        domain_lo=-2.0 * np.ones(n), domain_hi=2.0 * np.ones(n),
        name=f"chain10_N{N_p}",
    )


# One-dimensional continuous PWA function on [0, 5]: (slope, offset, lo, hi)
EXAMPLE1_PIECES = [
    (0.5, 0.5, 0.0, 1.0),
    (2.0, -1.0, 1.0, 1.5),
    (0.0, 2.0, 1.5, 3.5),
    (-2.0, 9.0, 3.5, 4.0),
    (-0.5, 3.0, 4.0, 5.0),
]
EXAMPLE1_DOMAIN = Box([0.0], [5.0])
EXAMPLE1_SAMPLES = [0.5, 2.4, 3.75, 4.5]


def example1_value(x) -> float:
    x = float(np.ravel(x)[0])
    for a, b, lo, hi in EXAMPLE1_PIECES:
        if lo <= x <= hi:
            return a * x + b
    raise ValueError(f"{x} outside [0, 5]")


BUILTINS = {
    "double_integrator": double_integrator,
    "inverted_pendulum": inverted_pendulum,
    "chain10": chain10,
}


def resolve_problem(spec) -> MpcProblem:
    """Problem from a built-in name, a JSON path, or a dict.

    A dict with a ``"builtin"`` key passes its remaining entries as
    keyword arguments to the named constructor; any other dict is read
    as a problem document.
    """
    if isinstance(spec, MpcProblem):
        return spec
    if isinstance(spec, dict):
        if "builtin" in spec:
            kw = {k: v for k, v in spec.items() if k != "builtin"}
            return BUILTINS[spec["builtin"]](**kw)
        return problem_from_dict(spec)
    if spec in BUILTINS:
        return BUILTINS[spec]()
    if Path(spec).exists():
        return load_problem(spec)
    raise ValueError(f"unknown problem {spec!r}: not a built-in name or an existing file")
