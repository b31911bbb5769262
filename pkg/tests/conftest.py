import itertools

import numpy as np
import pytest

from lattice_mpc import condense, double_integrator


def brute_force_qp(H, G, b, tol=1e-10):
    """Minimize 0.5 z'Hz s.t. Gz <= b by enumerating every active set.

    Independent of the active-set solver: each candidate set is solved
    through its KKT system and the cheapest primal/dual feasible point wins.
    """
    p, m = G.shape
    best, best_val = None, np.inf
    for r in range(0, min(p, m) + 1):
        for act in itertools.combinations(range(p), r):
            act = list(act)
            if act:
                GA = G[act]
                K = np.block([[H, GA.T], [GA, np.zeros((r, r))]])
                rhs = np.concatenate([np.zeros(m), b[act]])
                try:
                    sol = np.linalg.solve(K, rhs)
                except np.linalg.LinAlgError:
                    continue
                z, lam = sol[:m], sol[m:]
                if np.any(lam < -tol):
                    continue
            else:
                z = np.zeros(m)
            if np.all(G @ z <= b + tol * np.maximum(1, np.abs(b))):
                val = 0.5 * z @ H @ z
                if val < best_val - 1e-14:
                    best, best_val = z, val
    return best


def rollout(A, B, x0, U):
    xs = [np.asarray(x0, dtype=float)]
    for u in np.asarray(U, dtype=float).reshape(-1, B.shape[1]):
        xs.append(A @ xs[-1] + B @ u)
    return np.array(xs)


@pytest.fixture(scope="session")
def di_problem():
    # bound on x2 that reproduces the printed literals (see the decisions ledger)
    return double_integrator(N_p=2, x2_bound=0.8)


@pytest.fixture(scope="session")
def di_qp(di_problem):
    return condense(di_problem)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
