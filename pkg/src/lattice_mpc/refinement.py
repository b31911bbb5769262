"""Pairwise sample-consistency check and line-segment re-sampling.

For every ordered pair of samples (i, k) the disjunctive term of i must
not overestimate the law at x_k, and the conjunctive term of i must not
underestimate it.  Violations are repaired by recursively bisecting the
segment between the two samples until every pair of neighbouring
segment points is connected by crossing affine laws.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .lattice import CONJUNCTIVE, DISJUNCTIVE
from .sampling import (
    TIE_TOL,
    SampleDataset,
    SamplePoint,
    _interior,
    dedup_law,
    perturb_to_interior,
    settle,
)

log = logging.getLogger(__name__)

TOL_VIOLATION = 1e-7
DEPTH_CAP = 40
MAX_ROUNDS = 50


class RefinementError(RuntimeError):
    def __init__(self, msg, residual=None, dataset=None):
        super().__init__(msg)
        self.residual = residual or []
        self.dataset = dataset


@dataclass(frozen=True)
class ViolationRecord:
    i: int
    k: int
    kind: str
    gap: float


def _masks(V, own, u, kind):
    tol = TIE_TOL * np.maximum(1.0, np.abs(u))
    if kind == DISJUNCTIVE:
        mask = V > (u + tol)[:, None]
    else:
        mask = V < (u - tol)[:, None]
    mask[np.arange(V.shape[0]), own] = True
    return mask


def check_assumption(ds: SampleDataset, tol: float = TOL_VIOLATION) -> list[ViolationRecord]:
    """All (owner, point) pairs violating the sample-consistency inequalities.

    Samples sharing an index set produce identical inequalities, so only
    the first owner of each distinct set is reported.
    """
    if len(ds) == 0:
        return []
    V = ds.literal_values()
    own = ds.law_idx
    u = V[np.arange(len(ds)), own]
    out = []
    for kind in (DISJUNCTIVE, CONJUNCTIVE):
        mask = _masks(V, own, u, kind)
        _, first = np.unique(mask, axis=0, return_index=True)
        for i in sorted(first):
            row = mask[i]
            if kind == DISJUNCTIVE:
                ext = V[:, row].min(axis=1)
                gap = ext - u
            else:
                ext = V[:, row].max(axis=1)
                gap = u - ext
            for k in np.flatnonzero(gap > tol):
                out.append(ViolationRecord(int(i), int(k), kind, float(gap[k])))
    return out


def _pair_gap(ds, i, k, kind):
    V = ds.literal_values(np.vstack([ds.points[i].x, ds.points[k].x]))
    ui = V[0, ds.points[i].law_index]
    uk = V[1, ds.points[k].law_index]
    tol = TIE_TOL * max(1.0, abs(ui))
    if kind == DISJUNCTIVE:
        row = V[0] > ui + tol
        row[ds.points[i].law_index] = True
        return V[1, row].min() - uk
    row = V[0] < ui - tol
    row[ds.points[i].law_index] = True
    return uk - V[1, row].max()


def _sign(t, scale):
    return 0 if abs(t) <= TIE_TOL * max(1.0, abs(scale)) else (1 if t > 0 else -1)


def _find_point(ds, x, tol=1e-12):
    for idx, p in enumerate(ds.points):
        if np.max(np.abs(p.x - x)) <= tol:
            return idx
    return None


def refine_segment(ds: SampleDataset, oracle, x_a, x_b, rng=None, depth_cap: int = DEPTH_CAP,
                   source: str = "resampled") -> list[SamplePoint]:
    """Bisect the segment from ``x_a`` to ``x_b`` until neighbouring laws cross.

    Mutates ``ds`` (new points and literals are appended) and returns the
    points added.  Midpoints on a unique-order boundary are displaced by
    at most ``1e-7 |x_b - x_a|``.
    """
    rng = np.random.Generator(np.random.Philox(0)) if rng is None else rng
    x_a = np.asarray(x_a, dtype=float)
    x_b = np.asarray(x_b, dtype=float)
    length = float(np.linalg.norm(x_b - x_a))
    if length == 0.0:
        return []
    delta = 1e-7 * length

    def endpoint(x):
        idx = _find_point(ds, x)
        if idx is not None:
            return ds.points[idx].law_index
        res = oracle(x)
        if res is None:
            raise RefinementError(f"segment endpoint {x.tolist()} is infeasible")
        return dedup_law(ds.literals, res.law)

    seg = [(0.0, x_a, endpoint(x_a), 0), (1.0, x_b, endpoint(x_b), 0)]
    added: list[SamplePoint] = []
    i = 0
    while i < len(seg) - 1:
        t0, x0, l0, d0 = seg[i]
        t1, x1, l1, d1 = seg[i + 1]
        if l0 == l1 or max(d0, d1) >= depth_cap:
            if l0 != l1:
                log.warning("segment bisection hit depth cap %d", depth_cap)
            i += 1
            continue
        f0, f1 = ds.literals[l0], ds.literals[l1]
        s0 = _sign(f0(x0) - f1(x0), f0(x0))
        s1 = _sign(f0(x1) - f1(x1), f0(x1))
        if s0 == 0 or s1 == 0 or s0 != s1:
            i += 1
            continue
        tm = 0.5 * (t0 + t1)
        xm = x_a + tm * (x_b - x_a)
        known = _find_point(ds, xm)
        if known is not None:
            seg.insert(i + 1, (tm, ds.points[known].x, ds.points[known].law_index, max(d0, d1) + 1))
            continue
        res = oracle(xm)
        if res is None:
            log.warning("midpoint %s infeasible; aborting segment", xm.tolist())
            return added
        if not _interior(res, xm, ds.literals):
            out = perturb_to_interior(oracle, xm, ds.literals, ds.domain, delta, rng)
            if out is None:
                log.warning("could not perturb midpoint %s off a boundary", xm.tolist())
                return added
            xm, res = out
        li = dedup_law(ds.literals, res.law)
        pt = SamplePoint(np.asarray(xm, dtype=float), li, res.u, source)
        ds.points.append(pt)
        added.append(pt)
        seg.insert(i + 1, (tm, pt.x, li, max(d0, d1) + 1))
    return added


def refine_until_valid(ds: SampleDataset, oracle, max_rounds: int = MAX_ROUNDS, seed: int = 0,
                       tol: float = TOL_VIOLATION) -> SampleDataset:
    """Re-sample until :func:`check_assumption` reports nothing.

    Returns an enlarged copy of ``ds``; raises :class:`RefinementError`
    with the residual violations if ``max_rounds`` is exhausted.
    """
    ds = ds.copy()
    rng = np.random.Generator(np.random.Philox(seed))
    viol = check_assumption(ds, tol)
    for _ in range(max_rounds):
        if not viol:
            return ds
        n_before = len(ds)
        done = set()
        for v in sorted(viol, key=lambda r: -r.gap):
            if (v.i, v.k) in done or (v.k, v.i) in done:
                continue
            if _pair_gap(ds, v.i, v.k, v.kind) <= tol:
                continue
            done.add((v.i, v.k))
            refine_segment(ds, oracle, ds.points[v.i].x, ds.points[v.k].x, rng)
        settle(ds, oracle, rng)
        viol = check_assumption(ds, tol)
        if len(ds) == n_before and viol:
            break
    if viol:
        raise RefinementError(f"{len(viol)} violations remain after re-sampling",
                              residual=viol, dataset=ds)
    return ds


def lemma16_repair(ds: SampleDataset, oracle, x_gamma, i: int, k: int, rng=None,
                   tol: float = TOL_VIOLATION) -> SampleDataset:
    """Repair a negative necessary-condition pair found at witness ``x_gamma``.

    ``i`` owns the conjunctive term and ``k`` the disjunctive term of the
    pair.  Whichever of the two terms is wrong at the witness (the
    conjunctive one underestimating, or the disjunctive one
    overestimating the optimal input) has its segment to the witness
    re-sampled.  Returns a new dataset.
    """
    rng = np.random.Generator(np.random.Philox(1)) if rng is None else rng
    x_gamma = np.asarray(x_gamma, dtype=float)
    V = ds.literal_values(np.vstack([ds.points[i].x, ds.points[k].x, x_gamma]))
    ui = V[0, ds.points[i].law_index]
    uk = V[1, ds.points[k].law_index]
    conj = V[0] < ui - TIE_TOL * max(1.0, abs(ui))
    conj[ds.points[i].law_index] = True
    disj = V[1] > uk + TIE_TOL * max(1.0, abs(uk))
    disj[ds.points[k].law_index] = True
    hi_c = V[2, conj].max()
    lo_d = V[2, disj].min()
    if hi_c - lo_d >= -tol:
        return ds

    res = oracle(x_gamma)
    if res is None:
        raise RefinementError(f"witness {x_gamma.tolist()} is infeasible for the QP")
    u_star = res.u
    conj_low = hi_c < u_star - tol
    disj_high = lo_d > u_star + tol
    if not (conj_low or disj_high):
        raise RefinementError("witness satisfies both term bounds; tolerance misconfiguration")

    ds = ds.copy()
    if not _interior(res, x_gamma, ds.literals):
        out = perturb_to_interior(oracle, x_gamma, ds.literals, ds.domain, ds.perturb_scale, rng)
        if out is not None:
            x_gamma, res = out
    li = dedup_law(ds.literals, res.law)
    ds.points.append(SamplePoint(x_gamma, li, res.u, "witness"))
    if conj_low:
        refine_segment(ds, oracle, ds.points[i].x, x_gamma, rng)
    if disj_high:
        refine_segment(ds, oracle, ds.points[k].x, x_gamma, rng)
    settle(ds, oracle, rng)
    return ds
