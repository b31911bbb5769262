"""Disjunctive (max-min) and conjunctive (min-max) lattice PWA forms.

A form stores a literal pool (affine laws) and a list of terms, each
term being a set of literal indices (0-based).  The disjunctive form
evaluates ``max_i min_{j in term_i} u_j(x)``, the conjunctive form
``min_i max_{j in term_i} u_j(x)``.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .sampling import TIE_TOL, AffineLaw, SampleDataset

DISJUNCTIVE = "disjunctive"
CONJUNCTIVE = "conjunctive"


@dataclass(eq=False)
class LatticeForm:
    kind: str
    literals: list[AffineLaw]
    terms: list[tuple[int, ...]]
    anchor: list[int] | None = None

    def __post_init__(self):
        if self.kind not in (DISJUNCTIVE, CONJUNCTIVE):
            raise ValueError(f"unknown lattice kind {self.kind!r}")
        self.terms = [tuple(sorted(int(j) for j in t)) for t in self.terms]
        if any(len(t) == 0 for t in self.terms):
            raise ValueError("lattice terms must be nonempty")
        n = len(self.literals)
        if any(j < 0 or j >= n for t in self.terms for j in t):
            raise ValueError("term refers to a literal outside the pool")
        a = np.array([l.a for l in self.literals], dtype=float)
        self._a = a.reshape(n, -1)
        self._b = np.array([l.b for l in self.literals], dtype=float)
        self._terms_py = [list(t) for t in self.terms]

    @property
    def n_x(self) -> int:
        return self._a.shape[1]

    @property
    def disjunctive(self) -> bool:
        return self.kind == DISJUNCTIVE

    def __call__(self, x):
        return evaluate(self, x)

    def to_dict(self):
        d = {
            "kind": self.kind,
            "literals": [{"a": l.a.tolist(), "b": l.b} for l in self.literals],
            "terms": [list(t) for t in self.terms],
        }
        if self.anchor is not None:
            d["anchor"] = list(self.anchor)
        return d

    @classmethod
    def from_dict(cls, d):
        return cls(
            kind=d["kind"],
            literals=[AffineLaw(l["a"], l["b"]) for l in d["literals"]],
            terms=[tuple(t) for t in d["terms"]],
            anchor=d.get("anchor"),
        )

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_dict(), sort_keys=True))

    @classmethod
    def load(cls, path):
        return cls.from_dict(json.loads(Path(path).read_text()))


@dataclass(frozen=True)
class StorageStats:
    M: int
    N_terms: int
    reals: int
    integers: int
    total_params: int
    # worst case |term| = M for every term
    worst_case_integers: int
    worst_case_params: int


def term_sets(ds: SampleDataset, kind: str) -> list[tuple[int, ...]]:
    """Index set of every sample point, in sample order (duplicates kept)."""
    if len(ds) == 0:
        return []
    V = ds.literal_values()
    own = ds.law_idx
    u = V[np.arange(len(ds)), own]
    tol = TIE_TOL * np.maximum(1.0, np.abs(u))
    if kind == DISJUNCTIVE:
        mask = V > (u + tol)[:, None]
    else:
        mask = V < (u - tol)[:, None]
    mask[np.arange(len(ds)), own] = True
    return [tuple(np.flatnonzero(row)) for row in mask]


def build_lattice(ds: SampleDataset, kind: str) -> LatticeForm:
    """One term per sample point; identical terms collapse to the first one."""
    if len(ds) == 0:
        raise ValueError("cannot build a lattice form from an empty dataset")
    terms, anchor, seen = [], [], set()
    for i, t in enumerate(term_sets(ds, kind)):
        t = tuple(int(j) for j in t)
        if t in seen:
            continue
        seen.add(t)
        terms.append(t)
        anchor.append(i)
    return LatticeForm(kind, list(ds.literals), terms, anchor)


def evaluate(form: LatticeForm, x) -> float:
    """Evaluate at a single state, short-circuiting dominated terms."""
    vals = (form._a @ np.asarray(x, dtype=float) + form._b).tolist()
    if form.kind == DISJUNCTIVE:
        best = -np.inf
        for t in form._terms_py:
            inner = np.inf
            for j in t:
                v = vals[j]
                if v < inner:
                    inner = v
                    if inner <= best:
                        break
            if inner > best:
                best = inner
        return best
    best = np.inf
    for t in form._terms_py:
        inner = -np.inf
        for j in t:
            v = vals[j]
            if v > inner:
                inner = v
                if inner >= best:
                    break
        if inner < best:
            best = inner
    return best


def evaluate_many(form: LatticeForm, X) -> np.ndarray:
    """Vectorized evaluation at the rows of ``X``."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    V = X @ form._a.T + form._b
    if form.kind == DISJUNCTIVE:
        out = np.full(X.shape[0], -np.inf)
        for t in form._terms_py:
            np.maximum(out, V[:, t].min(axis=1), out=out)
    else:
        out = np.full(X.shape[0], np.inf)
        for t in form._terms_py:
            np.minimum(out, V[:, t].max(axis=1), out=out)
    return out


def simplify(form: LatticeForm) -> LatticeForm:
    """Drop duplicate terms and terms whose index set contains another term's set.

    For the disjunctive form ``min`` over a superset is pointwise no larger,
    so under the outer ``max`` it is absorbed; the conjunctive case is dual.
    Terms come out sorted by size, then lexicographically.
    """
    anchor = form.anchor if form.anchor is not None else [None] * len(form.terms)
    first = {}
    for t, a in zip(form.terms, anchor):
        first.setdefault(t, a)
    uniq = sorted(first, key=lambda t: (len(t), t))
    kept: list[frozenset] = []
    out = []
    for t in uniq:
        s = frozenset(t)
        if any(k <= s for k in kept):
            continue
        kept.append(s)
        out.append(t)
    new_anchor = None if form.anchor is None else [first[t] for t in out]
    return LatticeForm(form.kind, form.literals, out, new_anchor)


def storage_stats(form: LatticeForm) -> StorageStats:
    M = len(form.literals)
    N = len(form.terms)
    reals = (form.n_x + 1) * M
    ints = sum(len(t) for t in form.terms)
    return StorageStats(
        M=M, N_terms=N, reals=reals, integers=ints, total_params=reals + ints,
        worst_case_integers=M * N, worst_case_params=reals + M * N,
    )
