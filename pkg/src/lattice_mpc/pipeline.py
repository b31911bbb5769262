"""End-to-end construction: sample, refine, build, simplify, verify."""
from __future__ import annotations

import json
import logging
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .lattice import (
    CONJUNCTIVE,
    DISJUNCTIVE,
    LatticeForm,
    build_lattice,
    simplify,
    storage_stats,
)
from .model import MpcProblem, condense, problem_to_dict
from .problems import resolve_problem
from .refinement import TOL_VIOLATION, lemma16_repair, refine_until_valid
from .sampling import QpOracle, SampleDataset, sample_grid, sample_trajectories
from .verification import (
    LP_TOL,
    TOL_EQ,
    ValidationReport,
    VerificationReport,
    hoeffding_validate,
    lp_scan,
    sandwich_check,
)

log = logging.getLogger(__name__)

MAX_REPAIR_ROUNDS = 10


class PipelineError(RuntimeError):
    """A stage failed; ``stage`` names it and ``cause`` is the original exception."""

    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"[{stage}] {type(cause).__name__}: {cause}")
        self.stage = stage
        self.cause = cause


@dataclass
class PipelineConfig:
    problem: object
    out_dir: str = "out"
    grid: list[int] | None = None
    trajectories: dict | None = None
    seed: int = 0
    refine_seed: int = 0
    validation_seed: int = 1
    N_v: int = 100_000
    epsilon: float = 5e-3
    sandwich_points: int = 1000
    tol_violation: float = TOL_VIOLATION
    tol_eq: float = TOL_EQ
    lp_tol: float = LP_TOL
    sandwich_tol: float = 1e-7
    max_repair_rounds: int = MAX_REPAIR_ROUNDS

    def __post_init__(self):
        if self.grid is None and not self.trajectories:
            raise ValueError("config needs a grid or a trajectory sampling spec")
        for name in ("epsilon", "tol_violation", "tol_eq", "lp_tol", "sandwich_tol"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.N_v < 1:
            raise ValueError("N_v must be at least 1")

    @classmethod
    def from_dict(cls, d):
        return cls(**d)

    @classmethod
    def load(cls, path):
        path = Path(path)
        d = json.loads(path.read_text())
        # relative problem paths are taken relative to the config file
        prob = d.get("problem")
        if isinstance(prob, str) and not Path(prob).is_absolute() and (path.parent / prob).exists():
            d["problem"] = str(path.parent / prob)
        return cls.from_dict(d)

    def to_dict(self):
        d = asdict(self)
        if isinstance(self.problem, MpcProblem):
            d["problem"] = problem_to_dict(self.problem)
        return d


@dataclass
class PipelineResult:
    problem: MpcProblem
    dataset: SampleDataset
    form_d: LatticeForm
    form_c: LatticeForm
    lp: VerificationReport
    validation: ValidationReport
    sandwich: VerificationReport
    timings: dict
    repair_rounds: int
    summary: dict = field(default_factory=dict)

    @property
    def verified(self) -> bool:
        return self.summary.get("verified", False)


def _forms(ds):
    return simplify(build_lattice(ds, DISJUNCTIVE)), simplify(build_lattice(ds, CONJUNCTIVE))


def summary_table(summary: dict) -> str:
    """Plain-text rendering of the pipeline summary."""
    lines = [f"problem {summary['problem']}: {summary['n_points']} samples, M = {summary['M']}"]
    hdr = f"{'form':<12}{'terms':>7}{'reals':>8}{'ints':>8}{'params':>8}{'ints_wc':>9}{'params_wc':>11}"
    lines.append(hdr)
    for kind in (DISJUNCTIVE, CONJUNCTIVE):
        s = summary["storage"][kind]
        lines.append(f"{kind:<12}{s['N_terms']:>7}{s['reals']:>8}{s['integers']:>8}"
                     f"{s['total_params']:>8}{s['worst_case_integers']:>9}{s['worst_case_params']:>11}")
    lines.append(f"lp_scan min objective {summary['lp_min_objective']:.3e}, "
                 f"{summary['lp_witnesses']} witnesses, {summary['repair_rounds']} repair rounds")
    lines.append(f"I_bar {summary['I_bar']:.6f} at N_v = {summary['N_v']}, "
                 f"confidence {summary['confidence']:.6f}")
    lines.append(f"sandwich max violation {summary['sandwich_max_violation']:.3e} "
                 f"over {summary['sandwich_points']} points")
    lines.append("stage times [s]: " + ", ".join(f"{k} {v:.3f}" for k, v in summary["timings"].items()))
    lines.append("verified" if summary["verified"] else "NOT verified")
    return "\n".join(lines)


def _write_json(path, obj):
    Path(path).write_text(json.dumps(obj, sort_keys=True, indent=1))


def run_pipeline(config: PipelineConfig) -> PipelineResult:
    """Sample, refine, build and simplify both forms, then verify them.

    Artifacts written to ``config.out_dir``: ``dataset.json``,
    ``lattice_d.json``, ``lattice_c.json``, ``report.json``,
    ``summary.json`` and ``summary.txt``.  A failing stage raises
    :class:`PipelineError`; whatever was produced before it is kept,
    together with ``failure.json``.
    """
    out = Path(config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    timings: dict[str, float] = {}
    state: dict = {}

    def stage(name, fn):
        t0 = time.perf_counter()
        try:
            res = fn()
        except Exception as exc:
            timings[name] = time.perf_counter() - t0
            _write_json(out / "failure.json", {"stage": name, "error": repr(exc), "timings": timings})
            ds = state.get("ds")
            if ds is not None:
                ds.save(out / "dataset.json")
            raise PipelineError(name, exc) from exc
        timings[name] = timings.get(name, 0.0) + time.perf_counter() - t0
        return res

    problem = stage("condense", lambda: resolve_problem(config.problem))
    qp = stage("condense", lambda: condense(problem))
    oracle = QpOracle(qp)
    domain = problem.domain
    if domain is None:
        raise PipelineError("condense", ValueError("problem has no sampling domain"))

    def do_sample():
        if config.grid is not None:
            return sample_grid(qp, domain, config.grid, seed=config.seed)
        tr = config.trajectories
        return sample_trajectories(qp, problem.A, problem.B, domain, int(tr["n_init"]),
                                   int(tr["steps"]), seed=config.seed)

    ds = stage("sample", do_sample)
    state["ds"] = ds
    if len(ds) == 0:
        raise PipelineError("sample", ValueError("no feasible sample points in the domain"))
    ds = stage("refine", lambda: refine_until_valid(ds, oracle, seed=config.refine_seed,
                                                    tol=config.tol_violation))
    state["ds"] = ds
    form_d, form_c = stage("build", lambda: _forms(ds))
    lp = stage("lp_scan", lambda: lp_scan(form_c, form_d, domain, config.lp_tol))

    rounds = 0
    rng = np.random.Generator(np.random.Philox(config.refine_seed + 1))
    while lp.lp_witnesses and rounds < config.max_repair_rounds:
        rounds += 1
        log.info("repair round %d: %d witnesses", rounds, len(lp.lp_witnesses))

        def repair(ds=ds, lp=lp):
            for w in lp.lp_witnesses:
                ds = lemma16_repair(ds, oracle, w.x, w.anchor_c, w.anchor_d, rng, config.tol_violation)
            return refine_until_valid(ds, oracle, seed=config.refine_seed, tol=config.tol_violation)

        ds = stage("repair", repair)
        state["ds"] = ds
        form_d, form_c = stage("build", lambda: _forms(ds))
        lp = stage("lp_scan", lambda: lp_scan(form_c, form_d, domain, config.lp_tol))

    val = stage("validate", lambda: hoeffding_validate(
        form_d, form_c, domain, config.N_v, config.epsilon, config.validation_seed, config.tol_eq))
    sw = stage("sandwich", lambda: sandwich_check(
        form_d, form_c, oracle, domain, config.sandwich_points, config.validation_seed + 1))

    ds.save(out / "dataset.json")
    form_d.save(out / "lattice_d.json")
    form_c.save(out / "lattice_c.json")
    sd, sc = storage_stats(form_d), storage_stats(form_c)
    sw_max = max(sw.sandwich_max_lower_violation, sw.sandwich_max_upper_violation)
    verified = (not lp.lp_witnesses and val.n_mismatch == 0 and sw_max <= config.sandwich_tol)
    summary = {
        "problem": problem.name or "problem",
        "n_points": len(ds),
        "M": len(ds.literals),
        "storage": {DISJUNCTIVE: asdict(sd), CONJUNCTIVE: asdict(sc)},
        "lp_pairs": lp.lp_pairs_checked,
        "lp_min_objective": lp.lp_min_objective,
        "lp_witnesses": len(lp.lp_witnesses),
        "repair_rounds": rounds,
        "N_v": val.N_v,
        "I_bar": val.I_bar,
        "confidence": val.confidence,
        "sandwich_points": sw.sandwich_points,
        "sandwich_max_violation": sw_max,
        "timings": dict(timings),
        "verified": verified,
    }
    _write_json(out / "report.json", {
        "lp_scan": lp.to_dict(), "validation": val.to_dict(), "sandwich": sw.to_dict(),
    })
    _write_json(out / "summary.json", summary)
    (out / "summary.txt").write_text(summary_table(summary) + "\n")
    return PipelineResult(problem, ds, form_d, form_c, lp, val, sw, timings, rounds, summary)
