"""Command-line interface; every stage reads and writes JSON artifacts.

Exit codes: 0 success, 2 verification failure, 3 infeasible
configuration, 4 solver failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .lattice import CONJUNCTIVE, DISJUNCTIVE, LatticeForm, build_lattice, simplify, storage_stats
from .model import ProblemError, condense
from .pipeline import PipelineConfig, PipelineError, run_pipeline
from .problems import resolve_problem
from .refinement import RefinementError, refine_until_valid
from .sampling import QpOracle, SampleDataset, sample_grid, sample_trajectories
from .simulate import ONLINE_QP, bench_eval, simulate
from .solvers import SolverError
from .verification import hoeffding_validate, lp_scan, sandwich_check

EXIT_OK = 0
EXIT_VERIFY = 2
EXIT_INFEASIBLE = 3
EXIT_SOLVER = 4


class VerificationFailed(Exception):
    pass


class InfeasibleConfig(Exception):
    pass


def _dump(obj, path=None):
    text = json.dumps(obj, sort_keys=True, indent=1)
    if path is None:
        print(text)
    else:
        Path(path).write_text(text)


def _ints(s):
    return [int(v) for v in s.split(",")]


def _floats(s):
    return np.array([float(v) for v in s.split(",")])


def cmd_condense(a):
    qp = condense(resolve_problem(a.problem))
    _dump({k: getattr(qp, k).tolist() for k in ("H", "F", "G", "w", "E", "S")}
          | {"n_x": qp.n_x, "n_u": qp.n_u, "N_p": qp.N_p}, a.out)


def cmd_sample(a):
    prob = resolve_problem(a.problem)
    qp = condense(prob)
    if a.grid:
        ds = sample_grid(qp, prob.domain, _ints(a.grid), seed=a.seed)
    elif a.trajectories:
        ds = sample_trajectories(qp, prob.A, prob.B, prob.domain, a.trajectories, a.steps, seed=a.seed)
    else:
        raise InfeasibleConfig("give --grid or --trajectories")
    if len(ds) == 0:
        raise InfeasibleConfig("no feasible sample points in the domain")
    ds.save(a.out)
    print(f"{len(ds)} points, {len(ds.literals)} literals -> {a.out}")


def cmd_refine(a):
    prob = resolve_problem(a.problem)
    ds = SampleDataset.load(a.dataset)
    ds = refine_until_valid(ds, QpOracle(condense(prob)), seed=a.seed)
    ds.save(a.out)
    print(f"{len(ds)} points, {len(ds.literals)} literals -> {a.out}")


def cmd_build(a):
    ds = SampleDataset.load(a.dataset)
    out = Path(a.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for kind, name in ((DISJUNCTIVE, "lattice_d.json"), (CONJUNCTIVE, "lattice_c.json")):
        form = build_lattice(ds, kind)
        if not a.no_simplify:
            form = simplify(form)
        form.save(out / name)
        s = storage_stats(form)
        print(f"{kind}: M={s.M} terms={s.N_terms} params={s.total_params} "
              f"(worst case {s.worst_case_params}) -> {out / name}")


def cmd_verify(a):
    prob = resolve_problem(a.problem)
    fd, fc = LatticeForm.load(a.lattice_d), LatticeForm.load(a.lattice_c)
    lp = lp_scan(fc, fd, prob.domain)
    val = hoeffding_validate(fd, fc, prob.domain, a.n_v, a.epsilon, a.seed)
    rep = {"lp_scan": lp.to_dict(), "validation": val.to_dict()}
    ok = not lp.lp_witnesses and val.n_mismatch == 0
    if a.sandwich:
        sw = sandwich_check(fd, fc, QpOracle(condense(prob)), prob.domain, a.sandwich, a.seed + 1)
        rep["sandwich"] = sw.to_dict()
        ok = ok and max(sw.sandwich_max_lower_violation, sw.sandwich_max_upper_violation) <= a.sandwich_tol
    rep["verified"] = ok
    _dump(rep, a.out)
    print(f"lp min {lp.lp_min_objective:.3e}, I_bar {val.I_bar:.6f}, "
          f"confidence {val.confidence:.6f}: {'verified' if ok else 'NOT verified'}")
    if not ok:
        raise VerificationFailed()


def cmd_simulate(a):
    prob = resolve_problem(a.problem)
    ctrl = ONLINE_QP if a.controller == ONLINE_QP else LatticeForm.load(a.controller)
    x0 = _floats(a.x0)
    if x0.size != prob.n_x:
        raise InfeasibleConfig(f"x0 has {x0.size} entries, expected {prob.n_x}")
    qp = condense(prob)
    if QpOracle(qp).value(x0) is None:
        raise InfeasibleConfig("x0 is infeasible for the MPC problem")
    tr = simulate(prob, ctrl, x0, a.steps, qp)
    if a.csv:
        tr.to_csv(a.csv)
    print(f"{tr.controller_tag}: {len(tr)} steps{' (truncated)' if tr.truncated else ''}, "
          f"cost {sum(tr.costs):.6g}, final state {np.array2string(tr.states[-1], precision=4)}")


def cmd_bench(a):
    prob = resolve_problem(a.problem)
    form = LatticeForm.load(a.lattice)
    st = bench_eval(form, a.n_evals, a.seed, prob.domain, condense(prob))
    _dump(st.to_dict(), a.out)
    print(f"lattice mean {st.mean_ns / 1e3:.2f} us, QP mean {st.qp_mean_ns / 1e3:.2f} us, "
          f"speedup {st.speedup:.1f}x")


def cmd_pipeline(a):
    cfg = PipelineConfig.load(a.config)
    if a.out_dir:
        cfg.out_dir = a.out_dir
    res = run_pipeline(cfg)
    print((Path(cfg.out_dir) / "summary.txt").read_text(), end="")
    if not res.verified:
        raise VerificationFailed()


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="lattice-mpc", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def cmd(name, fn, help):
        s = sub.add_parser(name, help=help)
        s.set_defaults(func=fn)
        return s

    prob_help = "built-in name (double_integrator, inverted_pendulum, chain10) or problem JSON"

    s = cmd("condense", cmd_condense, "write the condensed QP matrices")
    s.add_argument("--problem", required=True, help=prob_help)
    s.add_argument("--out")

    s = cmd("sample", cmd_sample, "sample the explicit law on a grid or along trajectories")
    s.add_argument("--problem", required=True, help=prob_help)
    s.add_argument("--grid", help="points per axis, e.g. 21,21")
    s.add_argument("--trajectories", type=int, help="number of initial states")
    s.add_argument("--steps", type=int, default=25)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)

    s = cmd("refine", cmd_refine, "re-sample until the pairwise check passes")
    s.add_argument("--problem", required=True, help=prob_help)
    s.add_argument("--dataset", required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)

    s = cmd("build", cmd_build, "build (and simplify) both lattice forms")
    s.add_argument("--dataset", required=True)
    s.add_argument("--out-dir", required=True)
    s.add_argument("--no-simplify", action="store_true")

    s = cmd("verify", cmd_verify, "LP scan plus statistical equivalence check")
    s.add_argument("--problem", required=True, help=prob_help)
    s.add_argument("--lattice-d", required=True)
    s.add_argument("--lattice-c", required=True)
    s.add_argument("--n-v", type=int, default=100_000)
    s.add_argument("--epsilon", type=float, default=5e-3)
    s.add_argument("--sandwich", type=int, default=0, help="also compare with the QP at this many points")
    s.add_argument("--sandwich-tol", type=float, default=1e-7)
    s.add_argument("--seed", type=int, default=1)
    s.add_argument("--out")

    s = cmd("simulate", cmd_simulate, "closed-loop simulation")
    s.add_argument("--problem", required=True, help=prob_help)
    s.add_argument("--controller", default=ONLINE_QP, help="'online_qp' or a lattice JSON file")
    s.add_argument("--x0", required=True, help="comma-separated initial state")
    s.add_argument("--steps", type=int, default=50)
    s.add_argument("--csv")

    s = cmd("bench", cmd_bench, "lattice evaluation latency vs online QP")
    s.add_argument("--problem", required=True, help=prob_help)
    s.add_argument("--lattice", required=True)
    s.add_argument("--n-evals", type=int, default=1000)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out")

    s = cmd("pipeline", cmd_pipeline, "run every stage from a config file")
    s.add_argument("--config", required=True)
    s.add_argument("--out-dir")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except VerificationFailed:
        return EXIT_VERIFY
    except PipelineError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return _code(exc.cause) or EXIT_SOLVER
    except Exception as exc:
        code = _code(exc)
        if code is None:
            raise
        print(f"error: {exc}", file=sys.stderr)
        return code
    return EXIT_OK


def _code(exc):
    if isinstance(exc, (InfeasibleConfig, ProblemError, ValueError, FileNotFoundError)):
        return EXIT_INFEASIBLE
    if isinstance(exc, (SolverError, RefinementError, RuntimeError)):
        return EXIT_SOLVER
    return None


if __name__ == "__main__":
    sys.exit(main())
