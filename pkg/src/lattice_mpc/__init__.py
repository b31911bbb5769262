"""Lattice PWA approximations of explicit linear MPC laws built from sampled QP solutions."""
from .lattice import (
    CONJUNCTIVE,
    DISJUNCTIVE,
    LatticeForm,
    StorageStats,
    build_lattice,
    evaluate,
    evaluate_many,
    simplify,
    storage_stats,
)
from .model import (
    Box,
    CondensedQp,
    MpcProblem,
    ProblemError,
    condense,
    discretize_zoh,
    load_problem,
    solve_dare,
)
from .pipeline import PipelineConfig, PipelineError, run_pipeline
from .problems import chain10, double_integrator, inverted_pendulum, resolve_problem
from .refinement import check_assumption, lemma16_repair, refine_segment, refine_until_valid
from .sampling import (
    AffineLaw,
    QpOracle,
    SampleDataset,
    extract_affine_law,
    sample_grid,
    sample_trajectories,
)
from .simulate import Trajectory, bench_eval, simulate
from .solvers import independent_rows, solve_lp, solve_qp
from .verification import hoeffding_confidence, hoeffding_validate, lp_scan, sandwich_check

__version__ = "0.1.0"
