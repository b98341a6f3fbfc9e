"""odefit: declarative ODE parameter calibration.

Problem decks are XML files describing an ODE system, datasets, a loss,
and optimizer settings.  The package parses and lints decks, compiles the
right-hand side expressions into evaluable models with exact Jacobians,
integrates the system with adaptive explicit or implicit steppers, and
calibrates parameters with a two-stage global (particle swarm) plus local
(L-BFGS with forward-sensitivity gradients) strategy.
"""

from odefit.bench import (
    BenchmarkCase,
    generate_synthetic,
    list_benchmarks,
    load_benchmark,
    load_case_data,
)
from odefit.coords import ParamSpace, from_internal, make_space, to_internal
from odefit.deck import (
    DeckError,
    LbfgsConfig,
    OptimizerConfig,
    ProblemDeck,
    PsoConfig,
    generate_skeleton,
    parse_deck,
    serialize_deck,
)
from odefit.expr import eval_dual, eval_expr, free_symbols, parse_expr, \
    print_expr
from odefit.global_opt import Swarm, evaluate_swarm, init_swarm, pso_step, \
    run_pso
from odefit.lint import LintFinding, LintReport, auto_fix, lint_deck, \
    lint_loop
from odefit.local_opt import FitResult, minimize_lbfgs, refine, two_stage_fit
from odefit.loss import (
    BoundDataset,
    DatasetError,
    LossTerm,
    bind_dataset,
    evaluate_terms,
    loss_value,
)
from odefit.model import CompiledModel, compile_model
from odefit.pipeline import main
from odefit.sens import (
    SensitivitySolution,
    fd_gradient,
    integrate_with_sensitivities,
    loss_and_gradient,
)
from odefit.solve import SolveStats, SolverConfig, Trajectory, integrate

__version__ = "0.1.0"

__all__ = [
    "BenchmarkCase",
    "BoundDataset",
    "CompiledModel",
    "DatasetError",
    "DeckError",
    "FitResult",
    "LbfgsConfig",
    "LintFinding",
    "LintReport",
    "LossTerm",
    "OptimizerConfig",
    "ParamSpace",
    "ProblemDeck",
    "PsoConfig",
    "SensitivitySolution",
    "SolveStats",
    "SolverConfig",
    "Swarm",
    "Trajectory",
    "auto_fix",
    "bind_dataset",
    "compile_model",
    "eval_dual",
    "eval_expr",
    "evaluate_swarm",
    "evaluate_terms",
    "fd_gradient",
    "free_symbols",
    "from_internal",
    "generate_skeleton",
    "generate_synthetic",
    "init_swarm",
    "integrate",
    "integrate_with_sensitivities",
    "lint_deck",
    "lint_loop",
    "list_benchmarks",
    "load_benchmark",
    "load_case_data",
    "loss_and_gradient",
    "loss_value",
    "main",
    "make_space",
    "minimize_lbfgs",
    "parse_deck",
    "parse_expr",
    "print_expr",
    "pso_step",
    "refine",
    "run_pso",
    "serialize_deck",
    "to_internal",
    "two_stage_fit",
]
