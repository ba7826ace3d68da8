"""Single-loop stochastic bilevel optimization: problems, runs, checks."""

import json

from . import _core
from ._core import (
    Divergence,
    Error,
    InsufficientData,
    InvalidParameter,
    InvalidProblem,
    Problem,
    cli,
    fit_loglog,
    load_problem,
    make_logistic_problem,
    make_quadratic_problem,
    problem_from_json,
    run,
    trace_csv,
)

__all__ = [
    "Divergence", "Error", "InsufficientData", "InvalidParameter",
    "InvalidProblem", "Problem", "cli", "constants", "default_step_sizes",
    "derived_constants", "fit_loglog", "load_problem", "make_logistic_problem",
    "make_quadratic_problem", "problem_from_json", "run", "sweep", "trace_csv",
    "verify",
]


def constants(problem):
    return json.loads(problem.constants_json())


def derived_constants(problem, v0_norm=0.0):
    return json.loads(_core.derived_constants_json(problem, v0_norm))


def default_step_sizes(problem, horizon):
    return json.loads(_core.default_step_sizes_json(problem, horizon))


def verify(problem, lemmas=(), horizon=1000, replications=2000,
           checkpoints=(1, 5, 20, 100), seed=0, threads=1):
    """Lemma reports as dicts; an empty `lemmas` runs every check."""
    return json.loads(_core.verify_json(problem, list(lemmas), horizon,
                                        replications, list(checkpoints),
                                        seed, threads))


def sweep(kappa_grid, seeds, epsilon, max_k, algorithms=("ssaid",), dim=5,
          sigma=1.0, threads=1):
    """Summary dict and the per-run CSV text of a condition-number sweep."""
    summary, records = _core.sweep_json(list(kappa_grid), list(seeds), epsilon,
                                        max_k, list(algorithms), dim, sigma,
                                        threads)
    return json.loads(summary), records
