"""Smooth fictitious play and Nash distributions in N-player two-action potential games."""

from .dynamics import (
    Trajectory,
    br_flow,
    br_flow_batch,
    classify_run,
    derive_seed,
    smooth_fp_batch,
    smooth_fp_run,
)
from .fileio import GameFormatError, load_game, loads_game, save_game, dumps_game
from .game import (
    InvalidInputError,
    PotentialGame,
    Tag,
    coordination_game,
    expected_potential,
    potential_gradient,
    potential_hessian,
    restricted_hessian,
)
from .harness import (
    AuditFailedError,
    ExperimentConfig,
    ExperimentSummary,
    generate_game,
    lambda_sweep_report,
    run_experiment,
)
from .response import (
    Classification,
    ContinuationError,
    NashDistribution,
    NoFixedPointError,
    SolverOptions,
    continue_to_ne,
    smoothed_best_response,
    solve_nash_distributions,
)
from .stability import (
    audit_regularity,
    classify_rest_point,
    enumerate_mixed_ne,
    enumerate_pure_ne,
    find_lambda0,
    jacobian,
    nash_distributions,
)

__version__ = "0.1.0"
