"""Data-driven iterative LQR for partially observed systems.

Builds feedback trajectories for black-box plants from rollout data alone:
the hidden state is replaced by an information state of recent measurements
and controls, whose local linear dynamics are identified per timestep with
an ARMA least-squares fit and fed to a Riccati backward pass.
"""

from .info_state import (
    ArmaStep,
    InformationState,
    LtvInfoStep,
    assemble_ltv,
    build_info_state,
    info_dim,
    observability_rank,
    unstack_info_state,
)
from .optimizer import (
    BackwardPassResult,
    CostSpec,
    IterationRecord,
    SolveResult,
    SolverOptions,
    backward_pass,
    evaluate_cost,
    forward_update,
    line_search,
    solve,
)
from .plants import (
    Cartpole,
    DivergenceError,
    FeedbackAugmentedPolicy,
    LinearPlant,
    NoiseSpec,
    ObservationMode,
    OpenLoopPolicy,
    Pendulum,
    Trajectory,
    full_state_mode,
    linearize_fd,
    observe,
    positions_only_mode,
    rollout,
)
from .sysid import (
    IdentifiedModel,
    PerturbationPlan,
    RolloutDataset,
    arma_from_ltv,
    bias_report,
    collect_rollouts,
    debias_full_state,
    fit_arma,
)

__all__ = [
    "ArmaStep",
    "BackwardPassResult",
    "Cartpole",
    "CostSpec",
    "DivergenceError",
    "FeedbackAugmentedPolicy",
    "IdentifiedModel",
    "InformationState",
    "IterationRecord",
    "LinearPlant",
    "LtvInfoStep",
    "NoiseSpec",
    "ObservationMode",
    "OpenLoopPolicy",
    "Pendulum",
    "PerturbationPlan",
    "RolloutDataset",
    "SolveResult",
    "SolverOptions",
    "Trajectory",
    "arma_from_ltv",
    "assemble_ltv",
    "backward_pass",
    "bias_report",
    "build_info_state",
    "collect_rollouts",
    "debias_full_state",
    "evaluate_cost",
    "fit_arma",
    "forward_update",
    "full_state_mode",
    "info_dim",
    "line_search",
    "linearize_fd",
    "observability_rank",
    "observe",
    "positions_only_mode",
    "rollout",
    "solve",
]

__version__ = "0.1.0"
