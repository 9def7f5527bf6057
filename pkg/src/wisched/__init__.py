"""Joint scheduling of age-of-incorrect-information monitors and
throughput-oriented traffic over shared channels.

The package splits into:

* :mod:`wisched.model` -- immutable system description and state objects.
* :mod:`wisched.environment` -- the slotted stochastic simulator.
* :mod:`wisched.whittle` -- closed-form single-monitor analysis and the
  Whittle index table.
* :mod:`wisched.oracle` -- exact dynamic-programming solvers used to verify
  everything else at desk scale.
* :mod:`wisched.neural` -- the small hand-rolled MLP/Adam stack with exact
  reverse-mode gradients.
* :mod:`wisched.mappo` -- the multi-agent PPO trainer with index-guided
  action fusion.
* :mod:`wisched.baselines` -- handcrafted policies and Monte Carlo evaluation.
* :mod:`wisched.experiment` -- config files and the traffic-weight sweep.
* :mod:`wisched.cli` -- the ``wisched`` command line tool.
"""

from .errors import (
    ConfigError,
    ConstraintViolationError,
    ConvergenceError,
    CorruptBufferError,
    IndexSearchError,
    NonFiniteLossError,
    NumericalFloorError,
    StateSpaceError,
    ThresholdCapError,
    TruncationError,
    WischedError,
)
from .model import (
    AgentObservation,
    GainChain,
    ProcessModel,
    SystemConfig,
    SystemState,
    TrafficModel,
    ValidationReport,
    feasible_mask,
    project_observation,
    validate_action,
    validate_config,
)
from .environment import Environment, RngStream, StepResult, expected_throughput, throughput_table
from .whittle import (
    IndexColumn,
    SearchGrid,
    SubProblem,
    ThresholdPolicy,
    WhittleTable,
    average_cost,
    build_table,
    load_table,
    optimal_threshold,
    save_table,
    simulate_threshold_policy,
    stationary_distribution,
    tail_mass,
    verify_indexability,
    whittle_index,
)
from .oracle import (
    JointSpace,
    TruncatedMdp,
    joint_mdp,
    relative_value_iteration,
    subproblem_mdp,
    value_iteration,
)
from .neural import Adam, Mlp, entropy, forward_actor, forward_critic, softmax
from .mappo import (
    CHECKPOINT_VERSION,
    LOG_COLUMNS,
    Buffer,
    Experience,
    Hyperparams,
    ObservationScaler,
    TrainedPolicy,
    Trainer,
    actor_select,
    apply_online,
    compute_advantages,
    compute_ratios,
    compute_returns,
    fuse_actions,
    load_policy,
    rank_monitors,
    save_checkpoint,
    surrogate_loss,
)
from .baselines import (
    AoiGreedy,
    DoNothing,
    EvalResult,
    RandomFeasible,
    WhittleGreedy,
    WhittleMyopic,
    monte_carlo_eval,
)
from .experiment import ExperimentSpec, emit_csv, load_spec, run_sweep

__version__ = "0.1.0"

__all__ = [
    "AgentObservation",
    "CHECKPOINT_VERSION",
    "LOG_COLUMNS",
    "AoiGreedy",
    "Adam",
    "Buffer",
    "ConfigError",
    "ConstraintViolationError",
    "ConvergenceError",
    "CorruptBufferError",
    "DoNothing",
    "Environment",
    "EvalResult",
    "Experience",
    "ExperimentSpec",
    "GainChain",
    "Hyperparams",
    "IndexColumn",
    "IndexSearchError",
    "JointSpace",
    "Mlp",
    "NonFiniteLossError",
    "NumericalFloorError",
    "ObservationScaler",
    "ProcessModel",
    "RandomFeasible",
    "RngStream",
    "SearchGrid",
    "StateSpaceError",
    "StepResult",
    "SubProblem",
    "SystemConfig",
    "SystemState",
    "ThresholdCapError",
    "ThresholdPolicy",
    "TrafficModel",
    "TrainedPolicy",
    "Trainer",
    "TruncatedMdp",
    "TruncationError",
    "ValidationReport",
    "WhittleGreedy",
    "WhittleMyopic",
    "WhittleTable",
    "WischedError",
    "actor_select",
    "apply_online",
    "average_cost",
    "build_table",
    "compute_advantages",
    "compute_ratios",
    "compute_returns",
    "emit_csv",
    "entropy",
    "expected_throughput",
    "feasible_mask",
    "forward_actor",
    "forward_critic",
    "fuse_actions",
    "joint_mdp",
    "load_policy",
    "load_spec",
    "load_table",
    "monte_carlo_eval",
    "optimal_threshold",
    "rank_monitors",
    "project_observation",
    "relative_value_iteration",
    "run_sweep",
    "save_checkpoint",
    "save_table",
    "simulate_threshold_policy",
    "softmax",
    "stationary_distribution",
    "subproblem_mdp",
    "surrogate_loss",
    "tail_mass",
    "validate_action",
    "validate_config",
    "value_iteration",
    "verify_indexability",
    "whittle_index",
    "__version__",
]
