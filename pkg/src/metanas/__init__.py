"""Neural architecture search as a reinforcement-learning problem, in numpy.

Architectures are lists of NSC layer vectors built up by an agent one action
at a time.  Rewards come from a deterministic surrogate accuracy estimator or
from an external trainer speaking a small JSON protocol.
"""

from .actions import Action, Event, Pointers, apply_action, enumerate_actions, n_actions
from .agents import DqnAgent, IncompatibleCheckpoint, MetaA2CAgent, RandomAgent
from .config import (
    A2cConfig,
    ConfigError,
    DqnConfig,
    EnvironmentConfig,
    Mode,
    TrialConfig,
    load_config,
)
from .environment import NasEnvironment, RewardCache, StepOutcome, TerminationReason
from .estimator import EstimatorResult, SurrogateEstimator, estimate
from .harness import (
    TrialLog,
    action_proportions,
    aggregate_metrics,
    count_multibranch,
    run_frozen_evaluation,
    run_trial,
)
from .nsc import (
    ArchitectureState,
    InvalidArchitecture,
    LayerType,
    NscVector,
    build_graph,
    build_network,
    canonical_key,
    encode_state,
    encoding_width,
    infer_shapes,
    parse_key,
)

__version__ = "0.1.0"

__all__ = [
    "A2cConfig",
    "Action",
    "ArchitectureState",
    "ConfigError",
    "DqnAgent",
    "DqnConfig",
    "EnvironmentConfig",
    "EstimatorResult",
    "Event",
    "IncompatibleCheckpoint",
    "InvalidArchitecture",
    "LayerType",
    "MetaA2CAgent",
    "Mode",
    "NasEnvironment",
    "NscVector",
    "Pointers",
    "RandomAgent",
    "RewardCache",
    "StepOutcome",
    "SurrogateEstimator",
    "TerminationReason",
    "TrialConfig",
    "TrialLog",
    "action_proportions",
    "aggregate_metrics",
    "apply_action",
    "build_graph",
    "build_network",
    "canonical_key",
    "count_multibranch",
    "encode_state",
    "encoding_width",
    "enumerate_actions",
    "estimate",
    "infer_shapes",
    "load_config",
    "n_actions",
    "parse_key",
    "run_frozen_evaluation",
    "run_trial",
    "__version__",
]
