"""deformswarm: layered convex-combination team planning, constrained
gradient training, collision-safety certification, and quadcopter tracking
simulation."""

__version__ = "0.1.0"

from .team import (  # noqa: F401
    ConfigError,
    DesiredSnapshot,
    EmptyLayerError,
    TeamConfig,
    WeightSet,
    WeightSumViolation,
    constraint_residual,
    follower_desired,
    forward_pass,
    leader_desired,
    loss,
    team_output,
    validate_config,
)
from .training import (  # noqa: F401
    InfeasibleBounds,
    NonFiniteLossError,
    TrainSettings,
    TrainTrace,
    grad_loss,
    initial_weights,
    project_box_simplex,
    train,
)
from .safety import (  # noqa: F401
    CheckRecord,
    EmptyLog,
    GridSampler,
    InvalidStep,
    NeverFeasible,
    RandomSampler,
    SafetyCertificate,
    SeparationReport,
    alpha_min_search,
    certify_run,
    containment_check,
    pairwise_separation,
    weight_margin,
    weight_margin_axes,
)
from .vehicle import (  # noqa: F401
    ControlGains,
    ControlOutput,
    NonFiniteStateError,
    QuadParams,
    QuadState,
    dynamics_step,
    mixer_forward,
    rotor_mixer,
    tracking_controller,
)
from .scenario import (  # noqa: F401
    EllipseTrajectory,
    SimLog,
    ellipse_d,
    plan_desired,
    run_simulation,
    sixteen_agent_team,
    tracking_report,
)
