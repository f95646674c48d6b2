"""Reference trajectories, the bundled 16-agent team, and the closed loop.

run_simulation drives every vehicle's tracking controller from the planned
positions: with static weights each agent's plan is a fixed offset from the
team position, so the planner contributes exactly the trajectory derivatives
as feedforward.
"""

from dataclasses import dataclass

import numpy as np

from .team import (
    TeamConfig,
    WeightSet,
    constraint_residual,
    forward_pass,
    validate_config,
)
from .vehicle import (
    ControlGains,
    NonFiniteStateError,
    QuadParams,
    _controller_arrays,
    _rk4,
    rotor_spin,
)


@dataclass(frozen=True)
class EllipseTrajectory:
    """Closed horizontal ellipse swept at constant angular rate."""

    semi_major: float = 100.0
    semi_minor: float = 80.0
    period: float = 60.0
    altitude: float = 10.0
    phase: float = 0.0

    def __post_init__(self):
        for name in ("semi_major", "semi_minor", "period"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be > 0")


def ellipse_d(traj: EllipseTrajectory, t: float):
    """Team position and its first two time derivatives at time t."""
    w = 2.0 * np.pi / traj.period
    th = w * t + traj.phase
    c, s = np.cos(th), np.sin(th)
    d = np.array([traj.semi_major * c, traj.semi_minor * s, traj.altitude])
    v = np.array([-traj.semi_major * w * s, traj.semi_minor * w * c, 0.0])
    a = np.array([-traj.semi_major * w * w * c, -traj.semi_minor * w * w * s, 0.0])
    return d, v, a


def sixteen_agent_team() -> TeamConfig:
    """The bundled 16-agent team: boundary triangle {1,2,3}, core 4, three
    layer-2 followers each mixing a distinct pair of boundary leaders with
    the core, and nine layer-3 followers with two in-neighbors each.

    Follower reference positions are an approximate layout (where the
    uniform feasible weights place them); only the layer-1 references enter
    the planning math.
    """
    reference = {
        1: (18.0, 0.0, 0.0),
        2: (-8.0, 13.0, 0.0),
        3: (-8.0, -13.0, 0.0),
        4: (0.0, 0.0, 0.0),
        5: (3.3, 4.3, 0.0),
        6: (-5.3, 0.0, 0.0),
        7: (3.3, -4.3, 0.0),
        8: (10.7, 2.2, 0.0),
        9: (-2.3, 8.7, 0.0),
        10: (-6.7, 6.5, 0.0),
        11: (-6.7, -6.5, 0.0),
        12: (-2.3, -8.7, 0.0),
        13: (10.7, -2.2, 0.0),
        14: (1.7, 2.2, 0.0),
        15: (-2.7, 0.0, 0.0),
        16: (1.7, -2.2, 0.0),
    }
    raw = TeamConfig(
        n_agents=16,
        reference_positions={i: np.array(v) for i, v in reference.items()},
        boundary=(1, 2, 3),
        core=4,
        interior=tuple(range(5, 17)),
        layers=((1, 2, 3, 4), (5, 6, 7), tuple(range(8, 17))),
        in_neighbors={
            5: (1, 2, 4),
            6: (2, 3, 4),
            7: (3, 1, 4),
            8: (5, 1),
            9: (5, 2),
            10: (6, 2),
            11: (6, 3),
            12: (7, 3),
            13: (7, 1),
            14: (5, 4),
            15: (6, 4),
            16: (7, 4),
        },
        mix_bounds=((0.2, 0.6), (0.35, 0.65)),
        alpha_min=0.5,
        alpha_max=1.0,
        agent_half_extent=0.3,
        tracking_bound=0.1,
        notes={"reference_layout": "approximate; follower entries are cosmetic"},
    )
    return validate_config(raw)


@dataclass
class SimLog:
    """Uniform-grid record of a run; desired and actual share the grid.

    actual (and the other state series) are None for plan-only logs.
    """

    times: np.ndarray
    agent_ids: tuple[int, ...]
    desired: np.ndarray                  # [M, N, 3]
    actual: np.ndarray | None = None     # [M, N, 3]
    velocity: np.ndarray | None = None   # [M, N, 3]
    attitude: np.ndarray | None = None   # [M, N, 3]
    thrust: np.ndarray | None = None     # [M, N]
    rotor_speeds: np.ndarray | None = None  # [M, N, 4]

    @property
    def duration(self) -> float:
        return float(self.times[-1] - self.times[0]) if self.times.size else 0.0

    def tracking_errors(self) -> np.ndarray:
        if self.actual is None:
            raise ValueError("log has no actual states")
        return np.abs(self.desired - self.actual)


def _planned_offsets(config: TeamConfig, weights: WeightSet) -> np.ndarray:
    """Per-agent offsets from the team position, in sorted-id order."""
    snap = forward_pass(config, weights, np.zeros(3))
    return np.stack([snap.positions[i] for i in sorted(snap.positions)])


def plan_desired(config: TeamConfig, weights: WeightSet, traj: EllipseTrajectory,
                 times) -> SimLog:
    """Planned positions over a time grid (no vehicles)."""
    times = np.asarray(times, dtype=float)
    offsets = _planned_offsets(config, weights)
    desired = np.empty((times.size, offsets.shape[0], 3))
    for n, t in enumerate(times):
        d, _, _ = ellipse_d(traj, t)
        desired[n] = offsets + d
    return SimLog(times=times, agent_ids=tuple(sorted(config.agents)),
                  desired=desired)


def run_simulation(config: TeamConfig, weights, traj: EllipseTrajectory,
                   params: QuadParams | None = None,
                   gains: ControlGains | None = None,
                   dt: float = 0.002, t_f: float | None = None) -> SimLog:
    """Closed-loop run: plan, track, integrate, log.

    weights may be a WeightSet (static plan; offsets are computed once since
    the plan is equivariant to the team position) or a callable t -> WeightSet
    for an externally supplied schedule. Vehicles start at their planned
    positions, level and at rest.
    """
    params = params or QuadParams()
    gains = gains or ControlGains()
    if t_f is None:
        t_f = traj.period
    n_steps = int(round(t_f / dt))
    times = np.arange(n_steps + 1) * dt
    ids = tuple(sorted(config.agents))
    n = len(ids)

    scheduled = callable(weights)
    if not scheduled:
        residual = constraint_residual(config, weights)
        if residual > 1e-6:
            raise ValueError(f"weights violate constraints by {residual:.3g}")
        offsets = _planned_offsets(config, weights)

    log = SimLog(
        times=times,
        agent_ids=ids,
        desired=np.empty((times.size, n, 3)),
        actual=np.empty((times.size, n, 3)),
        velocity=np.empty((times.size, n, 3)),
        attitude=np.empty((times.size, n, 3)),
        thrust=np.empty((times.size, n)),
        rotor_speeds=np.empty((times.size, n, 4)),
    )

    d0, _, _ = ellipse_d(traj, 0.0)
    if scheduled:
        first = _planned_offsets(config, weights(0.0)) + d0
    else:
        first = offsets + d0
    x = np.zeros((n, 12))
    x[:, 0:3] = first

    for step, t in enumerate(times):
        d, v, a = ellipse_d(traj, t)
        if scheduled:
            desired = _planned_offsets(config, weights(t)) + d
        else:
            desired = offsets + d

        thrust, torques, speeds = _controller_arrays(
            x, desired, np.broadcast_to(v, (n, 3)), np.broadcast_to(a, (n, 3)),
            params, gains)

        log.desired[step] = desired
        log.actual[step] = x[:, 0:3]
        log.velocity[step] = x[:, 3:6]
        log.attitude[step] = x[:, 6:9]
        log.thrust[step] = thrust
        log.rotor_speeds[step] = speeds

        if step < n_steps:
            x = _rk4(x, thrust, torques, rotor_spin(speeds), params, dt)
            if not np.all(np.isfinite(x)):
                bad = int(np.nonzero(~np.isfinite(x).all(axis=1))[0][0])
                raise NonFiniteStateError(
                    f"agent {ids[bad]} diverged at t={times[step + 1]:.3f} s")
    return log


def tracking_report(log: SimLog, transient: float = 5.0) -> dict[int, np.ndarray]:
    """Per-agent, per-axis maximum |planned - actual| after the transient."""
    if transient >= log.duration and log.times.size > 1:
        raise ValueError(
            f"transient {transient} s must be shorter than the log ({log.duration} s)")
    errors = log.tracking_errors()
    mask = log.times >= log.times[0] + transient
    worst = errors[mask].max(axis=0)
    return {agent: worst[idx] for idx, agent in enumerate(log.agent_ids)}
