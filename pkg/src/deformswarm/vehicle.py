"""Rigid-body quadcopter dynamics, tracking controller, and rotor mixing.

World frame is z-up; attitude is roll/pitch/yaw with body rates in the body
frame. The airframe is a plus configuration: rotors 1 and 3 sit on the body
x axis (pitch torque from their imbalance), rotors 2 and 4 on the y axis
(roll torque), and alternating spin directions produce the yaw torque. The
relative rotor spin w1 - w2 + w3 - w4 drives the gyroscopic coupling term.

State vectors pack [position(3), velocity(3), roll pitch yaw, p q r] and the
array functions broadcast over a leading batch dimension so a whole team
integrates in one call.
"""

from dataclasses import dataclass

import numpy as np

_G_AXIS = np.array([0.0, 0.0, 1.0])


class NonFiniteStateError(RuntimeError):
    """Integration produced a non-finite state."""


@dataclass(frozen=True)
class QuadParams:
    """Airframe constants (SI units)."""

    mass: float = 0.5
    gravity: float = 9.81
    arm_length: float = 0.25
    rotor_inertia: float = 3.357e-5
    inertia_x: float = 0.0196
    inertia_y: float = 0.0196
    inertia_z: float = 0.0264
    thrust_coeff: float = 3e-5
    drag_torque_coeff: float = 1.1e-6
    max_rotor_speed: float = 1000.0

    def __post_init__(self):
        for name in ("mass", "gravity", "arm_length", "rotor_inertia",
                     "inertia_x", "inertia_y", "inertia_z", "thrust_coeff",
                     "drag_torque_coeff", "max_rotor_speed"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be > 0")

    @property
    def hover_thrust(self) -> float:
        return self.mass * self.gravity


@dataclass(frozen=True)
class ControlGains:
    """Cascade gains: critically damped position loop, attitude loop with
    poles ten times faster, and a commanded-tilt ceiling for saturation."""

    kp_pos: float = 4.0
    kd_pos: float = 4.0
    kp_att: float = 400.0
    kd_att: float = 40.0
    max_tilt: float = np.deg2rad(45.0)


@dataclass
class QuadState:
    position: np.ndarray
    velocity: np.ndarray
    attitude: np.ndarray   # roll, pitch, yaw (rad), wrapped to (-pi, pi]
    rates: np.ndarray      # body p, q, r (rad/s)

    @classmethod
    def at_rest(cls, position) -> "QuadState":
        return cls(
            position=np.asarray(position, dtype=float),
            velocity=np.zeros(3),
            attitude=np.zeros(3),
            rates=np.zeros(3),
        )

    @classmethod
    def from_vector(cls, x) -> "QuadState":
        x = np.asarray(x, dtype=float)
        return cls(x[0:3].copy(), x[3:6].copy(), x[6:9].copy(), x[9:12].copy())

    def to_vector(self) -> np.ndarray:
        return np.concatenate([self.position, self.velocity, self.attitude, self.rates])


@dataclass
class ControlOutput:
    """Post-saturation command: thrust and torques recomputed from the rotor
    speeds so thrust == thrust_coeff * sum(speeds**2) holds exactly."""

    thrust: float
    torques: np.ndarray
    rotor_speeds: np.ndarray


def _wrap_angles(a: np.ndarray) -> np.ndarray:
    return np.pi - np.mod(np.pi - a, 2.0 * np.pi)


def _body_z(attitude: np.ndarray) -> np.ndarray:
    """World-frame direction of the body z (thrust) axis."""
    phi, theta, psi = attitude[..., 0], attitude[..., 1], attitude[..., 2]
    cphi, sphi = np.cos(phi), np.sin(phi)
    cth, sth = np.cos(theta), np.sin(theta)
    cpsi, spsi = np.cos(psi), np.sin(psi)
    return np.stack([
        cpsi * sth * cphi + spsi * sphi,
        spsi * sth * cphi - cpsi * sphi,
        cth * cphi,
    ], axis=-1)


def _derivatives(x, thrust, torques, rotor_spin, p: QuadParams):
    """State derivative; x is [..., 12], thrust [...], torques [..., 3]."""
    vel = x[..., 3:6]
    att = x[..., 6:9]
    om = x[..., 9:12]
    phi, theta = att[..., 0], att[..., 1]
    cphi, sphi = np.cos(phi), np.sin(phi)
    cth = np.cos(theta)
    # keep the kinematics finite if a transient passes near 90 deg pitch
    cth = np.where(np.abs(cth) < 1e-9, np.copysign(1e-9, cth), cth)
    tth = np.sin(theta) / cth

    acc = (thrust / p.mass)[..., None] * _body_z(att) - p.gravity * _G_AXIS

    pq, qq, rq = om[..., 0], om[..., 1], om[..., 2]
    att_rate = np.stack([
        pq + sphi * tth * qq + cphi * tth * rq,
        cphi * qq - sphi * rq,
        (sphi * qq + cphi * rq) / cth,
    ], axis=-1)

    ix, iy, iz = p.inertia_x, p.inertia_y, p.inertia_z
    om_rate = np.stack([
        ((iy - iz) * qq * rq - p.rotor_inertia * qq * rotor_spin
         + torques[..., 0]) / ix,
        ((iz - ix) * pq * rq + p.rotor_inertia * pq * rotor_spin
         + torques[..., 1]) / iy,
        ((ix - iy) * pq * qq + torques[..., 2]) / iz,
    ], axis=-1)

    return np.concatenate([vel, acc, att_rate, om_rate], axis=-1)


def _rk4(x, thrust, torques, rotor_spin, params: QuadParams, dt: float):
    """One fixed step with the command held constant over the step."""
    k1 = _derivatives(x, thrust, torques, rotor_spin, params)
    k2 = _derivatives(x + 0.5 * dt * k1, thrust, torques, rotor_spin, params)
    k3 = _derivatives(x + 0.5 * dt * k2, thrust, torques, rotor_spin, params)
    k4 = _derivatives(x + dt * k3, thrust, torques, rotor_spin, params)
    out = x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    out[..., 6:9] = _wrap_angles(out[..., 6:9])
    return out


def rotor_spin(speeds) -> np.ndarray:
    """Signed relative rotor speed w1 - w2 + w3 - w4."""
    s = np.asarray(speeds, dtype=float)
    return s[..., 0] - s[..., 1] + s[..., 2] - s[..., 3]


def dynamics_step(state: QuadState, control: ControlOutput,
                  params: QuadParams, dt: float) -> QuadState:
    """Advance one vehicle by a single RK4 step."""
    if not (0.0 < dt <= 0.01):
        raise ValueError(f"dt must lie in (0, 0.01] s, got {dt}")
    x = state.to_vector()
    out = _rk4(x, np.asarray(float(control.thrust)),
               np.asarray(control.torques, dtype=float),
               rotor_spin(control.rotor_speeds), params, dt)
    if not np.all(np.isfinite(out)):
        raise NonFiniteStateError("state diverged during integration")
    return QuadState.from_vector(out)


def rotor_mixer(thrust, torques, params: QuadParams) -> np.ndarray:
    """Rotor speeds realizing (thrust, torques) on the plus airframe.

    Solves the 4x4 map for the squared speeds and clamps them into
    [0, max_rotor_speed^2]; out-of-envelope commands therefore come back
    altered when re-derived from the returned speeds.
    """
    thrust = np.asarray(thrust, dtype=float)
    torques = np.asarray(torques, dtype=float)
    b, k, arm = params.thrust_coeff, params.drag_torque_coeff, params.arm_length
    tx, ty, tz = torques[..., 0], torques[..., 1], torques[..., 2]
    f4 = thrust / (4.0 * b)
    roll = tx / (2.0 * arm * b)
    pitch = ty / (2.0 * arm * b)
    yaw = tz / (4.0 * k)
    sq = np.stack([
        f4 - pitch + yaw,
        f4 - roll - yaw,
        f4 + pitch + yaw,
        f4 + roll - yaw,
    ], axis=-1)
    np.clip(sq, 0.0, params.max_rotor_speed ** 2, out=sq)
    return np.sqrt(sq)


def mixer_forward(speeds, params: QuadParams):
    """Thrust and torques generated by the given rotor speeds."""
    sq = np.asarray(speeds, dtype=float) ** 2
    b, k, arm = params.thrust_coeff, params.drag_torque_coeff, params.arm_length
    thrust = b * sq.sum(axis=-1)
    torques = np.stack([
        arm * b * (sq[..., 3] - sq[..., 1]),
        arm * b * (sq[..., 2] - sq[..., 0]),
        k * (sq[..., 0] - sq[..., 1] + sq[..., 2] - sq[..., 3]),
    ], axis=-1)
    return thrust, torques


def _controller_arrays(x, p_des, v_des, a_des, params: QuadParams,
                       gains: ControlGains):
    """Cascaded tracking law on packed state arrays; returns the
    post-saturation (thrust, torques, speeds)."""
    pos, vel = x[..., 0:3], x[..., 3:6]
    att, om = x[..., 6:9], x[..., 9:12]

    a_cmd = (np.asarray(a_des, dtype=float)
             + gains.kd_pos * (np.asarray(v_des, dtype=float) - vel)
             + gains.kp_pos * (np.asarray(p_des, dtype=float) - pos))
    f = a_cmd + params.gravity * _G_AXIS

    # tilt ceiling: keep a usable vertical command and cap the horizontal pull
    fz = np.maximum(f[..., 2], 0.05 * params.gravity)
    fh = np.hypot(f[..., 0], f[..., 1])
    limit = np.tan(gains.max_tilt) * fz
    scale = np.where(fh > limit, limit / np.maximum(fh, 1e-12), 1.0)
    fx, fy = f[..., 0] * scale, f[..., 1] * scale
    f = np.stack([fx, fy, fz], axis=-1)

    norm = np.linalg.norm(f, axis=-1)
    zd = f / norm[..., None]
    # invert the zero-yaw tilt map: body z = [sin(th)cos(phi), -sin(phi), cos(th)cos(phi)]
    phi_des = -np.arcsin(np.clip(zd[..., 1], -1.0, 1.0))
    theta_des = np.arctan2(zd[..., 0], zd[..., 2])
    att_des = np.stack([phi_des, theta_des, np.zeros_like(phi_des)], axis=-1)

    thrust = params.mass * np.maximum(
        np.einsum("...i,...i->...", f, _body_z(att)), 0.0)

    err = _wrap_angles(att_des - att)
    inertia = np.array([params.inertia_x, params.inertia_y, params.inertia_z])
    om_dot_cmd = gains.kp_att * err - gains.kd_att * om
    torques = inertia * om_dot_cmd + np.cross(om, inertia * om)

    speeds = rotor_mixer(thrust, torques, params)
    thrust, torques = mixer_forward(speeds, params)
    return thrust, torques, speeds


def tracking_controller(state: QuadState, p_des, v_des, a_des,
                        params: QuadParams,
                        gains: ControlGains | None = None) -> ControlOutput:
    """Track a twice-differentiable setpoint.

    The outer loop turns position/velocity error plus feedforward
    acceleration into a specific-force command; thrust is its projection on
    the current body axis and the commanded tilt (yaw held at zero) is
    regulated by the fast inner loop. Commands pass through the rotor mixer,
    so the output is always realizable and self-consistent.
    """
    gains = gains or ControlGains()
    thrust, torques, speeds = _controller_arrays(
        state.to_vector(), p_des, v_des, a_des, params, gains)
    return ControlOutput(thrust=float(thrust), torques=torques,
                         rotor_speeds=speeds)
