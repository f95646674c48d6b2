"""Configuration ingestion and artifact persistence.

The run configuration is one INI-style file with sections [team],
[scenario], [vehicle], [trainer], and [safety]; omitted keys fall back to
the shipped defaults. CSV columns are fixed and documented in the README;
floats are written as shortest round-trip decimals so emit-then-parse is
exact and re-runs are byte-identical.
"""

import configparser
import csv
import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from .safety import SafetyCertificate
from .scenario import EllipseTrajectory, SimLog
from .team import DesiredSnapshot, TeamConfig, WeightSet, validate_config
from .training import TrainSettings, TrainTrace
from .vehicle import ControlGains, QuadParams

DESIRED_COLUMNS = ("t", "agent_id", "x_d", "y_d", "z_d")
STATE_COLUMNS = ("t", "id", "x", "y", "z", "roll", "pitch", "yaw",
                 "F", "w1", "w2", "w3", "w4")
TRACE_COLUMNS = ("epoch", "loss", "max_residual")


class ParseError(ValueError):
    """Configuration file could not be parsed; carries location context."""

    def __init__(self, message, path=None, line=None):
        where = ""
        if path is not None:
            where = f"{path}"
            if line is not None:
                where += f":{line}"
            where += ": "
        super().__init__(f"{where}{message}")
        self.path = path
        self.line = line


@dataclass
class SafetySettings:
    delta_alpha: float = 0.01
    sampler: str = "grid"
    grid_points: int = 5
    random_rows: int = 64
    min_row_difference: float = 0.05
    seed: int = 0


@dataclass
class RunSetup:
    """Everything one run needs, parsed and validated."""

    team: TeamConfig
    trajectory: EllipseTrajectory = field(default_factory=EllipseTrajectory)
    vehicle: QuadParams = field(default_factory=QuadParams)
    gains: ControlGains = field(default_factory=ControlGains)
    trainer: TrainSettings = field(default_factory=TrainSettings)
    safety: SafetySettings = field(default_factory=SafetySettings)
    sim_dt: float = 0.002
    duration: float | None = None


def bundled_config_path() -> Path:
    """Path of the packaged 16-agent ellipse configuration."""
    return Path(resources.files("deformswarm").joinpath("data/team16_ellipse.cfg"))


def _fmt(x) -> str:
    return repr(float(x))


def _ids(text: str) -> tuple[int, ...]:
    return tuple(int(tok) for tok in text.replace(",", " ").split())


def _id_map(text: str, path, key):
    """Parse multi-line 'id: values' blocks."""
    out = {}
    for raw_line in text.strip().splitlines():
        line = raw_line.strip()
        if not line:
            continue
        if ":" not in line:
            raise ParseError(f"[team] {key}: expected 'id: values', got {line!r}", path)
        head, tail = line.split(":", 1)
        out[int(head)] = tail
    return out


def _section(parser, name):
    return parser[name] if parser.has_section(name) else {}


def _get(section, key, cast, default, path):
    if key not in section:
        return default
    try:
        return cast(section[key])
    except (TypeError, ValueError) as exc:
        raise ParseError(f"bad value for {key}: {exc}", path) from None


def load_config(path) -> RunSetup:
    """Parse, default, and validate a run configuration file."""
    path = Path(path)
    # ';' separates list entries in values, so only '#' starts a comment
    parser = configparser.ConfigParser(inline_comment_prefixes=("#",))
    try:
        with open(path) as fh:
            parser.read_file(fh, source=str(path))
    except FileNotFoundError:
        raise
    except configparser.Error as exc:
        line = getattr(exc, "lineno", None)
        raise ParseError(str(exc.message if hasattr(exc, "message") else exc),
                         path, line) from None

    if not parser.has_section("team"):
        raise ParseError("missing required [team] section", path)
    team_sec = parser["team"]

    try:
        n_agents = int(team_sec["n_agents"])
        boundary = _ids(team_sec["boundary"])
        core = int(team_sec["core"])
        layers = tuple(_ids(part) for part in team_sec["layers"].split(";"))
        mix_bounds = tuple(
            tuple(float(v) for v in part.split())
            for part in team_sec["mix_bounds"].split(";"))
        positions = {
            i: np.array([float(v) for v in tail.split()])
            for i, tail in _id_map(team_sec["reference_positions"], path,
                                   "reference_positions").items()
        }
        neighbors = {
            i: _ids(tail)
            for i, tail in _id_map(team_sec.get("in_neighbors", ""), path,
                                   "in_neighbors").items()
        }
    except ParseError:
        raise
    except (KeyError, ValueError) as exc:
        raise ParseError(f"[team] section: {exc!r}", path) from None

    layer1 = set(layers[0]) if layers else set()
    interior = tuple(sorted(set(range(1, n_agents + 1)) - layer1))
    team = validate_config(TeamConfig(
        n_agents=n_agents,
        reference_positions=positions,
        boundary=boundary,
        core=core,
        interior=interior,
        layers=layers,
        in_neighbors=neighbors,
        mix_bounds=mix_bounds,
        alpha_min=_get(team_sec, "alpha_min", float, 0.5, path),
        alpha_max=_get(team_sec, "alpha_max", float, 1.0, path),
        agent_half_extent=_get(team_sec, "agent_half_extent", float, 0.3, path),
        tracking_bound=_get(team_sec, "tracking_bound", float, 0.1, path),
    ))

    scen = _section(parser, "scenario")
    trajectory = EllipseTrajectory(
        semi_major=_get(scen, "semi_major", float, 100.0, path),
        semi_minor=_get(scen, "semi_minor", float, 80.0, path),
        period=_get(scen, "period", float, 60.0, path),
        altitude=_get(scen, "altitude", float, 10.0, path),
        phase=_get(scen, "phase", float, 0.0, path),
    )
    sim_dt = _get(scen, "dt", float, 0.002, path)
    duration = _get(scen, "duration", float, None, path)

    veh = _section(parser, "vehicle")
    vehicle = QuadParams(
        mass=_get(veh, "mass", float, 0.5, path),
        gravity=_get(veh, "gravity", float, 9.81, path),
        arm_length=_get(veh, "arm_length", float, 0.25, path),
        rotor_inertia=_get(veh, "rotor_inertia", float, 3.357e-5, path),
        inertia_x=_get(veh, "inertia_x", float, 0.0196, path),
        inertia_y=_get(veh, "inertia_y", float, 0.0196, path),
        inertia_z=_get(veh, "inertia_z", float, 0.0264, path),
        thrust_coeff=_get(veh, "thrust_coeff", float, 3e-5, path),
        drag_torque_coeff=_get(veh, "drag_torque_coeff", float, 1.1e-6, path),
        max_rotor_speed=_get(veh, "max_rotor_speed", float, 1000.0, path),
    )
    gains = ControlGains(
        kp_pos=_get(veh, "kp_pos", float, 4.0, path),
        kd_pos=_get(veh, "kd_pos", float, 4.0, path),
        kp_att=_get(veh, "kp_att", float, 400.0, path),
        kd_att=_get(veh, "kd_att", float, 40.0, path),
        max_tilt=_get(veh, "max_tilt", float, float(np.deg2rad(45.0)), path),
    )

    tr = _section(parser, "trainer")
    trainer = TrainSettings(
        epochs=_get(tr, "epochs", int, 6000, path),
        learning_rate=_get(tr, "learning_rate", float, 0.01, path),
        seed=_get(tr, "seed", int, 0, path),
        projection_tolerance=_get(tr, "projection_tolerance", float, 1e-9, path),
        log_every=_get(tr, "log_every", int, 50, path),
    )

    saf = _section(parser, "safety")
    safety = SafetySettings(
        delta_alpha=_get(saf, "delta_alpha", float, 0.01, path),
        sampler=_get(saf, "sampler", str, "grid", path),
        grid_points=_get(saf, "grid_points", int, 5, path),
        random_rows=_get(saf, "random_rows", int, 64, path),
        min_row_difference=_get(saf, "min_row_difference", float, 0.05, path),
        seed=_get(saf, "seed", int, 0, path),
    )

    return RunSetup(team=team, trajectory=trajectory, vehicle=vehicle,
                    gains=gains, trainer=trainer, safety=safety,
                    sim_dt=sim_dt, duration=duration)


def save_weights(weights: WeightSet, path):
    payload = {
        "alpha": {str(i): float(a) for i, a in weights.alpha.items()},
        "mix": {str(i): {str(j): float(w) for j, w in row.items()}
                for i, row in weights.mix.items()},
    }
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def load_weights(path) -> WeightSet:
    payload = json.loads(Path(path).read_text())
    return WeightSet(
        alpha={int(i): float(a) for i, a in payload["alpha"].items()},
        mix={int(i): {int(j): float(w) for j, w in row.items()}
             for i, row in payload["mix"].items()},
    )


def save_certificate(cert: SafetyCertificate, path):
    Path(path).write_text(json.dumps(cert.to_dict(), indent=2, sort_keys=True) + "\n")


def write_desired_csv(log: SimLog, path):
    """Rows (t, agent_id, x_d, y_d, z_d), agents grouped per time step."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(DESIRED_COLUMNS)
        for n, t in enumerate(log.times):
            for idx, agent in enumerate(log.agent_ids):
                writer.writerow([_fmt(t), agent, *map(_fmt, log.desired[n, idx])])


def write_states_csv(log: SimLog, path):
    """Rows (t, id, x, y, z, roll, pitch, yaw, F, w1..w4)."""
    if log.actual is None:
        raise ValueError("log has no vehicle states")
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(STATE_COLUMNS)
        for n, t in enumerate(log.times):
            for idx, agent in enumerate(log.agent_ids):
                writer.writerow([
                    _fmt(t), agent,
                    *map(_fmt, log.actual[n, idx]),
                    *map(_fmt, log.attitude[n, idx]),
                    _fmt(log.thrust[n, idx]),
                    *map(_fmt, log.rotor_speeds[n, idx]),
                ])


def write_trace_csv(trace: TrainTrace, path):
    """Rows (epoch, loss, max_residual)."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(TRACE_COLUMNS)
        for e, l, r in zip(trace.epochs, trace.loss, trace.max_residual):
            writer.writerow([int(e), _fmt(l), _fmt(r)])


def emit_csv(obj, path):
    """Write a log, trace, or planning snapshot to CSV with its documented
    column order."""
    if isinstance(obj, TrainTrace):
        write_trace_csv(obj, path)
    elif isinstance(obj, SimLog):
        if obj.actual is not None:
            write_states_csv(obj, path)
        else:
            write_desired_csv(obj, path)
    elif isinstance(obj, DesiredSnapshot):
        ids = tuple(sorted(obj.positions))
        one = SimLog(times=np.array([obj.time]), agent_ids=ids,
                     desired=np.stack([obj.positions[i] for i in ids])[None, :])
        write_desired_csv(one, path)
    else:
        raise TypeError(f"cannot emit {type(obj).__name__} as CSV")


def _read_rows(path, expected_header):
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = tuple(next(reader))
        if header != tuple(expected_header):
            raise ParseError(f"unexpected header {header}", path)
        return [row for row in reader]


def read_desired_csv(path) -> SimLog:
    rows = _read_rows(path, DESIRED_COLUMNS)
    data = np.array([[float(v) for v in row] for row in rows])
    times = np.unique(data[:, 0])
    ids = tuple(int(i) for i in np.unique(data[:, 1]))
    desired = np.empty((times.size, len(ids), 3))
    index = {t: n for n, t in enumerate(times)}
    col = {a: k for k, a in enumerate(ids)}
    for row in data:
        desired[index[row[0]], col[int(row[1])]] = row[2:5]
    return SimLog(times=times, agent_ids=ids, desired=desired)


def read_states_csv(path, desired_log: SimLog | None = None) -> SimLog:
    """Rebuild a SimLog from a state CSV, optionally merging the planned
    positions read separately."""
    rows = _read_rows(path, STATE_COLUMNS)
    data = np.array([[float(v) for v in row] for row in rows])
    times = np.unique(data[:, 0])
    ids = tuple(int(i) for i in np.unique(data[:, 1]))
    shape = (times.size, len(ids))
    actual = np.empty(shape + (3,))
    attitude = np.empty(shape + (3,))
    thrust = np.empty(shape)
    speeds = np.empty(shape + (4,))
    index = {t: n for n, t in enumerate(times)}
    col = {a: k for k, a in enumerate(ids)}
    for row in data:
        n, k = index[row[0]], col[int(row[1])]
        actual[n, k] = row[2:5]
        attitude[n, k] = row[5:8]
        thrust[n, k] = row[8]
        speeds[n, k] = row[9:13]
    if desired_log is not None:
        if (desired_log.agent_ids != ids
                or desired_log.times.shape != times.shape
                or not np.array_equal(desired_log.times, times)):
            raise ParseError("desired and state logs disagree on grid or agents", path)
        desired = desired_log.desired
    else:
        desired = np.full(shape + (3,), np.nan)
    return SimLog(times=times, agent_ids=ids, desired=desired, actual=actual,
                  attitude=attitude, thrust=thrust, rotor_speeds=speeds)
