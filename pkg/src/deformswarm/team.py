"""Team data model and the layered planning pass.

An N-agent team is split into boundary leaders, a single core leader, and
interior followers. Layer-1 agents (boundary + core) place themselves by
scaling a fixed reference offset and adding the shared team position d.
Every agent in a later layer is a convex combination of agents from earlier
layers, so the formation can deform locally while each follower stays inside
the hull of its in-neighbors. The last layer holds the pure followers; their
mean defines the team output used by the training loss.
"""

from dataclasses import dataclass, field

import numpy as np

# Absolute tolerance on each convex-combination row summing to one.
WEIGHT_SUM_TOL = 1e-9


class WeightSumViolation(ValueError):
    """A mixing row does not sum to one within WEIGHT_SUM_TOL."""


class EmptyLayerError(ValueError):
    """An operation over a layer received an empty agent set."""


@dataclass(frozen=True)
class Violation:
    """One failed configuration invariant."""

    kind: str
    message: str

    def __str__(self):
        return f"[{self.kind}] {self.message}"


class ConfigError(ValueError):
    """Raised by validate_config with the full list of violated invariants."""

    def __init__(self, violations):
        self.violations = list(violations)
        lines = "\n".join(f"  {v}" for v in self.violations)
        super().__init__(f"invalid team configuration:\n{lines}")


@dataclass(eq=False)
class TeamConfig:
    """Static description of the team: partition, layers, bounds, geometry.

    reference_positions maps every agent id to its constant 3-vector offset
    (meters). layers stores disjoint per-layer agent tuples in planning
    order; layer 1 must equal boundary + core. in_neighbors gives, for each
    follower, the agents whose positions enter its convex combination; they
    may come from any earlier layer. mix_bounds[k-1] is the (lo, hi) box for
    the rows of followers in layer k+1.
    """

    n_agents: int
    reference_positions: dict[int, np.ndarray]
    boundary: tuple[int, ...]
    core: int
    interior: tuple[int, ...]
    layers: tuple[tuple[int, ...], ...]
    in_neighbors: dict[int, tuple[int, ...]]
    mix_bounds: tuple[tuple[float, float], ...]
    alpha_min: float = 0.5
    alpha_max: float = 1.0
    agent_half_extent: float = 0.3
    tracking_bound: float = 0.1
    notes: dict = field(default_factory=dict)

    @property
    def agents(self) -> tuple[int, ...]:
        return tuple(sorted(i for layer in self.layers for i in layer))

    @property
    def followers(self) -> tuple[int, ...]:
        return tuple(i for layer in self.layers[1:] for i in layer)

    @property
    def last_layer(self) -> tuple[int, ...]:
        return self.layers[-1]

    def layer_index(self, agent: int) -> int:
        """1-based planning layer of an agent."""
        for k, layer in enumerate(self.layers, start=1):
            if agent in layer:
                return k
        raise KeyError(agent)

    def bounds_for(self, follower: int) -> tuple[float, float]:
        """Box bounds applying to a follower's mixing row."""
        return self.mix_bounds[self.layer_index(follower) - 2]


@dataclass(eq=False)
class WeightSet:
    """Trainable planning parameters.

    alpha holds the per-leader scale factor on the reference offset; mix
    holds, per follower, the convex-combination row over its in-neighbors.
    """

    alpha: dict[int, float]
    mix: dict[int, dict[int, float]]

    def copy(self) -> "WeightSet":
        return WeightSet(
            alpha=dict(self.alpha),
            mix={i: dict(row) for i, row in self.mix.items()},
        )


@dataclass(eq=False)
class DesiredSnapshot:
    """Planned positions of every agent at one instant."""

    time: float
    positions: dict[int, np.ndarray]


def _as_vec3(value) -> np.ndarray:
    v = np.asarray(value, dtype=float)
    if v.shape != (3,):
        raise ValueError(f"expected a 3-vector, got shape {v.shape}")
    return v


def validate_config(raw: TeamConfig) -> TeamConfig:
    """Check every configuration invariant; raise ConfigError listing all failures.

    Followers without an explicit in-neighbor set default to the full union
    of all preceding layers (then must still pass the box feasibility test).
    Returns the validated config, with defaults filled in.
    """
    bad: list[Violation] = []

    layers = tuple(tuple(int(i) for i in layer) for layer in raw.layers)
    boundary = tuple(int(i) for i in raw.boundary)
    core = int(raw.core)
    interior = tuple(int(i) for i in raw.interior)

    b_set, i_set = set(boundary), set(interior)
    c_set = {core}
    for name_a, set_a, name_b, set_b in (
        ("boundary", b_set, "core", c_set),
        ("boundary", b_set, "interior", i_set),
        ("core", c_set, "interior", i_set),
    ):
        common = set_a & set_b
        if common:
            bad.append(Violation(
                "partition_overlap",
                f"{name_a} and {name_b} share agents {sorted(common)}",
            ))

    all_ids = b_set | c_set | i_set
    if all_ids != set(range(1, raw.n_agents + 1)):
        bad.append(Violation(
            "bad_agent_ids",
            f"boundary+core+interior must cover ids 1..{raw.n_agents} exactly, "
            f"got {sorted(all_ids)}",
        ))

    if not layers:
        bad.append(Violation("layer_mismatch", "no planning layers defined"))
        raise ConfigError(bad)

    seen: set[int] = set()
    for k, layer in enumerate(layers, start=1):
        dup = seen & set(layer)
        if dup:
            bad.append(Violation(
                "layer_mismatch", f"agents {sorted(dup)} appear in more than one layer"))
        seen |= set(layer)
    if seen != all_ids:
        bad.append(Violation(
            "layer_mismatch",
            f"layers must cover every agent exactly once, got {sorted(seen)}",
        ))
    if set(layers[0]) != b_set | c_set:
        bad.append(Violation(
            "layer_mismatch",
            f"layer 1 must equal boundary+core {sorted(b_set | c_set)}, got {sorted(layers[0])}",
        ))

    positions: dict[int, np.ndarray] = {}
    for i in sorted(all_ids):
        if i not in raw.reference_positions:
            bad.append(Violation("missing_reference", f"agent {i} has no reference position"))
            continue
        try:
            positions[i] = _as_vec3(raw.reference_positions[i])
        except ValueError as exc:
            bad.append(Violation("missing_reference", f"agent {i}: {exc}"))
            continue
        if not np.all(np.isfinite(positions[i])):
            bad.append(Violation("missing_reference", f"agent {i} reference is not finite"))
    if core in positions and np.any(positions[core] != 0.0):
        bad.append(Violation(
            "core_not_at_origin",
            f"core agent {core} reference must be the zero vector, got {positions[core].tolist()}",
        ))

    p = len(layers)
    if len(raw.mix_bounds) != p - 1:
        bad.append(Violation(
            "bad_bounds",
            f"need one (lo, hi) mixing bound per follower layer: expected {p - 1}, "
            f"got {len(raw.mix_bounds)}",
        ))
    for k, (lo, hi) in enumerate(raw.mix_bounds, start=1):
        if not (0.0 <= lo <= hi <= 1.0):
            bad.append(Violation(
                "bad_bounds", f"layer-{k} mixing bounds must satisfy 0 <= lo <= hi <= 1, got ({lo}, {hi})"))

    if not (0.0 < raw.alpha_min <= raw.alpha_max):
        bad.append(Violation(
            "bad_bounds",
            f"leader scale bounds must satisfy 0 < alpha_min <= alpha_max, "
            f"got ({raw.alpha_min}, {raw.alpha_max})",
        ))
    if raw.agent_half_extent <= 0:
        bad.append(Violation("bad_scalar", f"agent_half_extent must be > 0, got {raw.agent_half_extent}"))
    if raw.tracking_bound <= 0:
        bad.append(Violation("bad_scalar", f"tracking_bound must be > 0, got {raw.tracking_bound}"))

    in_neighbors: dict[int, tuple[int, ...]] = {}
    pool: set[int] = set(layers[0])
    for k, layer in enumerate(layers[1:], start=1):
        lo, hi = raw.mix_bounds[k - 1] if k - 1 < len(raw.mix_bounds) else (0.0, 1.0)
        for i in layer:
            nbrs = raw.in_neighbors.get(i)
            if nbrs is None:
                nbrs = tuple(sorted(pool))  # default: everything planned so far
            else:
                nbrs = tuple(int(j) for j in nbrs)
            in_neighbors[i] = nbrs
            if len(nbrs) == 0:
                bad.append(Violation("empty_neighbor_set", f"follower {i} has no in-neighbors"))
                continue
            if len(set(nbrs)) != len(nbrs):
                bad.append(Violation("bad_neighbor", f"follower {i} lists duplicate in-neighbors"))
            outside = [j for j in nbrs if j not in pool]
            if outside:
                bad.append(Violation(
                    "bad_neighbor",
                    f"follower {i} (layer {k + 1}) draws on {outside}, which are not in earlier layers",
                ))
            n = len(nbrs)
            if n * lo > 1.0 + 1e-12 or n * hi < 1.0 - 1e-12:
                bad.append(Violation(
                    "infeasible_bounds",
                    f"follower {i}: {n} in-neighbors with bounds [{lo}, {hi}] cannot sum to 1 "
                    f"({n}*{lo} <= 1 <= {n}*{hi} fails)",
                ))
        pool |= set(layer)

    extra = set(raw.in_neighbors) - set(in_neighbors)
    if extra:
        bad.append(Violation(
            "bad_neighbor", f"in-neighbor sets given for non-followers {sorted(extra)}"))

    if bad:
        raise ConfigError(bad)

    return TeamConfig(
        n_agents=raw.n_agents,
        reference_positions=positions,
        boundary=boundary,
        core=core,
        interior=interior,
        layers=layers,
        in_neighbors=in_neighbors,
        mix_bounds=tuple((float(lo), float(hi)) for lo, hi in raw.mix_bounds),
        alpha_min=float(raw.alpha_min),
        alpha_max=float(raw.alpha_max),
        agent_half_extent=float(raw.agent_half_extent),
        tracking_bound=float(raw.tracking_bound),
        notes=dict(raw.notes),
    )


def leader_desired(reference: np.ndarray, alpha: float, d: np.ndarray) -> np.ndarray:
    """Planned position of a layer-1 agent: scaled reference offset plus team position."""
    return alpha * np.asarray(reference, dtype=float) + np.asarray(d, dtype=float)


def follower_desired(mix_row, leader_positions) -> np.ndarray:
    """Convex combination of the in-neighbors' positions.

    mix_row maps in-neighbor id to weight; weights must sum to one within
    WEIGHT_SUM_TOL. The result lies in the convex hull of the referenced
    positions whenever all weights are nonnegative.
    """
    total = sum(mix_row.values())
    if abs(total - 1.0) > WEIGHT_SUM_TOL:
        raise WeightSumViolation(f"mixing row sums to {total!r}, expected 1")
    out = np.zeros(3)
    for j, w in mix_row.items():
        out += w * np.asarray(leader_positions[j], dtype=float)
    return out


def forward_pass(config: TeamConfig, weights: WeightSet, d, t: float = 0.0) -> DesiredSnapshot:
    """Plan every agent's position at team position d.

    Layer 1 is placed from the reference offsets; each later layer mixes the
    positions already planned for its in-neighbors, in layer order.
    """
    d = _as_vec3(d)
    positions: dict[int, np.ndarray] = {}
    for i in config.layers[0]:
        positions[i] = leader_desired(config.reference_positions[i], weights.alpha[i], d)
    for layer in config.layers[1:]:
        for i in layer:
            try:
                positions[i] = follower_desired(weights.mix[i], positions)
            except WeightSumViolation as exc:
                raise WeightSumViolation(f"agent {i}: {exc}") from None
    return DesiredSnapshot(time=float(t), positions=positions)


def team_output(snapshot: DesiredSnapshot, last_layer) -> np.ndarray:
    """Mean planned position over the pure-follower layer."""
    members = tuple(last_layer)
    if not members:
        raise EmptyLayerError("team output over an empty layer")
    out = np.zeros(3)
    for i in members:
        out += snapshot.positions[i]
    return out / len(members)


def loss(snapshot: DesiredSnapshot, last_layer, d) -> float:
    """Squared distance between the team output and the team position."""
    r = team_output(snapshot, last_layer) - _as_vec3(d)
    return float(r @ r)


def constraint_residual(config: TeamConfig, weights: WeightSet) -> float:
    """Largest violation of the weight box/sum constraints (0 when feasible)."""
    worst = 0.0
    for i in config.layers[0]:
        a = weights.alpha[i]
        worst = max(worst, config.alpha_min - a, a - config.alpha_max)
    for i in config.followers:
        lo, hi = config.bounds_for(i)
        row = weights.mix[i]
        total = 0.0
        for j in config.in_neighbors[i]:
            w = row[j]
            total += w
            worst = max(worst, lo - w, w - hi)
        worst = max(worst, abs(total - 1.0))
    return worst
