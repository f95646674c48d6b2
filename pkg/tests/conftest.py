"""Shared builders and independent oracles for the test suite."""

import itertools

import numpy as np
import pytest

from deformswarm import TeamConfig, WeightSet, validate_config
from deformswarm.training import project_box_simplex


def make_team(boundary, core, layers, neighbors, positions, mix_bounds,
              alpha_min=0.5, alpha_max=1.0, eps=0.3, delta=0.1):
    ids = sorted({i for layer in layers for i in layer})
    interior = tuple(sorted(set(ids) - set(layers[0])))
    return validate_config(TeamConfig(
        n_agents=len(ids),
        reference_positions={i: np.asarray(p, dtype=float)
                             for i, p in positions.items()},
        boundary=tuple(boundary),
        core=core,
        interior=interior,
        layers=tuple(tuple(layer) for layer in layers),
        in_neighbors={i: tuple(n) for i, n in neighbors.items()},
        mix_bounds=tuple(mix_bounds),
        alpha_min=alpha_min,
        alpha_max=alpha_max,
        agent_half_extent=eps,
        tracking_bound=delta,
    ))


def two_layer_team(a1=(10.0, 0.0, 0.0), bounds=(0.2, 0.8), eps=0.15, delta=0.1,
                   n_followers=2):
    """Boundary 1 + core 2 leading a single follower layer; margins along x
    are affine in the contraction, which makes line-search crossings exact."""
    followers = tuple(range(3, 3 + n_followers))
    return make_team(
        boundary=(1,), core=2,
        layers=((1, 2), followers),
        neighbors={f: (1, 2) for f in followers},
        positions={1: a1, 2: (0, 0, 0),
                   **{f: (5.0, 0.0, 0.0) for f in followers}},
        mix_bounds=(bounds,),
        eps=eps, delta=delta,
    )


def random_team(rng, max_layers=3):
    """Random layered team with feasible bounds and sparse neighbor sets."""
    n_layer1 = int(rng.integers(2, 5))
    layers = [tuple(range(1, n_layer1 + 1))]
    next_id = n_layer1 + 1
    for _ in range(int(rng.integers(1, max_layers))):
        size = int(rng.integers(1, 5))
        layers.append(tuple(range(next_id, next_id + size)))
        next_id += size
    ids = [i for layer in layers for i in layer]
    core = n_layer1
    positions = {i: rng.uniform(-10, 10, 3) for i in ids}
    positions[core] = np.zeros(3)

    neighbors = {}
    pool = list(layers[0])
    for layer in layers[1:]:
        for i in layer:
            k = int(rng.integers(2, min(3, len(pool)) + 1))
            neighbors[i] = tuple(sorted(rng.choice(pool, size=k, replace=False)))
        pool += list(layer)

    mix_bounds = tuple((0.05, 0.95) for _ in layers[1:])
    return make_team(
        boundary=tuple(range(1, n_layer1)), core=core, layers=layers,
        neighbors=neighbors, positions=positions, mix_bounds=mix_bounds,
        alpha_min=0.5, alpha_max=1.5,
    )


def random_weights(config, rng):
    """Feasible random weights: box-uniform rows projected, scales in-box."""
    alpha = {i: float(rng.uniform(config.alpha_min, config.alpha_max))
             for i in config.layers[0]}
    mix = {}
    for i in config.followers:
        nbrs = config.in_neighbors[i]
        lo, hi = config.bounds_for(i)
        row = project_box_simplex(rng.uniform(lo, hi, len(nbrs)), lo, hi)
        mix[i] = {j: float(w) for j, w in zip(nbrs, row)}
    return WeightSet(alpha=alpha, mix=mix)


def naive_loss(config, alpha, mix, d):
    """Unconstrained loss by plain loops; independent of the library path."""
    d = np.asarray(d, dtype=float)
    pos = {}
    for i in config.layers[0]:
        pos[i] = alpha[i] * np.asarray(config.reference_positions[i]) + d
    for layer in config.layers[1:]:
        for i in layer:
            acc = np.zeros(3)
            for j in config.in_neighbors[i]:
                acc = acc + mix[i][j] * pos[j]
            pos[i] = acc
    out = sum(pos[i] for i in config.last_layer) / len(config.last_layer)
    r = out - d
    return float(r @ r)


def fd_gradient(config, weights, d, h=1e-6):
    """Central finite differences of the unconstrained loss."""
    ga = {}
    for i in config.layers[0]:
        up = dict(weights.alpha)
        dn = dict(weights.alpha)
        up[i] += h
        dn[i] -= h
        ga[i] = (naive_loss(config, up, weights.mix, d)
                 - naive_loss(config, dn, weights.mix, d)) / (2 * h)
    gm = {}
    for i in config.followers:
        gm[i] = {}
        for j in config.in_neighbors[i]:
            up = {k: dict(r) for k, r in weights.mix.items()}
            dn = {k: dict(r) for k, r in weights.mix.items()}
            up[i][j] += h
            dn[i][j] -= h
            gm[i][j] = (naive_loss(config, weights.alpha, up, d)
                        - naive_loss(config, weights.alpha, dn, d)) / (2 * h)
    return ga, gm


def grid_project_oracle(v, lo, hi, rounds=8, pts=25):
    """Dense enumeration of the feasible set; no multiplier math.

    A zooming grid finds the basin, then dense 1-D grids along the
    weight-exchange directions e_i - e_j polish it. The exchange sections
    are strictly convex segments with exact endpoints, which resolves the
    flat valleys and bound corners that defeat a plain axis-aligned zoom.
    """
    v = np.asarray(v, dtype=float)
    n = v.size
    if n == 1:
        return np.array([1.0])

    center = np.full(n - 1, 1.0 / n)
    half = (hi - lo) + 1e-12   # first window must cover the whole box
    best = None
    for _ in range(rounds):
        axes = [np.unique(np.concatenate([
                    np.linspace(max(lo, c - half), min(hi, c + half), pts),
                    [lo, hi]]))
                for c in center]
        mesh = np.meshgrid(*axes, indexing="ij")
        head = np.stack([m.ravel() for m in mesh], axis=1)
        last = 1.0 - head.sum(axis=1)
        keep = (last >= lo - 1e-12) & (last <= hi + 1e-12)
        if not keep.any():
            half *= 0.5
            continue
        cand = np.column_stack([head[keep], last[keep]])
        d2 = ((cand - v) ** 2).sum(axis=1)
        best = cand[int(np.argmin(d2))]
        center = best[:-1]
        half *= 0.35

    w = np.clip(best, lo, hi)
    for _ in range(60):
        moved = 0.0
        for i in range(n):
            for j in range(i + 1, n):
                t_min = max(lo - w[i], w[j] - hi)
                t_max = min(hi - w[i], w[j] - lo)
                if t_max < t_min:
                    continue
                a, b = t_min, t_max
                best_t = 0.0
                for _ in range(8):
                    ts = np.linspace(a, b, 33)
                    d2 = (w[i] + ts - v[i]) ** 2 + (w[j] - ts - v[j]) ** 2
                    best_t = float(ts[int(np.argmin(d2))])
                    step = (b - a) / 32.0
                    a = max(t_min, best_t - step)
                    b = min(t_max, best_t + step)
                w[i] += best_t
                w[j] -= best_t
                moved = max(moved, abs(best_t))
        if moved < 1e-13:
            break
    return w


def point_in_hull(point, vertices, tol=1e-9):
    """Feasibility of convex coefficients via linear programming."""
    from scipy.optimize import linprog

    vertices = np.asarray(vertices, dtype=float)
    m = vertices.shape[0]
    a_eq = np.vstack([vertices.T, np.ones(m)])
    b_eq = np.concatenate([np.asarray(point, dtype=float), [1.0]])
    res = linprog(np.zeros(m), A_eq=a_eq, b_eq=b_eq,
                  bounds=[(0, None)] * m, method="highs")
    if res.status != 0:
        return False
    residual = np.abs(a_eq @ res.x - b_eq).max()
    return residual <= tol * max(1.0, np.abs(b_eq).max())


def naive_pair_margin(leader_positions, row_i, row_h):
    """Axis sums by explicit loops, then the best axis."""
    union = sorted(set(row_i) | set(row_h))
    best = -np.inf
    for axis in range(3):
        total = 0.0
        for j in union:
            dw = row_i.get(j, 0.0) - row_h.get(j, 0.0)
            total += abs(dw * leader_positions[j][axis])
        best = max(best, total)
    return best


def naive_layer2_min_margin(config, rows_by_follower, alpha, min_row_diff):
    """Exhaustive sweep for two-layer teams (followers led by layer 1 only)."""
    best = np.inf
    layer2 = config.layers[1]
    leader_pos = {j: alpha * np.asarray(config.reference_positions[j])
                  for j in config.layers[0]}
    for i, h in itertools.combinations(layer2, 2):
        ni, nh = config.in_neighbors[i], config.in_neighbors[h]
        union = sorted(set(ni) | set(nh))
        for ri in rows_by_follower[i]:
            wi = {j: ri[ni.index(j)] if j in ni else 0.0 for j in union}
            for rh in rows_by_follower[h]:
                wh = {j: rh[nh.index(j)] if j in nh else 0.0 for j in union}
                if max(abs(wi[j] - wh[j]) for j in union) < min_row_diff:
                    continue
                best = min(best, naive_pair_margin(leader_pos, wi, wh))
    return best


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)
