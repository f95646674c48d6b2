"""Collision-avoidance predicates, the contraction line search, and certificates.

Two planned agents are treated as safe when their enclosing boxes cannot
overlap even under worst-case tracking error: the planned positions must
differ by more than 2*(tracking_bound + half_extent) along at least one
axis. Actual positions only need to clear 2*half_extent. The contraction
search finds the smallest uniform shrink factor of the leader layout for
which the worst-case inter-follower gap bound still clears the planned
threshold for every sampled pair of mixing rows.
"""

import itertools
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .team import (
    WEIGHT_SUM_TOL,
    DesiredSnapshot,
    TeamConfig,
    WeightSet,
)
from .training import initial_weights, project_box_simplex
from .util import worker_count

_AXES = ("x", "y", "z")


class NeverFeasible(RuntimeError):
    """The pair-margin constraint already fails at full scale (alpha = 1)."""

    def __init__(self, message, certificate=None):
        super().__init__(message)
        self.certificate = certificate


class InvalidStep(ValueError):
    """The line-search step must lie strictly inside (0, 1)."""


class EmptyLog(ValueError):
    """certify_run received a log without any samples."""


@dataclass(frozen=True)
class SeparationReport:
    """Per-axis gaps of one unordered agent pair against a threshold."""

    pair: tuple[int, int]
    gaps: np.ndarray
    threshold: float
    box_separated: bool       # some axis gap exceeds the threshold
    strict_all_axes: bool     # every axis gap exceeds the threshold


@dataclass(frozen=True)
class ContainmentViolation:
    kind: str                 # "negative_weight" or "row_sum"
    follower: int
    leader: int | None
    layer: int
    value: float


@dataclass(frozen=True)
class CheckRecord:
    """One evaluated safety check; passing means margin > threshold."""

    check: str
    time: float | None
    pair: tuple[int, int] | None
    axis: str | None
    margin: float
    threshold: float

    @property
    def passed(self) -> bool:
        return self.margin > self.threshold

    def to_dict(self) -> dict:
        return {
            "check": self.check,
            "time": self.time,
            "pair": list(self.pair) if self.pair else None,
            "axis": self.axis,
            "margin": self.margin,
            "threshold": self.threshold,
            "passed": self.passed,
        }


@dataclass
class SafetyCertificate:
    passed: bool
    alpha_min: float | None
    parameters: dict
    checks: list[CheckRecord] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "passed": self.passed,
            "alpha_min": self.alpha_min,
            "parameters": self.parameters,
            "checks": [c.to_dict() for c in self.checks],
        }


def _positions_of(snapshot) -> dict[int, np.ndarray]:
    if isinstance(snapshot, DesiredSnapshot):
        return snapshot.positions
    return snapshot


def pairwise_separation(snapshot, eps: float, threshold: float | None = None):
    """Per-axis gap report for every unordered agent pair.

    threshold defaults to 2*eps (actual positions); pass
    2*(tracking_bound + eps) when checking planned positions.
    """
    thr = 2.0 * eps if threshold is None else float(threshold)
    positions = _positions_of(snapshot)
    ids = sorted(positions)
    reports = []
    for i, j in itertools.combinations(ids, 2):
        gaps = np.abs(np.asarray(positions[i], dtype=float)
                      - np.asarray(positions[j], dtype=float))
        reports.append(SeparationReport(
            pair=(i, j),
            gaps=gaps,
            threshold=thr,
            box_separated=bool(gaps.max() > thr),
            strict_all_axes=bool(gaps.min() > thr),
        ))
    return reports


def containment_check(config: TeamConfig, weights: WeightSet):
    """Every mixing weight nonnegative and every row summing to one.

    Returns (ok, violations); violations carry the offending
    (follower, leader, layer) triples.
    """
    violations: list[ContainmentViolation] = []
    for i in config.followers:
        layer = config.layer_index(i)
        row = weights.mix[i]
        total = 0.0
        for j in config.in_neighbors[i]:
            w = row[j]
            total += w
            if w < 0.0:
                violations.append(ContainmentViolation("negative_weight", i, j, layer, w))
        if abs(total - 1.0) > WEIGHT_SUM_TOL:
            violations.append(ContainmentViolation("row_sum", i, None, layer, total))
    return not violations, violations


def weight_margin_axes(leader_positions, row_i, row_h) -> np.ndarray:
    """Per-axis worst-case planned-gap bound between two followers.

    Sums |(w_i - w_h) * q| coordinate-wise over the union of the two
    in-neighbor sets; an absent neighbor contributes weight zero.
    """
    axes = np.zeros(3)
    for j in set(row_i) | set(row_h):
        dw = row_i.get(j, 0.0) - row_h.get(j, 0.0)
        axes += np.abs(dw * np.asarray(leader_positions[j], dtype=float))
    return axes


def weight_margin(leader_positions, row_i, row_h) -> float:
    """Operative pair margin: the best axis of weight_margin_axes.

    The pair is box-separated whenever some axis bound exceeds the caller's
    threshold, so the scalar compared against 2*(tracking_bound + eps) is
    the maximum over axes. All axes stay available via weight_margin_axes.
    """
    return float(weight_margin_axes(leader_positions, row_i, row_h).max())


@dataclass(frozen=True)
class GridSampler:
    """Deterministic coverage of each follower's feasible mixing rows.

    The first n-1 coordinates run over an even grid in [lo, hi]; the last
    coordinate closes the sum to one and the row is kept only if it stays in
    the box. Falls back to seeded random rows when the grid would explode.
    """

    points_per_interval: int = 5
    max_grid: int = 200_000
    seed: int = 0

    def rows(self, config: TeamConfig, follower: int) -> np.ndarray:
        nbrs = config.in_neighbors[follower]
        lo, hi = config.bounds_for(follower)
        n = len(nbrs)
        if n == 1:
            return np.ones((1, 1))
        if self.points_per_interval ** (n - 1) > self.max_grid:
            return RandomSampler(seed=self.seed).rows(config, follower)
        pts = np.linspace(lo, hi, self.points_per_interval)
        grids = np.meshgrid(*([pts] * (n - 1)), indexing="ij")
        head = np.stack([g.ravel() for g in grids], axis=1)
        last = 1.0 - head.sum(axis=1)
        keep = (last >= lo - 1e-9) & (last <= hi + 1e-9)
        rows = np.column_stack([head[keep], np.clip(last[keep], lo, hi)])
        if rows.shape[0] == 0:
            # grid too coarse for a thin feasible slice; center point only
            rows = project_box_simplex(np.full(n, 1.0 / n), lo, hi)[None, :]
        return rows


@dataclass(frozen=True)
class RandomSampler:
    """Seeded random feasible rows (uniform in the box, then projected)."""

    n_rows: int = 64
    seed: int = 0

    def rows(self, config: TeamConfig, follower: int) -> np.ndarray:
        nbrs = config.in_neighbors[follower]
        lo, hi = config.bounds_for(follower)
        rng = np.random.default_rng((self.seed, follower))
        raw = rng.uniform(lo, hi, size=(self.n_rows, len(nbrs)))
        return np.array([project_box_simplex(r, lo, hi) for r in raw])


def _nominal_offsets(config: TeamConfig) -> dict[int, np.ndarray]:
    """Planned offsets at full scale with the uniform feasible mixing rows.

    The contraction search replaces every leader scale by the shared factor,
    so the full-scale leader offsets are the reference offsets themselves.
    """
    nominal = initial_weights(config)
    offsets: dict[int, np.ndarray] = {}
    for i in config.layers[0]:
        offsets[i] = np.asarray(config.reference_positions[i], dtype=float)
    for layer in config.layers[1:]:
        for i in layer:
            acc = np.zeros(3)
            for j, w in nominal.mix[i].items():
                acc += w * offsets[j]
            offsets[i] = acc
    return offsets


@dataclass
class _PairCheck:
    pair: tuple[int, int]
    diffs: np.ndarray        # [C, u] admissible |row_i - row_h| over the union
    base: np.ndarray         # [D, u, 3] candidate neighbor offsets at full scale

    def worst(self, alpha: float):
        # |dw * (alpha q)| summed over the union, per axis, all combinations
        per_axis = np.einsum(
            "cu,dux->cdx", self.diffs, np.abs(alpha * self.base))
        margins = per_axis.max(axis=2)
        c, d = np.unravel_index(np.argmin(margins), margins.shape)
        axis = int(np.argmax(per_axis[c, d]))
        return float(margins[c, d]), _AXES[axis]


def _build_pair_checks(config, sampler, min_row_diff, max_combos=20_000):
    """Pairwise margin structures at full scale; offsets scale linearly with
    the contraction factor, so each structure is reused at every alpha."""
    nominal = _nominal_offsets(config)
    rows_cache = {i: np.asarray(sampler.rows(config, i), dtype=float)
                  for i in config.followers}

    # candidate offsets per follower under its own sampled rows; nested
    # follower neighbors are held at their nominal offsets
    candidates: dict[int, np.ndarray] = {}
    for i in config.followers:
        nbrs = config.in_neighbors[i]
        base = np.stack([
            nominal[j] if j in rows_cache else config.reference_positions[j]
            for j in nbrs
        ])
        candidates[i] = rows_cache[i] @ base

    checks: list[_PairCheck] = []
    for layer in config.layers[1:]:
        for i, h in itertools.combinations(layer, 2):
            union = sorted(set(config.in_neighbors[i]) | set(config.in_neighbors[h]))
            index = {j: u for u, j in enumerate(union)}

            def expand(follower):
                rows = rows_cache[follower]
                wide = np.zeros((rows.shape[0], len(union)))
                for col, j in enumerate(config.in_neighbors[follower]):
                    wide[:, index[j]] = rows[:, col]
                return wide

            wi, wh = expand(i), expand(h)
            diffs = np.abs(wi[:, None, :] - wh[None, :, :]).reshape(-1, len(union))
            keep = diffs.max(axis=1) >= min_row_diff
            diffs = diffs[keep]
            if diffs.shape[0] == 0:
                continue

            dep = [j for j in union if j in rows_cache]
            dep_sizes = [candidates[j].shape[0] for j in dep]
            total = int(np.prod(dep_sizes)) if dep else 1
            if total > max_combos:
                rng = np.random.default_rng((1234, i, h))
                combos = np.column_stack([
                    rng.integers(0, s, size=max_combos) for s in dep_sizes])
            elif dep:
                combos = np.array(list(itertools.product(*[range(s) for s in dep_sizes])))
            else:
                combos = np.zeros((1, 0), dtype=int)

            base = np.zeros((combos.shape[0], len(union), 3))
            for u, j in enumerate(union):
                if j in rows_cache:
                    k = dep.index(j)
                    base[:, u, :] = candidates[j][combos[:, k]]
                else:
                    base[:, u, :] = config.reference_positions[j]
            checks.append(_PairCheck(pair=(i, h), diffs=diffs, base=base))
    return checks


def _margin_sweep(checks, alpha: float):
    """Smallest pair margin over every sampled combination at one scale."""
    best = np.inf
    record = None
    for chk in checks:
        value, axis = chk.worst(alpha)
        if value < best:
            best = value
            record = (chk.pair, axis)
    return best, record


def alpha_min_search(config: TeamConfig, d=None, delta_alpha: float = 0.01,
                     sampler=None, min_row_diff: float = 0.05):
    """Line search for the smallest leader-layout contraction that keeps every
    sampled follower pair box-separable under worst-case tracking error.

    Starts at full scale and walks down in delta_alpha steps while the
    worst-case margin stays above 2*(tracking_bound + half_extent); returns
    the last satisfying scale together with a certificate. Near-identical
    row pairs (max component difference below min_row_diff) are excluded
    from the sweep, and rows are drawn from the given sampler (grid with 5
    points per interval by default).
    """
    if not (0.0 < delta_alpha < 1.0):
        raise InvalidStep(f"delta_alpha must lie in (0, 1), got {delta_alpha}")
    sampler = sampler or GridSampler()

    threshold = 2.0 * (config.tracking_bound + config.agent_half_extent)
    checks = _build_pair_checks(config, sampler, min_row_diff)

    parameters = {
        "tracking_bound": config.tracking_bound,
        "agent_half_extent": config.agent_half_extent,
        "planned_threshold": threshold,
        "delta_alpha": delta_alpha,
        "mix_bounds": [list(b) for b in config.mix_bounds],
        "sampler": type(sampler).__name__,
        "min_row_difference": min_row_diff,
        "team_position": None if d is None else np.asarray(d, dtype=float).tolist(),
    }

    margin1, record1 = _margin_sweep(checks, 1.0)
    if not margin1 > threshold:
        pair, axis = record1 if record1 else (None, None)
        cert = SafetyCertificate(
            passed=False, alpha_min=None, parameters=parameters,
            checks=[CheckRecord("planned_pair_margin", None, pair, axis,
                                margin1, threshold)],
        )
        raise NeverFeasible(
            f"pair margin {margin1:.6g} <= {threshold:.6g} at full scale "
            f"(pair {pair}, axis {axis})", certificate=cert)

    steps = 0
    while True:
        candidate = 1.0 - (steps + 1) * delta_alpha
        if candidate <= 0.0:
            break
        margin, _ = _margin_sweep(checks, candidate)
        if margin > threshold:
            steps += 1
        else:
            break
    alpha_min = 1.0 - steps * delta_alpha

    final_margin, record = _margin_sweep(checks, alpha_min)
    pair, axis = record if record else (None, None)
    cert = SafetyCertificate(
        passed=True,
        alpha_min=alpha_min,
        parameters=parameters,
        checks=[CheckRecord("planned_pair_margin", None, pair, axis,
                            final_margin, threshold)],
    )
    return alpha_min, cert


def _separation_records(kind, times, positions, index_pairs, id_pairs,
                        threshold, record_cap):
    """Violation records plus the global worst pair over a logged series."""
    n_steps = len(times)
    chunk = max(1, 4_000_000 // max(1, len(index_pairs) * 3))
    starts = list(range(0, n_steps, chunk))
    ia = np.array([p[0] for p in index_pairs])
    ib = np.array([p[1] for p in index_pairs])

    def scan(start):
        stop = min(start + chunk, n_steps)
        gaps = np.abs(positions[start:stop, ia, :] - positions[start:stop, ib, :])
        margins = gaps.max(axis=2)                  # [m, P] best axis per pair
        flat = np.argmin(margins)
        t_rel, p_idx = np.unravel_index(flat, margins.shape)
        worst = (float(margins[t_rel, p_idx]), start + int(t_rel), int(p_idx),
                 int(np.argmax(gaps[t_rel, p_idx])))
        bad_t, bad_p = np.nonzero(margins <= threshold)
        bad = [(start + int(t), int(p), float(margins[t, p]),
                int(np.argmax(gaps[t, p]))) for t, p in zip(bad_t, bad_p)]
        return worst, bad

    workers = worker_count()
    if workers > 1 and len(starts) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(scan, starts))
    else:
        results = [scan(s) for s in starts]

    worst = min((r[0] for r in results), key=lambda w: w[0])
    violations = [v for r in results for v in r[1]]
    truncated = max(0, len(violations) - record_cap)
    records = [
        CheckRecord(kind, float(times[t]), id_pairs[p], _AXES[ax], margin, threshold)
        for t, p, margin, ax in violations[:record_cap]
    ]
    records.append(CheckRecord(
        f"{kind}_min", float(times[worst[1]]), id_pairs[worst[2]],
        _AXES[worst[3]], worst[0], threshold))
    return records, truncated


def certify_run(config: TeamConfig, weights: WeightSet, log,
                record_cap: int = 200) -> SafetyCertificate:
    """Aggregate separation and containment checks over a logged run.

    Planned positions are checked at every sample against
    2*(tracking_bound + half_extent); actual positions, when present,
    against 2*half_extent. The sample spacing is recorded as a declared
    assumption; nothing is checked between samples.
    """
    times = np.asarray(log.times, dtype=float)
    if times.size == 0:
        raise EmptyLog("log contains no samples")
    ids = tuple(log.agent_ids)
    pairs = list(itertools.combinations(range(len(ids)), 2))
    id_pairs = [(ids[a], ids[b]) for a, b in pairs]

    eps = config.agent_half_extent
    delta = config.tracking_bound
    thr_desired = 2.0 * (delta + eps)
    thr_actual = 2.0 * eps

    checks: list[CheckRecord] = []
    truncated = 0

    ok_contain, cviol = containment_check(config, weights)
    min_weight = min(
        (weights.mix[i][j] for i in config.followers for j in config.in_neighbors[i]),
        default=0.0,
    )
    worst_sum_dev = max(
        (abs(sum(weights.mix[i][j] for j in config.in_neighbors[i]) - 1.0)
         for i in config.followers),
        default=0.0,
    )
    checks.append(CheckRecord("mix_nonnegative", None, None, None,
                              float(min_weight), -1e-12))
    checks.append(CheckRecord("mix_row_sum", None, None, None,
                              float(WEIGHT_SUM_TOL - worst_sum_dev), 0.0))

    if id_pairs:
        desired = np.asarray(log.desired, dtype=float)
        recs, cut = _separation_records(
            "planned_separation", times, desired, pairs, id_pairs,
            thr_desired, record_cap)
        checks.extend(recs)
        truncated += cut
        if getattr(log, "actual", None) is not None:
            actual = np.asarray(log.actual, dtype=float)
            recs, cut = _separation_records(
                "actual_separation", times, actual, pairs, id_pairs,
                thr_actual, record_cap)
            checks.extend(recs)
            truncated += cut

    checks.sort(key=lambda r: (
        r.time if r.time is not None else -np.inf,
        r.pair if r.pair is not None else (0, 0),
        r.check,
    ))
    passed = ok_contain and all(r.passed for r in checks)
    parameters = {
        "tracking_bound": delta,
        "agent_half_extent": eps,
        "planned_threshold": thr_desired,
        "actual_threshold": thr_actual,
        "n_samples": int(times.size),
        "sample_dt": float(times[1] - times[0]) if times.size > 1 else None,
        "n_agents": len(ids),
        "violations_truncated": truncated,
        "containment_violations": [
            {"kind": v.kind, "follower": v.follower, "leader": v.leader,
             "layer": v.layer, "value": v.value} for v in cviol
        ],
    }
    return SafetyCertificate(passed=passed, alpha_min=None,
                             parameters=parameters, checks=checks)
