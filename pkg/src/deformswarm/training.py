"""Projected gradient training of the planning weights.

The loss is the squared gap between the mean pure-follower position and the
team position. There is a single training input (the reference layout), so
each epoch is one full gradient step; feasibility is restored after every
step by clamping the leader scales and projecting each mixing row onto its
box-bounded simplex slice.
"""

from dataclasses import dataclass

import numpy as np

from .team import TeamConfig, WeightSet, constraint_residual, _as_vec3


class InfeasibleBounds(ValueError):
    """The box [lo, hi]^n cannot intersect the sum-to-one plane."""


class NonFiniteLossError(RuntimeError):
    """Training produced a non-finite loss (learning rate too large)."""


@dataclass
class TrainSettings:
    """Run parameters. seed is echoed into run records; the gradient
    estimator itself is deterministic (single input, full batch)."""

    epochs: int = 6000
    learning_rate: float = 0.01
    seed: int = 0
    projection_tolerance: float = 1e-9
    log_every: int = 50

    def __post_init__(self):
        if self.epochs <= 0:
            raise ValueError(f"epochs must be > 0, got {self.epochs}")
        if self.learning_rate <= 0:
            raise ValueError(f"learning_rate must be > 0, got {self.learning_rate}")


@dataclass
class TrainTrace:
    """Loss and worst constraint residual at logged epochs."""

    epochs: np.ndarray
    loss: np.ndarray
    max_residual: np.ndarray


def project_box_simplex(v, lo: float, hi: float) -> np.ndarray:
    """Euclidean projection of v onto {w : lo <= w_j <= hi, sum w = 1}.

    Bisection on the shift t in clip(v - t, lo, hi): the clipped sum is
    continuous and non-increasing in t, and the bracket endpoints pin it to
    n*hi and n*lo. A final shift on the unclamped components lands the sum
    on 1 to machine precision. An already-feasible input is returned
    unchanged, which makes the projection an exact fixed point on the set.
    """
    v = np.asarray(v, dtype=float)
    if v.ndim != 1 or v.size == 0:
        raise ValueError("expected a nonempty 1-D row")
    n = v.size
    if lo > hi or n * lo > 1.0 + 1e-12 or n * hi < 1.0 - 1e-12:
        raise InfeasibleBounds(
            f"box [{lo}, {hi}] with {n} components cannot reach sum 1")

    if v.min() >= lo and v.max() <= hi and abs(v.sum() - 1.0) <= 1e-15:
        return v.copy()

    t_lo = v.min() - hi   # everything clamped high
    t_hi = v.max() - lo   # everything clamped low
    for _ in range(64):   # bracket shrinks below one ulp of the multiplier
        t = 0.5 * (t_lo + t_hi)
        s = np.clip(v - t, lo, hi).sum()
        if s > 1.0:
            t_lo = t
        else:
            t_hi = t
    w = np.clip(v - 0.5 * (t_lo + t_hi), lo, hi)

    for _ in range(2):
        free = (w > lo) & (w < hi)
        gap = 1.0 - w.sum()
        if gap == 0.0 or not free.any():
            break
        w[free] += gap / free.sum()
        np.clip(w, lo, hi, out=w)
    return w


def initial_weights(config: TeamConfig) -> WeightSet:
    """Deterministic feasible start: unit leader scales (clamped into the
    box) and uniform mixing rows projected into each follower's box."""
    alpha = {i: float(min(max(1.0, config.alpha_min), config.alpha_max))
             for i in config.layers[0]}
    mix: dict[int, dict[int, float]] = {}
    for i in config.followers:
        nbrs = config.in_neighbors[i]
        lo, hi = config.bounds_for(i)
        row = project_box_simplex(np.full(len(nbrs), 1.0 / len(nbrs)), lo, hi)
        mix[i] = {j: float(w) for j, w in zip(nbrs, row)}
    return WeightSet(alpha=alpha, mix=mix)


def _loss_and_grad(config: TeamConfig, weights: WeightSet, d):
    """Forward positions plus reverse-mode partials for every parameter."""
    d = _as_vec3(d)
    pos: dict[int, np.ndarray] = {}
    for i in config.layers[0]:
        pos[i] = weights.alpha[i] * config.reference_positions[i] + d
    for layer in config.layers[1:]:
        for i in layer:
            acc = np.zeros(3)
            for j, w in weights.mix[i].items():
                acc += w * pos[j]
            pos[i] = acc

    last = config.last_layer
    out = np.zeros(3)
    for i in last:
        out += pos[i]
    out /= len(last)
    r = out - d
    loss_value = float(r @ r)

    # dLoss/dp_i, seeded at the pure followers and pushed back layer by layer
    g: dict[int, np.ndarray] = {i: np.zeros(3) for i in pos}
    seed = (2.0 / len(last)) * r
    for i in last:
        g[i] += seed
    grad_mix: dict[int, dict[int, float]] = {}
    for layer in reversed(config.layers[1:]):
        for i in layer:
            gi = g[i]
            row_grad = {}
            for j, w in weights.mix[i].items():
                row_grad[j] = float(gi @ pos[j])
                g[j] += w * gi
            grad_mix[i] = row_grad
    grad_alpha = {i: float(g[i] @ config.reference_positions[i])
                  for i in config.layers[0]}
    return loss_value, grad_alpha, grad_mix


def grad_loss(config: TeamConfig, weights: WeightSet, d):
    """Analytic gradient of the loss for every leader scale and mixing weight.

    Returns (grad_alpha, grad_mix) shaped like WeightSet.alpha / WeightSet.mix.
    """
    _, grad_alpha, grad_mix = _loss_and_grad(config, weights, d)
    return grad_alpha, grad_mix


def train(config: TeamConfig, d_reference, settings: TrainSettings | None = None):
    """Run projected gradient descent; return (weights, trace).

    Every epoch takes one gradient step and re-projects onto the feasible
    set, so the returned weights satisfy all box and sum constraints.
    """
    settings = settings or TrainSettings()
    d = _as_vec3(d_reference)
    weights = initial_weights(config)
    lr = settings.learning_rate

    logged_epochs: list[int] = []
    logged_loss: list[float] = []
    logged_residual: list[float] = []

    def log(epoch: int, value: float):
        logged_epochs.append(epoch)
        logged_loss.append(value)
        logged_residual.append(constraint_residual(config, weights))

    for epoch in range(settings.epochs):
        loss_value, grad_alpha, grad_mix = _loss_and_grad(config, weights, d)
        if not np.isfinite(loss_value):
            raise NonFiniteLossError(
                f"loss became non-finite at epoch {epoch}; lower the learning rate")
        if epoch % settings.log_every == 0:
            log(epoch, loss_value)

        for i in config.layers[0]:
            stepped = weights.alpha[i] - lr * grad_alpha[i]
            weights.alpha[i] = float(min(max(stepped, config.alpha_min), config.alpha_max))
        for i in config.followers:
            nbrs = config.in_neighbors[i]
            lo, hi = config.bounds_for(i)
            row = np.array([weights.mix[i][j] - lr * grad_mix[i][j] for j in nbrs])
            projected = project_box_simplex(row, lo, hi)
            weights.mix[i] = {j: float(w) for j, w in zip(nbrs, projected)}

    final_loss, _, _ = _loss_and_grad(config, weights, d)
    if not np.isfinite(final_loss):
        raise NonFiniteLossError("final loss is non-finite; lower the learning rate")
    log(settings.epochs, final_loss)

    trace = TrainTrace(
        epochs=np.asarray(logged_epochs, dtype=int),
        loss=np.asarray(logged_loss),
        max_residual=np.asarray(logged_residual),
    )
    return weights, trace
