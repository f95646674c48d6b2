"""Batch SVG figures from a simulation log.

Rendering is pure: the same log yields byte-identical SVG (fixed hash salt,
no embedded dates).
"""

import itertools
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
matplotlib.rcParams["svg.hashsalt"] = "deformswarm"

import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)
import numpy as np  # noqa: E402

from .scenario import SimLog  # noqa: E402

_SAVE = {"format": "svg", "metadata": {"Date": None}}


def _save(fig, out_dir: Path, name: str) -> Path:
    path = out_dir / name
    fig.savefig(path, **_SAVE)
    plt.close(fig)
    return path


def _configuration_figure(log: SimLog, n_snapshots=5):
    fig, ax = plt.subplots(figsize=(7, 6))
    picks = np.linspace(0, log.times.size - 1, min(n_snapshots, log.times.size))
    for n in picks.astype(int):
        pts = log.desired[n]
        ax.scatter(pts[:, 0], pts[:, 1], s=18,
                   label=f"t = {log.times[n]:.0f} s")
        ax.plot(pts[:, 0].mean(), pts[:, 1].mean(), "k+", ms=6)
    center = log.desired.mean(axis=1)
    ax.plot(center[:, 0], center[:, 1], "k--", lw=0.8, alpha=0.6)
    ax.set_xlabel("x [m]")
    ax.set_ylabel("y [m]")
    ax.set_title("planned team configuration")
    ax.axis("equal")
    ax.legend(loc="upper right", fontsize=8)
    return fig


def _axis_figure(log: SimLog, agent: int, axis: int):
    idx = log.agent_ids.index(agent)
    name = "xyz"[axis]
    fig, ax = plt.subplots(figsize=(7, 4))
    ax.plot(log.times, log.desired[:, idx, axis], label="planned", lw=1.2)
    if log.actual is not None:
        ax.plot(log.times, log.actual[:, idx, axis], "--", label="actual", lw=1.0)
    ax.set_xlabel("t [s]")
    ax.set_ylabel(f"{name} [m]")
    ax.set_title(f"agent {agent}: {name} position")
    ax.legend()
    return fig


def _thrust_figure(log: SimLog, agent: int):
    idx = log.agent_ids.index(agent)
    fig, ax = plt.subplots(figsize=(7, 4))
    ax.plot(log.times, log.thrust[:, idx], lw=1.0)
    ax.set_xlabel("t [s]")
    ax.set_ylabel("thrust [N]")
    ax.set_title(f"agent {agent}: thrust")
    return fig


def _rotor_figure(log: SimLog, agent: int):
    idx = log.agent_ids.index(agent)
    fig, ax = plt.subplots(figsize=(7, 4))
    for r in range(4):
        ax.plot(log.times, log.rotor_speeds[:, idx, r], lw=0.9,
                label=f"rotor {r + 1}")
    ax.set_xlabel("t [s]")
    ax.set_ylabel("rotor speed [rad/s]")
    ax.set_title(f"agent {agent}: rotor speeds")
    ax.legend(fontsize=8)
    return fig


def min_pair_separation(positions: np.ndarray) -> np.ndarray:
    """Per-sample minimum over pairs of the best-axis gap, [M]."""
    n = positions.shape[1]
    pairs = list(itertools.combinations(range(n), 2))
    if not pairs:
        return np.full(positions.shape[0], np.inf)
    ia = np.array([p[0] for p in pairs])
    ib = np.array([p[1] for p in pairs])
    gaps = np.abs(positions[:, ia, :] - positions[:, ib, :])
    return gaps.max(axis=2).min(axis=1)


def _separation_figure(log: SimLog, threshold: float | None):
    fig, ax = plt.subplots(figsize=(7, 4))
    ax.plot(log.times, min_pair_separation(log.desired),
            label="planned min box separation", lw=1.0)
    if threshold is not None:
        ax.axhline(threshold, color="r", ls="--", lw=1.0,
                   label=f"threshold {threshold:g} m")
    ax.set_xlabel("t [s]")
    ax.set_ylabel("separation [m]")
    ax.set_title("minimum pairwise separation")
    ax.legend()
    return fig


def emit_plots(log: SimLog, certificate=None, out_dir=".", agents=(6,)) -> list[Path]:
    """Write the figure set for a run; returns the emitted paths.

    Always emits the configuration snapshots and the minimum-separation
    series; per-agent planned-vs-actual, thrust, and rotor-speed figures are
    emitted for the selected agents when the log carries vehicle states.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    threshold = None
    if certificate is not None:
        threshold = certificate.parameters.get("planned_threshold")

    files = [
        _save(_configuration_figure(log), out_dir, "configuration.svg"),
        _save(_separation_figure(log, threshold), out_dir, "min_separation.svg"),
    ]
    for agent in agents:
        if agent not in log.agent_ids:
            raise ValueError(f"agent {agent} not in log")
        tag = f"agent_{agent:02d}"
        files.append(_save(_axis_figure(log, agent, 0), out_dir, f"{tag}_x.svg"))
        files.append(_save(_axis_figure(log, agent, 1), out_dir, f"{tag}_y.svg"))
        if log.thrust is not None:
            files.append(_save(_thrust_figure(log, agent), out_dir,
                               f"{tag}_thrust.svg"))
        if log.rotor_speeds is not None:
            files.append(_save(_rotor_figure(log, agent), out_dir,
                               f"{tag}_rotor_speeds.svg"))
    return files
