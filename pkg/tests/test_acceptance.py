"""Acceptance suite: one test per release criterion, each printing a
PASS/FAIL line and enforcing its runtime budget."""

import filecmp
import json
import time
from contextlib import contextmanager

import numpy as np
import pytest

import deformswarm as ds
from deformswarm.cli import cli_main
from deformswarm.io import read_desired_csv, read_states_csv
from deformswarm.safety import GridSampler, _build_pair_checks, _margin_sweep
from deformswarm.vehicle import _controller_arrays, _rk4, rotor_spin

from conftest import (
    fd_gradient,
    grid_project_oracle,
    make_team,
    naive_pair_margin,
    point_in_hull,
    random_team,
    random_weights,
    two_layer_team,
)


@contextmanager
def criterion(number, name, budget_s, capsys=None):
    def emit(line):
        if capsys is not None:
            with capsys.disabled():
                print(line)
        else:
            print(line)

    start = time.monotonic()
    ok = False
    try:
        yield
        elapsed = time.monotonic() - start
        assert elapsed < budget_s, (
            f"criterion {number} took {elapsed:.1f} s, budget {budget_s} s")
        ok = True
        emit(f"\nACCEPTANCE {number} ({name}): PASS ({elapsed:.1f} s)")
    finally:
        if not ok:
            emit(f"\nACCEPTANCE {number} ({name}): FAIL")


def test_criterion_1_feasibility(capsys):
    with criterion(1, "feasibility suite", 1.0, capsys):
        cfg = ds.sixteen_agent_team()
        assert ds.validate_config(cfg).n_agents == 16

        with pytest.raises(ds.ConfigError) as err:
            make_team(
                boundary=(1, 2, 3), core=4,
                layers=((1, 2, 3, 4), (5,)),
                neighbors={5: (1, 2, 3)},     # 3 * 0.35 > 1
                positions={1: (4, 0, 0), 2: (0, 4, 0), 3: (-4, -4, 0),
                           4: (0, 0, 0), 5: (0, 0, 0)},
                mix_bounds=((0.35, 0.65),),
            )
        assert any(v.kind == "infeasible_bounds" for v in err.value.violations)

        with pytest.raises(ds.ConfigError) as err:
            make_team(
                boundary=(1,), core=2,
                layers=((1, 2), (3,)),
                neighbors={3: (1,)},          # 1 * 0.65 < 1
                positions={1: (4, 0, 0), 2: (0, 0, 0), 3: (0, 0, 0)},
                mix_bounds=((0.35, 0.65),),
            )
        assert any(v.kind == "infeasible_bounds" for v in err.value.violations)


def test_criterion_2_projection(capsys):
    with criterion(2, "projection suite", 10.0, capsys):
        rng = np.random.default_rng(2)
        for _ in range(1000):
            n = int(rng.integers(1, 4))
            lo = float(rng.uniform(0, 1.0 / n))
            hi = 1.0 if n == 1 else float(rng.uniform(1.0 / n + 0.05, 1.0))
            v = rng.normal(0, 1.5, n)
            ours = ds.project_box_simplex(v, lo, hi)
            oracle = grid_project_oracle(v, lo, hi)
            assert np.abs(ours - oracle).max() < 1e-6

        worst_box = worst_sum = 0.0
        for _ in range(10_000):
            n = int(rng.integers(1, 11))
            lo = float(rng.uniform(0, 1.0 / n))
            hi = float(rng.uniform(1.0 / n, 1.0))
            w = ds.project_box_simplex(rng.normal(0, 3, n), lo, hi)
            worst_box = max(worst_box, lo - w.min(), w.max() - hi)
            worst_sum = max(worst_sum, abs(w.sum() - 1.0))
        assert worst_box <= 1e-12 and worst_sum <= 1e-12


def _random_sixteen_agent_instance(rng):
    base = ds.sixteen_agent_team()
    positions = {i: rng.uniform(-12, 12, 3) for i in base.agents}
    positions[base.core] = np.zeros(3)
    cfg = make_team(
        boundary=base.boundary, core=base.core, layers=base.layers,
        neighbors=base.in_neighbors, positions=positions,
        mix_bounds=base.mix_bounds, alpha_min=base.alpha_min,
        alpha_max=base.alpha_max,
    )
    return cfg, random_weights(cfg, rng)


def test_criterion_3_gradients(capsys):
    with criterion(3, "gradient suite", 30.0, capsys):
        rng = np.random.default_rng(3)
        for _ in range(100):
            cfg, weights = _random_sixteen_agent_instance(rng)
            d = rng.uniform(-5, 5, 3)
            ga, gm = ds.grad_loss(cfg, weights, d)
            fa, fm = fd_gradient(cfg, weights, d)
            for i in cfg.layers[0]:
                assert ga[i] == pytest.approx(fa[i], rel=1e-6, abs=1e-8)
            for i in cfg.followers:
                for j in cfg.in_neighbors[i]:
                    assert gm[i][j] == pytest.approx(fm[i][j], rel=1e-6, abs=1e-8)


def test_criterion_4_training_regression(capsys):
    with criterion(4, "training regression", 60.0, capsys):
        cfg = ds.sixteen_agent_team()
        weights, trace = ds.train(
            cfg, np.zeros(3),
            ds.TrainSettings(epochs=6000, learning_rate=0.01, seed=0))
        assert trace.loss[-1] < 1e-4
        assert ds.constraint_residual(cfg, weights) <= 1e-9
        ok, violations = ds.containment_check(cfg, weights)
        assert ok and not violations

        _, slow = ds.train(
            cfg, np.zeros(3),
            ds.TrainSettings(epochs=6000, learning_rate=1e-3, log_every=1))
        window = 50
        losses = slow.loss
        for k in range(losses.size - window):
            assert losses[k + window] <= losses[k] * (1 + 1e-12) + 1e-300


def test_criterion_5_safety(capsys):
    with criterion(5, "safety suite", 60.0, capsys):
        rng = np.random.default_rng(5)
        for _ in range(1000):
            ids = list(range(1, int(rng.integers(2, 7))))
            pos = {j: rng.uniform(-8, 8, 3) for j in ids}
            k = min(len(ids), 3)
            ni = sorted(int(x) for x in rng.choice(ids, size=k, replace=False))
            nh = sorted(int(x) for x in rng.choice(ids, size=k, replace=False))
            ri = {j: float(rng.uniform(0, 1)) for j in ni}
            rh = {j: float(rng.uniform(0, 1)) for j in nh}
            assert ds.weight_margin(pos, ri, rh) == pytest.approx(
                naive_pair_margin(pos, ri, rh), abs=1e-12)

        # toy crossing: margin 1.5 * alpha vs threshold 0.5 -> grid value 0.34
        toy = two_layer_team(a1=(10.0, 0.0, 0.0), bounds=(0.2, 0.8),
                             eps=0.15, delta=0.1)
        alpha_min, cert = ds.alpha_min_search(toy, delta_alpha=0.01)
        crossing = 0.5 / 1.5
        grid = np.ceil(crossing / 0.01) * 0.01
        assert abs(alpha_min - grid) <= 0.01 + 1e-9
        assert alpha_min == pytest.approx(0.34, abs=1e-9)
        assert cert.passed

        for _ in range(100):
            cfg = two_layer_team(a1=tuple(rng.uniform(-8, 8, 3)),
                                 bounds=(0.2, 0.8), n_followers=3)
            checks = _build_pair_checks(cfg, GridSampler(), min_row_diff=0.05)
            alphas = np.sort(rng.uniform(0.05, 1.0, 4))
            margins = [_margin_sweep(checks, a)[0] for a in alphas]
            assert all(m1 <= m2 + 1e-12
                       for m1, m2 in zip(margins, margins[1:]))


def test_criterion_6_geometry(capsys):
    with criterion(6, "geometry invariants", 10.0, capsys):
        rng = np.random.default_rng(6)
        for _ in range(1000):
            cfg = random_team(rng)
            w = random_weights(cfg, rng)
            d = rng.uniform(-10, 10, 3)
            shift = rng.uniform(-10, 10, 3)
            base = ds.forward_pass(cfg, w, d)
            moved = ds.forward_pass(cfg, w, d + shift)
            follower = cfg.followers[int(rng.integers(len(cfg.followers)))]
            for i in cfg.agents:
                expect = base.positions[i] + shift
                scale = max(1.0, float(np.abs(expect).max()))
                assert np.abs(moved.positions[i] - expect).max() <= 1e-12 * scale
            vertices = [base.positions[j] for j in cfg.in_neighbors[follower]]
            assert point_in_hull(base.positions[follower], vertices, tol=1e-9)


def test_criterion_7_vehicle(capsys):
    with criterion(7, "vehicle suite", 30.0, capsys):
        params = ds.QuadParams()
        gains = ds.ControlGains()

        # hover fixed point from a meter-scale offset
        x = np.zeros((1, 12))
        x[0, 0:3] = [0.5, -0.5, 1.0]
        target = np.zeros((1, 3))
        zero = np.zeros((1, 3))
        for _ in range(5000):   # 10 s at dt = 0.002
            thrust, torques, speeds = _controller_arrays(
                x, target, zero, zero, params, gains)
            x = _rk4(x, thrust, torques, rotor_spin(speeds), params, 0.002)
        assert np.abs(x[0, 0:3]).max() < 1e-6

        # ballistic closed form
        v0 = np.array([3.0, -2.0, 5.0])
        state = ds.QuadState(position=np.zeros(3), velocity=v0.copy(),
                             attitude=np.zeros(3), rates=np.zeros(3))
        control = ds.ControlOutput(thrust=0.0, torques=np.zeros(3),
                                   rotor_speeds=np.zeros(4))
        for _ in range(500):
            state = ds.dynamics_step(state, control, params, 0.002)
        t = 1.0
        closed = v0 * t - 0.5 * params.gravity * t * t * np.array([0, 0, 1])
        assert np.abs(state.position - closed).max() <= 1e-9

        # mixer round trip
        rng = np.random.default_rng(7)
        for _ in range(200):
            thrust = float(rng.uniform(2.0, 8.0))
            torques = np.array([rng.uniform(-0.05, 0.05),
                                rng.uniform(-0.05, 0.05),
                                rng.uniform(-0.01, 0.01)])
            speeds = ds.rotor_mixer(thrust, torques, params)
            f, tq = ds.mixer_forward(speeds, params)
            assert f == pytest.approx(thrust, abs=1e-9)
            assert np.abs(tq - torques).max() <= 1e-9

        # hover rotor speed from the airframe constants
        speeds = ds.rotor_mixer(params.hover_thrust, np.zeros(3), params)
        assert abs(speeds[0] - 202.2) <= 0.1


def test_criterion_8_end_to_end(tmp_path, capsys):
    with criterion(8, "end-to-end pipeline", 300.0, capsys):
        run1, run2 = tmp_path / "run1", tmp_path / "run2"

        start = time.monotonic()
        assert cli_main(["all", "--out", str(run1)]) == 0
        assert time.monotonic() - start < 300.0

        certificate = json.loads((run1 / "certificate.json").read_text())
        assert certificate["passed"] is True
        margins = {c["check"]: c for c in certificate["checks"]}
        worst = margins["planned_separation_min"]
        assert worst["margin"] > worst["threshold"]

        log = read_states_csv(run1 / "states.csv",
                              desired_log=read_desired_csv(run1 / "desired.csv"))
        report = ds.tracking_report(log, transient=5.0)
        assert max(float(v.max()) for v in report.values()) <= 0.1

        # a full lap sweeps each agent across the ellipse width around its
        # trained formation offset
        col = log.agent_ids.index(6)
        x6 = log.actual[:, col, 0]
        assert x6.max() - x6.min() == pytest.approx(200.0, abs=5.0)

        plot_names = {p.name for p in (run1 / "plots").iterdir()}
        assert {"configuration.svg", "min_separation.svg", "agent_06_x.svg",
                "agent_06_y.svg", "agent_06_thrust.svg",
                "agent_06_rotor_speeds.svg"} <= plot_names

        manifest = json.loads((run1 / "manifest.json").read_text())
        assert "certificate.json" in manifest["outputs"]

        assert cli_main(["all", "--out", str(run2)]) == 0
        artifacts = ["weights.json", "trace.csv", "alpha_certificate.json",
                     "desired.csv", "states.csv", "certificate.json"]
        artifacts += [f"plots/{name}" for name in sorted(plot_names)]
        for name in artifacts:   # manifest.json carries timestamps, excluded
            assert filecmp.cmp(run1 / name, run2 / name, shallow=False), name
