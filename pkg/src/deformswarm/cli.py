"""Command-line surface: train -> alpha-min -> simulate -> certify -> plot.

Exit codes: 0 success, 1 certificate failure, 2 usage or configuration
error. Runs with the same configuration and seed reproduce every artifact
byte-identically except manifest.json, which carries timestamps.
"""

import argparse
import dataclasses
import json
import sys
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .io import (
    ParseError,
    RunSetup,
    bundled_config_path,
    load_config,
    load_weights,
    read_desired_csv,
    read_states_csv,
    save_certificate,
    save_weights,
    write_desired_csv,
    write_states_csv,
    write_trace_csv,
)
from .plots import emit_plots
from .safety import (
    GridSampler,
    NeverFeasible,
    RandomSampler,
    SafetyCertificate,
    alpha_min_search,
    certify_run,
)
from .scenario import run_simulation
from .team import ConfigError
from .training import train


def _build_parser():
    parser = argparse.ArgumentParser(
        prog="deformswarm",
        description="Plan, train, certify, and simulate layered team deformation.",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("--config", type=Path, default=None,
                       help="run configuration file (default: bundled 16-agent ellipse)")
        p.add_argument("--out", type=Path, default=Path("."),
                       help="output directory")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--epochs", type=int, default=None)
        p.add_argument("--lr", type=float, default=None)
        p.add_argument("--dt", type=float, default=None)
        p.add_argument("--delta-alpha", type=float, default=None)
        p.add_argument("--eps", type=float, default=None,
                       help="agent half extent [m]")
        p.add_argument("--delta", type=float, default=None,
                       help="tracking bound [m]")
        return p

    add_common(sub.add_parser("train", help="fit the planning weights"))
    add_common(sub.add_parser("alpha-min", help="search the smallest safe contraction"))
    p = add_common(sub.add_parser("certify", help="check a logged run"))
    p.add_argument("--weights", type=Path, required=True)
    p.add_argument("--desired", type=Path, required=True)
    p.add_argument("--states", type=Path, default=None)
    p = add_common(sub.add_parser("simulate", help="run the closed loop"))
    p.add_argument("--weights", type=Path, required=True)
    p = add_common(sub.add_parser("plot", help="emit SVG figures from logs"))
    p.add_argument("--desired", type=Path, required=True)
    p.add_argument("--states", type=Path, default=None)
    p.add_argument("--certificate", type=Path, default=None)
    p.add_argument("--agents", type=int, nargs="*", default=[6])
    add_common(sub.add_parser("all", help="full pipeline into --out"))
    return parser


def _apply_overrides(setup: RunSetup, args) -> RunSetup:
    if args.seed is not None:
        setup.trainer = dataclasses.replace(setup.trainer, seed=args.seed)
        setup.safety = dataclasses.replace(setup.safety, seed=args.seed)
    if args.epochs is not None:
        setup.trainer = dataclasses.replace(setup.trainer, epochs=args.epochs)
    if args.lr is not None:
        setup.trainer = dataclasses.replace(setup.trainer, learning_rate=args.lr)
    if args.dt is not None:
        setup.sim_dt = args.dt
    if args.delta_alpha is not None:
        setup.safety = dataclasses.replace(setup.safety, delta_alpha=args.delta_alpha)
    if args.eps is not None or args.delta is not None:
        team = setup.team
        setup.team = dataclasses.replace(
            team,
            agent_half_extent=args.eps if args.eps is not None else team.agent_half_extent,
            tracking_bound=args.delta if args.delta is not None else team.tracking_bound,
        )
    return setup


def _sampler_for(setup: RunSetup):
    s = setup.safety
    if s.sampler == "random":
        return RandomSampler(n_rows=s.random_rows, seed=s.seed)
    return GridSampler(points_per_interval=s.grid_points, seed=s.seed)


def _cmd_train(setup: RunSetup, out: Path):
    weights, trace = train(setup.team, np.zeros(3), setup.trainer)
    save_weights(weights, out / "weights.json")
    write_trace_csv(trace, out / "trace.csv")
    print(f"final loss {trace.loss[-1]:.6g} m^2 after {trace.epochs[-1]} epochs")
    return ["weights.json", "trace.csv"]


def _cmd_alpha_min(setup: RunSetup, out: Path):
    try:
        alpha_min, cert = alpha_min_search(
            setup.team,
            delta_alpha=setup.safety.delta_alpha,
            sampler=_sampler_for(setup),
            min_row_diff=setup.safety.min_row_difference,
        )
    except NeverFeasible as exc:
        if exc.certificate is not None:
            save_certificate(exc.certificate, out / "alpha_certificate.json")
        print(f"alpha-min search failed: {exc}", file=sys.stderr)
        return None
    save_certificate(cert, out / "alpha_certificate.json")
    print(f"alpha_min = {alpha_min:.6g}")
    return ["alpha_certificate.json"]


def _cmd_simulate(setup: RunSetup, weights, out: Path):
    log = run_simulation(
        setup.team, weights, setup.trajectory,
        params=setup.vehicle, gains=setup.gains,
        dt=setup.sim_dt,
        t_f=setup.duration if setup.duration is not None else setup.trajectory.period,
    )
    write_desired_csv(log, out / "desired.csv")
    write_states_csv(log, out / "states.csv")
    return log, ["desired.csv", "states.csv"]


def _load_log(args):
    desired = read_desired_csv(args.desired)
    if args.states is not None:
        return read_states_csv(args.states, desired_log=desired)
    return desired


def _write_manifest(out: Path, config_path, setup: RunSetup, outputs):
    manifest = {
        "tool": "deformswarm",
        "version": __version__,
        "created": datetime.now(timezone.utc).isoformat(),
        "config": str(config_path),
        "out_dir": str(out),
        "seed": setup.trainer.seed,
        "settings": {
            "epochs": setup.trainer.epochs,
            "learning_rate": setup.trainer.learning_rate,
            "sim_dt": setup.sim_dt,
            "delta_alpha": setup.safety.delta_alpha,
            "agent_half_extent": setup.team.agent_half_extent,
            "tracking_bound": setup.team.tracking_bound,
        },
        "outputs": sorted(outputs),
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")


def cli_main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)

    config_path = args.config if args.config is not None else bundled_config_path()
    out = args.out
    try:
        setup = _apply_overrides(load_config(config_path), args)
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (ParseError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2

    out.mkdir(parents=True, exist_ok=True)

    try:
        if args.command == "train":
            _cmd_train(setup, out)
            return 0

        if args.command == "alpha-min":
            return 0 if _cmd_alpha_min(setup, out) is not None else 1

        if args.command == "simulate":
            weights = load_weights(args.weights)
            _cmd_simulate(setup, weights, out)
            return 0

        if args.command == "certify":
            weights = load_weights(args.weights)
            log = _load_log(args)
            cert = certify_run(setup.team, weights, log)
            save_certificate(cert, out / "certificate.json")
            if not cert.passed:
                worst = min(cert.checks, key=lambda c: c.margin - c.threshold)
                print(f"certificate FAILED: {worst.check} margin {worst.margin:.6g}"
                      f" <= {worst.threshold:.6g}"
                      f" (pair {worst.pair}, t={worst.time})", file=sys.stderr)
                return 1
            print("certificate passed")
            return 0

        if args.command == "plot":
            log = _load_log(args)
            cert = None
            if args.certificate is not None:
                payload = json.loads(Path(args.certificate).read_text())
                cert = SafetyCertificate(
                    passed=payload["passed"], alpha_min=payload["alpha_min"],
                    parameters=payload["parameters"], checks=[])
            files = emit_plots(log, cert, out, agents=tuple(args.agents))
            print(f"wrote {len(files)} figures to {out}")
            return 0

        # full pipeline
        outputs = _cmd_train(setup, out)
        alpha_outputs = _cmd_alpha_min(setup, out)
        failed = alpha_outputs is None
        outputs += alpha_outputs or ["alpha_certificate.json"]

        weights = load_weights(out / "weights.json")
        log, sim_outputs = _cmd_simulate(setup, weights, out)
        outputs += sim_outputs

        cert = certify_run(setup.team, weights, log)
        save_certificate(cert, out / "certificate.json")
        outputs.append("certificate.json")
        if not cert.passed:
            failed = True
            print("certificate FAILED", file=sys.stderr)
        else:
            print("certificate passed")

        plot_dir = out / "plots"
        pool = setup.team.followers or setup.team.agents
        focus = 6 if 6 in pool else pool[-1]
        files = emit_plots(log, cert, plot_dir, agents=(focus,))
        outputs += [f"plots/{f.name}" for f in files]

        _write_manifest(out, config_path, setup, outputs + ["manifest.json"])
        return 1 if failed else 0

    except (ParseError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


def main():
    sys.exit(cli_main())


if __name__ == "__main__":
    main()
