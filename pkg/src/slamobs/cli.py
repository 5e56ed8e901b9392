"""Command-line front end.

Two subcommands:

``simulate``
    Run the closed-loop simulation described by a TOML config. With
    ``--out`` the run's metrics, state snapshots, resolved config, and
    replayable input streams are written to the directory; without it a
    terminal summary is printed. ``--trials N`` runs N independently
    seeded copies into per-trial subdirectories.

``replay``
    Drive the configured filter from recorded CSV streams (velocity/IMU,
    ground truth, and optionally landmark measurements) and write the
    same outputs.

Exit codes: 0 on success, 2 for configuration problems, 3 for dataset
problems, 4 for numerical failures during a run, 5 for output I/O
failures. Errors print one line to stderr: ``error: <category>: <message>``.
"""

from __future__ import annotations

import argparse
import sys

from .filters import DivergenceError, UnstableSetError
from .harness import (
    ConfigError,
    DataError,
    load_config,
    replay_dataset,
    run_simulation,
    run_trials,
    write_inputs,
    write_log,
)
from .metrics import score_run
from .scenario import DegenerateGeometryError

EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4
EXIT_IO = 5


def _fail(category: str, message: str, code: int) -> int:
    print(f"error: {category}: {message}", file=sys.stderr)
    return code


def _summarize(log) -> str:
    score = score_run(log.metrics)
    final = score.final
    lm_tail = ", ".join(f"{v:.4g}" for v in score.landmark_err_mean)
    lines = [
        f"steps: {len(log.metrics)}   filter: {log.config.filter_kind}   "
        f"seed: {log.config.seed}",
        f"final attitude error:  {final.att_err:.6g}",
        f"final position error:  {final.pos_err:.6g} m",
        f"tail mean attitude error:  {score.att_err_mean:.6g}",
        f"tail mean position error:  {score.pos_err_mean:.6g} m",
        f"tail mean landmark errors: [{lm_tail}] m",
        f"final Lyapunov value:  {final.lyapunov:.6g}",
    ]
    return "\n".join(lines)


def _cmd_simulate(args) -> int:
    try:
        config = load_config(args.config, seed=args.seed,
                             filter_kind=args.filter, stride=args.stride)
    except ConfigError as err:
        return _fail("config", str(err), EXIT_CONFIG)
    if args.trials is not None:
        if args.out is None:
            return _fail("config", "--trials requires --out", EXIT_CONFIG)
        try:
            dirs = run_trials(config, args.out, args.trials)
        except ConfigError as err:
            return _fail("config", str(err), EXIT_CONFIG)
        except (UnstableSetError, DivergenceError,
                DegenerateGeometryError) as err:
            return _fail("numeric", str(err), EXIT_NUMERIC)
        except OSError as err:
            return _fail("io", str(err), EXIT_IO)
        print(f"wrote {len(dirs)} trials under {args.out}")
        return 0
    try:
        log = run_simulation(config)
    except (UnstableSetError, DivergenceError, DegenerateGeometryError) as err:
        return _fail("numeric", str(err), EXIT_NUMERIC)
    if args.out is not None:
        try:
            write_log(log, args.out)
            write_inputs(log, args.out)
        except OSError as err:
            return _fail("io", str(err), EXIT_IO)
        print(f"wrote run outputs to {args.out}")
    else:
        print(_summarize(log))
    return 0


def _cmd_replay(args) -> int:
    try:
        config = load_config(args.config, seed=args.seed,
                             filter_kind=args.filter, stride=args.stride)
    except ConfigError as err:
        return _fail("config", str(err), EXIT_CONFIG)
    try:
        log = replay_dataset(args.imu, args.landmarks, args.truth, config)
    except DataError as err:
        return _fail("data", str(err), EXIT_DATA)
    except (UnstableSetError, DivergenceError, DegenerateGeometryError) as err:
        return _fail("numeric", str(err), EXIT_NUMERIC)
    try:
        write_log(log, args.out)
    except OSError as err:
        return _fail("io", str(err), EXIT_IO)
    print(f"wrote replay outputs to {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="slamobs",
        description="Landmark-based pose observers on simulated or "
                    "recorded data.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="run the closed-loop simulation")
    sim.add_argument("--config", required=True, help="TOML run configuration")
    sim.add_argument("--seed", type=int, help="override the config seed")
    sim.add_argument("--filter", choices=["det", "stoch"],
                     help="override the configured filter")
    sim.add_argument("--out", help="directory for run outputs")
    sim.add_argument("--trials", type=int,
                     help="run N independently seeded trials (needs --out)")
    sim.add_argument("--stride", type=int,
                     help="snapshot every K-th step (default from config)")
    sim.set_defaults(func=_cmd_simulate)

    rep = sub.add_parser("replay", help="replay recorded CSV streams")
    rep.add_argument("--imu", required=True,
                     help="velocity/IMU stream (t,wx..vz[,a1x..])")
    rep.add_argument("--truth", required=True,
                     help="ground-truth poses (t,r11..r33,px,py,pz)")
    rep.add_argument("--landmarks",
                     help="landmark measurements (t,id,yx,yy,yz); "
                          "synthesized from truth when omitted")
    rep.add_argument("--config", required=True, help="TOML run configuration")
    rep.add_argument("--out", required=True, help="directory for run outputs")
    rep.add_argument("--seed", type=int, help="override the config seed")
    rep.add_argument("--filter", choices=["det", "stoch"],
                     help="override the configured filter")
    rep.add_argument("--stride", type=int,
                     help="snapshot every K-th step (default from config)")
    rep.set_defaults(func=_cmd_replay)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
