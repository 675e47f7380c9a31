"""Command line front end.

Exit codes: 0 success, 2 validation error (bad scenario, arguments, or
coefficient file), 3 runtime invariant breach (collision, protocol fault).
"""

from __future__ import annotations

import argparse
import csv
import sys
from pathlib import Path

from .control import SignalPlanError
from .dynamics import CollisionError
from .emissions import DEFAULT_CLASS, EmissionDataError, load_coefficients
from .harness import DEFAULT_SEEDS, emit_results, evaluate, sweep
from .policies import PolicyHandle
from .protocol import EnvServer, ProtocolError
from .topology import ScenarioError, load_scenario

TRAJECTORY_HEADER = [
    "t", "veh_id", "kind", "intersection", "lane",
    "pos_m", "speed_mps", "accel_mps2", "movement",
]


def _add_run_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--scenario", required=True,
                   help="scenario file path or bundled name (paper4, mini)")
    p.add_argument("--policy", default="fcfs",
                   help="signal, fcfs, or external:HOST:PORT")
    p.add_argument("--duration", type=int, default=1000,
                   help="episode length in seconds")
    p.add_argument("--window", type=int, default=500,
                   help="trailing seconds entering the aggregates")
    p.add_argument("--dt", type=float, default=1.0)
    p.add_argument("--out", required=True, help="output directory")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mixsim",
        description="Microscopic mixed-autonomy intersection simulator",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="run seeded episodes of one configuration")
    _add_run_args(p)
    p.add_argument("--rv-rate", type=float, required=True,
                   help="robot-vehicle penetration rate in [0, 1]")
    p.add_argument("--seed", type=int, action="append", default=None,
                   help="episode seed; repeat for several runs (default 1..10)")
    p.add_argument("--trajectories", default=None,
                   help="also write a per-tick vehicle trajectory CSV here")
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("sweep", help="evaluate a range of penetration rates")
    _add_run_args(p)
    p.add_argument("--rates", default="0.1:1.0:0.1",
                   help="START:STOP:STEP (inclusive) or comma list")
    p.add_argument("--no-baseline", action="store_true",
                   help="skip the signalized all-HV baseline column")
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("serve", help="host the environment wire protocol")
    p.add_argument("--listen", default="127.0.0.1:0", help="HOST:PORT (port 0 picks one)")
    p.set_defaults(func=cmd_serve)

    p = sub.add_parser("emissions-table", help="dump loaded emission coefficients")
    p.add_argument("--class", dest="veh_class", default=DEFAULT_CLASS)
    p.add_argument("--coeffs", default=None, help="alternative coefficient CSV")
    p.set_defaults(func=cmd_emissions_table)
    return parser


def _parse_rates(text: str) -> tuple[float, ...]:
    if ":" in text:
        parts = text.split(":")
        if len(parts) != 3:
            raise ValueError(f"rates range needs START:STOP:STEP, got {text!r}")
        start, stop, step = (float(x) for x in parts)
        if step <= 0:
            raise ValueError("rates step must be positive")
        out = []
        k = 0
        while True:
            r = start + k * step
            if r > stop + 1e-9:
                break
            out.append(round(r, 9))
            k += 1
        if not out:
            raise ValueError(f"empty rates range {text!r}")
        return tuple(out)
    return tuple(float(x) for x in text.split(","))


def cmd_simulate(args) -> int:
    seeds = tuple(args.seed) if args.seed else DEFAULT_SEEDS
    policy = PolicyHandle.parse(args.policy)
    traj_fh = None
    writer = None
    try:
        if args.trajectories is not None:
            if args.workers > 1:
                raise ValueError("trajectory logging runs with --workers 1")
            traj_fh = open(args.trajectories, "w", newline="")
            writer = csv.writer(traj_fh)
            writer.writerow(TRAJECTORY_HEADER)
        report = evaluate(
            args.scenario, policy, args.rv_rate,
            n_runs=len(seeds), seeds=seeds,
            duration=args.duration, window=args.window, dt=args.dt,
            workers=args.workers, trajectory_writer=writer,
        )
    finally:
        if traj_fh is not None:
            traj_fh.close()
    paths = emit_results(report, args.out)
    print(f"wrote {len(paths)} files to {args.out}")
    _print_summary(report)
    return 0


def cmd_sweep(args) -> int:
    rates = _parse_rates(args.rates)
    policy = PolicyHandle.parse(args.policy)
    reports = sweep(
        args.scenario, policy, rates,
        include_baseline=not args.no_baseline,
        duration=args.duration, window=args.window, dt=args.dt,
        workers=args.workers,
    )
    paths = emit_results(reports, args.out)
    print(f"wrote {len(paths)} files to {args.out}")
    for rep in reports:
        _print_summary(rep)
    return 0


def _print_summary(report) -> None:
    avg = report.four_intersection_average
    fuel = avg.get("fuel")
    wait = avg.get("mean_wait")
    fuel_s = "n/a" if fuel is None else f"{fuel:.4f} ml/s"
    wait_s = "n/a" if wait is None else f"{wait:.1f} s"
    print(f"  {report.config['label']:>10}: fuel {fuel_s}, wait {wait_s}, "
          f"conflicts {report.mean['network']['conflicts']:.0f}")


def cmd_serve(args) -> int:
    server = EnvServer(args.listen)
    host, port = server.address
    print(f"listening on {host}:{port}", flush=True)
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.shutdown()
    return 0


def cmd_emissions_table(args) -> int:
    coeffs = load_coefficients(args.coeffs, emission_class=args.veh_class)
    w = csv.writer(sys.stdout)
    w.writerow(["class", "pollutant", "f1", "f2", "f3", "f4", "f5", "f6", "scale"])
    for pollutant in sorted(coeffs.table):
        row = coeffs.table[pollutant]
        w.writerow([coeffs.emission_class, pollutant, *row, coeffs.scale])
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ScenarioError, SignalPlanError, EmissionDataError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (CollisionError, ProtocolError, ConnectionError, OSError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
