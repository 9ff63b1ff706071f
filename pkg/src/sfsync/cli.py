"""Command-line entry point: ``sfsync design|verify|simulate|sweep``."""
import argparse
import json
import sys

from .errors import DesignFailure, InvalidInput, SyncError, Unsolvable
from .harness import SWEEP_AXES, design_for, export_csv, load_scenario, run_scenario, summarize, sweep
from .protocol import verify_frequency_condition
from .riccati import solve_care

EXIT_OK = 0
EXIT_INVALID = 2
EXIT_UNSOLVABLE = 3
EXIT_NUMERICAL = 4


def _exit_code(exc):
    if isinstance(exc, InvalidInput):
        return EXIT_INVALID
    if isinstance(exc, (Unsolvable, DesignFailure)):
        return EXIT_UNSOLVABLE
    return EXIT_NUMERICAL


def _emit(data, as_json):
    if as_json:
        print(json.dumps(data, indent=2, sort_keys=True))
        return
    for key, value in data.items():
        if isinstance(value, dict):
            print(f"{key}:")
            for k, v in value.items():
                print(f"  {k}: {v}")
        else:
            print(f"{key}: {value}")


def cmd_design(args):
    scenario = load_scenario(args.scenario)
    if args.tau_bar is not None:
        scenario.tau_bar = args.tau_bar
    report = design_for(scenario)
    _emit(report.to_dict(), args.json)
    return EXIT_OK


def cmd_verify(args):
    scenario = load_scenario(args.scenario)
    tau_bar = scenario.tau_bar if args.tau_bar is None else args.tau_bar
    if args.rho is not None and args.epsilon is not None:
        rho, P = args.rho, solve_care(scenario.model, args.epsilon).P
    else:
        params = design_for(scenario, verify=False).params
        rho = params.rho if args.rho is None else args.rho
        P = params.P if args.epsilon is None else solve_care(scenario.model, args.epsilon).P
    rep = verify_frequency_condition(scenario.model, P, rho, tau_bar,
                                     omega_grid=args.omega_points,
                                     tau_grid_count=args.tau_points,
                                     threshold=args.threshold)
    out = {"rho": rho, "tau_bar": tau_bar, **rep.to_dict()}
    _emit(out, args.json)
    return EXIT_OK if rep.passed else EXIT_UNSOLVABLE


def cmd_simulate(args):
    scenario = load_scenario(args.scenario)
    result = run_scenario(scenario, step_size=args.step, t_max=args.t_max,
                          tolerance=args.tolerance, output_stride=args.stride)
    if args.out:
        export_csv(result, args.out)
    summary = summarize(result)
    summary["params"] = result.params.to_dict()
    if args.out:
        summary["csv"] = str(args.out)
    _emit(summary, args.json)
    return EXIT_OK


def _parse_values(axis, text):
    if axis == "delays":
        return [[float(x) for x in chunk.split(",")] for chunk in text.split(";") if chunk.strip()]
    if axis == "N":
        return [int(x) for x in text.split(",")]
    return [float(x) for x in text.split(",")]


def cmd_sweep(args):
    template = load_scenario(args.template)
    try:
        values = _parse_values(args.axis, args.values)
    except ValueError as exc:
        raise InvalidInput(f"--values: {exc}") from None
    rows = sweep(template, args.axis, values, workers=args.workers, t_max=args.t_max)
    table = []
    for r in rows:
        table.append({
            "value": r.value,
            "converged": r.converged,
            "final_sync_error": r.final_sync_error,
            "crossing_time": r.crossing_time,
            "wall_time": round(r.wall_time, 3),
            "error": r.error,
        })
    if args.json:
        print(json.dumps(table, indent=2))
    else:
        for row in table:
            status = row["error"] or ("converged" if row["converged"] else "NOT converged")
            err = row["final_sync_error"]
            err = "-" if err is None else f"{err:.3e}"
            print(f"{args.axis}={row['value']}: {status}  final_error={err}  "
                  f"wall={row['wall_time']}s")
    return EXIT_OK


def build_parser():
    p = argparse.ArgumentParser(
        prog="sfsync",
        description="Scale-free regulated synchronization under unknown input delays",
    )
    sub = p.add_subparsers(dest="command", required=True)

    d = sub.add_parser("design", help="print protocol parameters and margins")
    d.add_argument("scenario")
    d.add_argument("--tau-bar", type=float)
    d.add_argument("--json", action="store_true")
    d.set_defaults(func=cmd_design)

    v = sub.add_parser("verify", help="frequency-domain delay-stability sweep")
    v.add_argument("scenario")
    v.add_argument("--tau-bar", type=float, help="delay range to sweep (default: scenario)")
    v.add_argument("--rho", type=float, help="force rho instead of the designed value")
    v.add_argument("--epsilon", type=float, help="force epsilon instead of the designed value")
    v.add_argument("--omega-points", type=int, default=2001)
    v.add_argument("--tau-points", type=int, default=50)
    v.add_argument("--threshold", type=float, default=1e-10)
    v.add_argument("--json", action="store_true")
    v.set_defaults(func=cmd_verify)

    s = sub.add_parser("simulate", help="design and simulate a scenario")
    s.add_argument("scenario")
    s.add_argument("--out", help="CSV output path")
    s.add_argument("--t-max", type=float)
    s.add_argument("--step", type=float)
    s.add_argument("--stride", type=int, default=1, help="keep every k-th sample")
    s.add_argument("--tolerance", type=float)
    s.add_argument("--json", action="store_true")
    s.set_defaults(func=cmd_simulate)

    w = sub.add_parser("sweep", help="run a scenario template along one axis")
    w.add_argument("template")
    w.add_argument("--axis", required=True, choices=SWEEP_AXES)
    w.add_argument("--values", required=True,
                   help="comma-separated; for delays, ';' separates delay vectors")
    w.add_argument("--workers", type=int)
    w.add_argument("--t-max", type=float)
    w.add_argument("--json", action="store_true")
    w.set_defaults(func=cmd_sweep)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except SyncError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return _exit_code(exc)
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
