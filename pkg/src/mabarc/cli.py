"""Command line front end: solve, analyze, run, sweep, and catalog.

Every subcommand is a thin composition of library calls; no policy or
planning logic lives here.  Exit codes: 0 success, 1 usage or input
errors, 2 infeasible instance (with certificate on stderr), 3 solver
contract violation.
"""

import argparse
import csv
import json
import os
import sys
from typing import List, Optional
from urllib.parse import parse_qsl, urlsplit

from .instances import (
    GAUSSIAN,
    Instance,
    InstanceError,
    RewardModel,
    catalog_get,
    catalog_names,
    load_instance,
)
from .lp_core import SolverContractError
from .oracle import (
    DEFAULT_MAX_SETS,
    PlanningError,
    analyze_instance,
    optimal_allocation,
    rescale_to_margin,
)
from .simulator import (
    ALGORITHMS,
    DEFAULT_ALLOC_STRIDE,
    RunConfig,
    SimulationError,
    compute_metrics,
    run_all,
    summary_payload,
    write_summary_json,
    write_trace_csv,
)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_INFEASIBLE = 2
EXIT_CONTRACT = 3

SWEEP_PARAMS = ("gamma_scale", "sigma", "horizon")

TRACE_FILE = "trace.csv"
SUMMARY_FILE = "summary.json"
MANIFEST_FILE = "manifest.json"


class CliError(Exception):
    """Usage-level problem reported with exit code 1."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse defaults to exit code 2
        raise CliError(message)


def resolve_instance(text: str) -> Instance:
    """Load an instance from a JSON file path or a catalog: URI."""
    if text.startswith("catalog:"):
        parts = urlsplit(text)
        name = parts.path
        eps = None
        for key, value in parse_qsl(parts.query):
            if key != "eps":
                raise CliError(f"unknown catalog parameter {key!r}")
            try:
                eps = float(value)
            except ValueError:
                raise CliError(f"eps must be a number, got {value!r}")
        return catalog_get(name, eps=eps)
    try:
        with open(text) as handle:
            return load_instance(handle.read())
    except FileNotFoundError:
        raise CliError(f"instance file not found: {text}")


def resolve_out(args) -> str:
    if args.out is not None:
        return args.out
    return os.environ.get("MABARC_OUT", ".")


def _emit(payload: dict, fmt: str, csv_rows) -> None:
    """Print a payload as JSON, or as CSV rows built by the caller."""
    if fmt == "json":
        print(json.dumps(payload, indent=2, sort_keys=True))
    else:
        writer = csv.writer(sys.stdout, lineterminator="\n")
        for row in csv_rows():
            writer.writerow(row)


def cmd_catalog(args) -> int:
    entries = [{"name": name, "description": description}
               for name, description in catalog_names()]

    def rows():
        yield ("name", "description")
        for entry in entries:
            yield (entry["name"], entry["description"])

    _emit({"catalog": entries}, args.format, rows)
    return EXIT_OK


def cmd_solve(args) -> int:
    inst = resolve_instance(args.instance)
    alloc, f_star, active = optimal_allocation(inst)
    payload = {
        "instance": inst.name,
        "f_star": f_star,
        "allocation": [[float(v) for v in row] for row in alloc.w],
        "saturated_arms": list(active.saturated_arms),
        "zero_pairs": [list(pair) for pair in active.zero_pairs],
    }

    def rows():
        yield ("arm", "context", "weight")
        num_arms, num_contexts = alloc.w.shape
        for k in range(num_arms):
            for c in range(num_contexts):
                yield (k, c, repr(float(alloc.w[k, c])))

    _emit(payload, args.format, rows)
    return EXIT_OK


def cmd_analyze(args) -> int:
    inst = resolve_instance(args.instance)
    report = analyze_instance(inst, max_sets=args.max_sets)
    payload = {
        "instance": inst.name,
        "f_star": report.f_star,
        "gamma_star": report.gamma_star,
        "performance_sensitivity": report.S_gamma,
        "rho_star": report.rho_star,
        "saturated_arms": list(report.active_set.saturated_arms),
        "zero_pairs": [list(p) for p in report.active_set.zero_pairs],
        "num_candidate_sets": len(report.per_set_gaps),
        "degenerate": report.degenerate,
        "enumeration_truncated": report.enumeration_truncated,
    }

    def rows():
        yield ("key", "value")
        for key in ("f_star", "gamma_star", "performance_sensitivity",
                    "rho_star", "num_candidate_sets", "degenerate",
                    "enumeration_truncated"):
            yield (key, payload[key])

    _emit(payload, args.format, rows)
    return EXIT_OK


def _execute_run(inst: Instance, algorithm: str, horizon: int, epochs: int,
                 seed: int, stride: int, threads: int, out_dir: str) -> dict:
    """Run all epochs, write trace.csv and summary.json, return summary."""
    config = RunConfig(inst, algorithm, horizon, epochs, seed,
                       alloc_stride=stride, out_dir=out_dir)
    traces = run_all(config, max_workers=threads)
    report = analyze_instance(inst)
    metrics = compute_metrics(traces, report)
    os.makedirs(out_dir, exist_ok=True)
    write_trace_csv(traces, os.path.join(out_dir, TRACE_FILE))
    payload = summary_payload(config, metrics, report)
    write_summary_json(payload, os.path.join(out_dir, SUMMARY_FILE))
    return payload


def cmd_run(args) -> int:
    inst = resolve_instance(args.instance)
    out_dir = resolve_out(args)
    _execute_run(inst, args.alg, args.horizon, args.epochs, args.seed,
                 args.alloc_stride, args.threads, out_dir)
    print(out_dir)
    return EXIT_OK


def _sweep_point(inst: Instance, param: str, value: float, horizon: int):
    """Instance and horizon for one sweep point; may raise ValueError."""
    if param == "gamma_scale":
        rescaled, _ = rescale_to_margin(inst, value)
        return rescaled, horizon
    if param == "sigma":
        noisy = Instance(inst.means, inst.probs, inst.thresholds,
                         RewardModel(GAUSSIAN, value),
                         name=f"{inst.name}#sigma={value:g}")
        return noisy, horizon
    point_horizon = int(value)
    if point_horizon != value or point_horizon < 1:
        raise ValueError(f"horizon must be a positive integer, got {value}")
    return inst, point_horizon


def cmd_sweep(args) -> int:
    inst = resolve_instance(args.instance)
    out_dir = resolve_out(args)
    os.makedirs(out_dir, exist_ok=True)
    points = []
    for value in args.values:
        try:
            point_inst, point_horizon = _sweep_point(inst, args.param, value,
                                                     args.horizon)
        except (ValueError, InstanceError) as err:
            print(f"warning: skipping {args.param}={value:g}: {err}",
                  file=sys.stderr)
            continue
        subdir = f"{args.param}={value:g}"
        point_dir = os.path.join(out_dir, subdir)
        payload = _execute_run(point_inst, args.alg, point_horizon,
                               args.epochs, args.seed, args.alloc_stride,
                               args.threads, point_dir)
        points.append({
            "value": value,
            "dir": subdir,
            "instance": point_inst.name,
            "horizon": point_horizon,
            "gamma_star": payload["oracle"]["gamma_star"],
        })
    if not points:
        raise CliError("all sweep points were skipped")
    manifest = {
        "param": args.param,
        "algorithm": args.alg,
        "base_instance": inst.name,
        "epochs": args.epochs,
        "base_seed": args.seed,
        "points": points,
    }
    with open(os.path.join(out_dir, MANIFEST_FILE), "w") as handle:
        handle.write(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    print(out_dir)
    return EXIT_OK


def build_parser() -> _Parser:
    parser = _Parser(prog="mabarc",
                     description="Planning and simulation for contextual "
                                 "bandits with revenue floors.")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_instance(p):
        p.add_argument("--instance", required=True,
                       help="JSON file path or catalog:name[?eps=V]")

    def add_format(p):
        p.add_argument("--format", choices=("csv", "json"), default="json")

    def add_run_args(p):
        p.add_argument("--alg", required=True, choices=sorted(ALGORITHMS))
        p.add_argument("--horizon", type=int, required=True)
        p.add_argument("--epochs", type=int, default=1)
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--out", default=None,
                       help="output directory (default: $MABARC_OUT or .)")
        p.add_argument("--threads", type=int, default=1)
        p.add_argument("--alloc-stride", type=int,
                       default=DEFAULT_ALLOC_STRIDE)

    p_catalog = sub.add_parser("catalog", help="list built-in instances")
    add_format(p_catalog)
    p_catalog.set_defaults(func=cmd_catalog)

    p_solve = sub.add_parser("solve", help="optimal allocation and value")
    add_instance(p_solve)
    add_format(p_solve)
    p_solve.set_defaults(func=cmd_solve)

    p_analyze = sub.add_parser("analyze",
                               help="margin, sensitivity, and gap constants")
    add_instance(p_analyze)
    add_format(p_analyze)
    p_analyze.add_argument("--max-sets", type=int, default=DEFAULT_MAX_SETS)
    p_analyze.set_defaults(func=cmd_analyze)

    p_run = sub.add_parser("run", help="simulate one algorithm")
    add_instance(p_run)
    add_run_args(p_run)
    p_run.set_defaults(func=cmd_run)

    p_sweep = sub.add_parser("sweep",
                             help="run a grid over one experiment parameter")
    add_instance(p_sweep)
    add_run_args(p_sweep)
    p_sweep.add_argument("--param", required=True, choices=SWEEP_PARAMS)
    p_sweep.add_argument("--values", type=float, nargs="+", required=True)
    p_sweep.set_defaults(func=cmd_sweep)

    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except CliError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_USAGE
    except (InstanceError, SimulationError, ValueError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_USAGE
    except PlanningError as err:
        print(f"infeasible: {err}", file=sys.stderr)
        if err.certificate is not None:
            print(f"certificate: {err.certificate!r}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except SolverContractError as err:
        print(f"solver contract violation: {err}", file=sys.stderr)
        return EXIT_CONTRACT


if __name__ == "__main__":
    sys.exit(main())
