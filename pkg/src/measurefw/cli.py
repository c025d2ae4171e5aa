"""Command-line front end.

Usage:
    measure-fw solve --scenario three-point.json --algo fcfw --iters 500 --seed 0 --out runs/tri
    measure-fw influence-map --scenario s.json --measure runs/tri/measure.json --resolution 200 --out h.csv
    measure-fw certify --scenario s.json --measure runs/tri/measure.json --grid 200 --tol 1e-4
    measure-fw oracle two-point --y1 0 0 --y2 1 0 --lambda1 0.5 --lambda2 0.5 --budget 1
    measure-fw oracle simulate --scenario s.json --measure m.json --reps 1000000
    measure-fw make-city --units 287 --seed 1 --out city.json
    measure-fw scenario three-point --out tri.json

``--scenario`` takes a file path, JSON text, or ``builtin:NAME``.

Exit codes: 0 success, 2 invalid input, 3 solver precondition violated,
4 certification failed.
"""

from __future__ import annotations

import argparse
import json
import logging
import shlex
import sys
from collections.abc import Sequence
from pathlib import Path
from typing import Optional

from measurefw.__vers import __version__
from measurefw.artifacts import (
    CERTIFICATE_FILE,
    MEASURE_FILE,
    TRACE_FILE,
    RunManifest,
    input_hash,
    read_measure,
    write_influence_grid,
    write_json,
    write_measure,
    write_trace,
)
from measurefw.client import Planner
from measurefw.exceptions import PreconditionError, ScenarioError
from measurefw.scenario import (
    BUILTIN_SCENARIOS,
    Problem,
    builtin_scenario,
    load_scenario,
    make_city,
    scenario_to_json,
)
from measurefw.solver import SolverConfig
from measurefw.types import ALGORITHMS, NORMS, EstimateSchema

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_PRECONDITION = 3
EXIT_NOT_CERTIFIED = 4

BUILTIN_PREFIX = "builtin:"


def _load(source: str) -> tuple[Problem, bytes]:
    """Scenario and the bytes it was read from."""
    if source.startswith(BUILTIN_PREFIX):
        name = source[len(BUILTIN_PREFIX) :]
        if name not in BUILTIN_SCENARIOS:
            raise ScenarioError(f"unknown builtin scenario {name!r}, expected one of {BUILTIN_SCENARIOS}")
        problem = builtin_scenario(name)
        return problem, json.dumps(scenario_to_json(problem), sort_keys=True).encode()
    problem = load_scenario(source)
    if source.lstrip().startswith("{"):
        return problem, source.encode()
    return problem, Path(source).read_bytes()


def _planner(args: argparse.Namespace, config: Optional[SolverConfig] = None) -> Planner:
    return Planner(config=config, threads=args.threads)


def _print_json(document) -> None:
    print(json.dumps(document, indent=2))


def cmd_solve(args: argparse.Namespace) -> int:
    """Run a solver and write measure.json, trace.csv and manifest.json.

    Solvers that certify their result also get a certificate.json.
    """
    problem, raw = _load(args.scenario)
    changes = {"max_outer_iters": args.iters, "seed": args.seed}
    if args.batch is not None:
        changes["mc_batch_size"] = args.batch
    if args.tol is not None:
        changes["fw_tolerance"] = args.tol
    try:
        config = SolverConfig().replace(**changes)
    except ValueError as e:
        raise ScenarioError(str(e)) from e

    with _planner(args, config) as planner:
        mu, trace = planner.solve(problem, args.algo)

    out = Path(args.out)
    write_measure(out / MEASURE_FILE, mu)
    write_trace(out / TRACE_FILE, trace)
    if trace.certificate is not None:
        write_json(out / CERTIFICATE_FILE, trace.certificate.to_json())
    command = shlex.join(args.argv)
    RunManifest(
        scenario=args.scenario,
        command=command,
        config=config.to_json(),
        seed=config.seed,
        output_dir=str(out),
        input_hash=input_hash(raw, command, config.to_json()),
    ).write(out)
    last = trace.records[-1]
    verdict = f", {trace.certificate.verdict}" if trace.certificate is not None else ""
    print(
        f"{args.algo}: {len(trace)} iterations ({trace.stop_reason}), J={trace.final_objective:.12g}, "
        f"h*={last.h_star:.6g}, atoms={len(mu)}{verdict} -> {out}"
    )
    return EXIT_OK


def cmd_influence_map(args: argparse.Namespace) -> int:
    """Write the influence function of a measure as an (x, y, h) CSV."""
    problem, _ = _load(args.scenario)
    mu = read_measure(args.measure)
    with _planner(args) as planner:
        grid = planner.influence_map(mu, problem, args.resolution)
    write_influence_grid(args.out, grid)
    min_h, at = grid.argmin()
    print(f"min h={min_h:.6g} at ({at.x:.6g}, {at.y:.6g}) -> {args.out}")
    return EXIT_OK


def cmd_certify(args: argparse.Namespace) -> int:
    """Print the optimality certificate; exit 4 when it fails."""
    problem, _ = _load(args.scenario)
    mu = read_measure(args.measure)
    with _planner(args) as planner:
        cert = planner.certify(mu, problem, args.grid, args.tol)
    _print_json(cert.to_json())
    return EXIT_OK if cert.optimal else EXIT_NOT_CERTIFIED


def cmd_two_point(args: argparse.Namespace) -> int:
    """Print the closed-form two-point optimum as a measure document."""
    try:
        mu = Planner(threads=1).two_point(args.y1, args.y2, args.lambda1, args.lambda2, args.budget)
    except ValueError as e:
        raise ScenarioError(str(e)) from e
    _print_json(mu.to_json())
    return EXIT_OK


def cmd_simulate(args: argparse.Namespace) -> int:
    """Print a Monte-Carlo estimate of J with its standard error."""
    problem, _ = _load(args.scenario)
    mu = read_measure(args.measure)
    if args.reps < 1:
        raise ScenarioError("reps must be at least 1")
    estimate, se = Planner(threads=1).simulate(mu, problem, args.reps, args.seed)
    result: EstimateSchema = {"estimate": estimate, "standard_error": se, "reps": args.reps}
    _print_json(result)
    return EXIT_OK


def cmd_make_city(args: argparse.Namespace) -> int:
    """Write a synthetic city scenario."""
    try:
        problem = make_city(args.units, args.seed, args.budget)
    except ValueError as e:
        raise ScenarioError(str(e)) from e
    write_json(args.out, scenario_to_json(problem))
    return EXIT_OK


def cmd_scenario(args: argparse.Namespace) -> int:
    """Write one of the builtin scenarios."""
    try:
        problem = builtin_scenario(args.name, args.budget, args.norm)
    except ValueError as e:
        raise ScenarioError(str(e)) from e
    write_json(args.out, scenario_to_json(problem))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    """Parser with one subcommand per command."""
    parser = argparse.ArgumentParser(
        prog="measure-fw",
        description="Frank-Wolfe placement of volunteer responders over discrete measures.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="count", default=0, help="-v for INFO, -vv for DEBUG")
    parser.add_argument(
        "--threads",
        type=int,
        default=None,
        help="worker threads (default: MEASURE_FW_THREADS, 0 = one per CPU)",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("solve", help="run a solver")
    p.add_argument("--scenario", required=True)
    p.add_argument("--algo", choices=ALGORITHMS, default="fcfw")
    p.add_argument("--iters", type=int, default=SolverConfig.max_outer_iters)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--batch", type=int, default=None, help="frozen batch size for continuous laws")
    p.add_argument("--tol", type=float, default=None, help="stop once |h*| falls below this")
    p.set_defaults(handler=cmd_solve)

    p = sub.add_parser("influence-map", help="write the influence function on a grid")
    p.add_argument("--scenario", required=True)
    p.add_argument("--measure", required=True)
    p.add_argument("--resolution", type=int, default=100)
    p.add_argument("--out", required=True)
    p.set_defaults(handler=cmd_influence_map)

    p = sub.add_parser("certify", help="check the optimality condition")
    p.add_argument("--scenario", required=True)
    p.add_argument("--measure", required=True)
    p.add_argument("--grid", type=int, default=100)
    p.add_argument("--tol", type=float, default=1e-6)
    p.set_defaults(handler=cmd_certify)

    oracle = sub.add_parser("oracle", help="analytic and simulation oracles").add_subparsers(
        dest="oracle", required=True
    )
    p = oracle.add_parser("two-point", help="closed-form optimum for two demand points")
    p.add_argument("--y1", type=float, nargs=2, required=True, metavar=("X", "Y"))
    p.add_argument("--y2", type=float, nargs=2, required=True, metavar=("X", "Y"))
    p.add_argument("--lambda1", type=float, required=True)
    p.add_argument("--lambda2", type=float, required=True)
    p.add_argument("--budget", type=float, default=1.0)
    p.set_defaults(handler=cmd_two_point)

    p = oracle.add_parser("simulate", help="Monte-Carlo estimate from the Poisson model")
    p.add_argument("--scenario", required=True)
    p.add_argument("--measure", required=True)
    p.add_argument("--reps", type=int, default=100_000)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(handler=cmd_simulate)

    p = sub.add_parser("make-city", help="write a synthetic city scenario")
    p.add_argument("--units", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--budget", type=float, default=50.0)
    p.add_argument("--out", required=True)
    p.set_defaults(handler=cmd_make_city)

    p = sub.add_parser("scenario", help="write a builtin scenario")
    p.add_argument("name", choices=BUILTIN_SCENARIOS)
    p.add_argument("--budget", type=float, default=1.0)
    p.add_argument("--norm", choices=NORMS, default="l2")
    p.add_argument("--out", required=True)
    p.set_defaults(handler=cmd_scenario)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Entry point of the ``measure-fw`` console script."""
    argv = list(sys.argv[1:] if argv is None else argv)
    args = build_parser().parse_args(argv)
    args.argv = ["measure-fw", *argv]
    level = {0: logging.WARNING, 1: logging.INFO}.get(args.verbose, logging.DEBUG)
    logging.basicConfig(level=level, format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    try:
        return args.handler(args)
    except ScenarioError as e:
        print(f"❌ invalid input: {e}", file=sys.stderr)
        return EXIT_INPUT
    except PreconditionError as e:
        print(f"❌ precondition violated: {e}", file=sys.stderr)
        return EXIT_PRECONDITION
    except ValueError as e:
        # Planner configuration, e.g. a bad MEASURE_FW_THREADS value.
        print(f"❌ invalid input: {e}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
