"""Command line front end.

    geodesic-ot geodesic  --preset E1 --cost both --out runs/e1
    geodesic-ot transport --config e7.yaml --method sinkhorn --epsilon 0.2 --jobs 4
    geodesic-ot preset E5 --cost length --method assignment
    geodesic-ot verify --trajectory runs/e1/energy/trajectory.csv --kernel "1/(0.5+norm(x))"
"""
from __future__ import annotations

import argparse
import dataclasses
import logging
import sys
from typing import List, Optional

import yaml

from .config import COST_CHOICES, METHODS, PRESET_NAMES, ProblemSpec, load_problem, preset
from .errors import GeodesicOTError
from .geodesic_bvp import read_trajectory_csv
from .kernel_expr import parse_kernel
from .optimality import verify_minimizer
from .pipeline import ReportBundle, export_outputs, run_pipeline

log = logging.getLogger("geodesic_ot")


def _add_common(p: argparse.ArgumentParser, with_source: bool = True) -> None:
    if with_source:
        src = p.add_mutually_exclusive_group(required=True)
        src.add_argument("--config", metavar="PATH", help="YAML or JSON problem file")
        src.add_argument("--preset", metavar="NAME", choices=PRESET_NAMES,
                         help="one of the worked examples")
    p.add_argument("--cost", choices=COST_CHOICES, default=None,
                   help="cost functional (default: from config, or both)")
    p.add_argument("--out", metavar="DIR", help="write CSV/summary files here")
    p.add_argument("--format", choices=("json", "yaml"), default=None, help="summary format")
    p.add_argument("-v", "--verbose", action="count", default=0)


def _add_transport(p: argparse.ArgumentParser) -> None:
    p.add_argument("--method", choices=METHODS, default=None)
    p.add_argument("--epsilon", type=float, default=None, help="Sinkhorn regularization")
    p.add_argument("--jobs", type=int, default=None, help="parallel cost-matrix workers")
    p.add_argument("--cache", metavar="DIR", help="reuse cost matrices stored here")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="geodesic-ot",
        description="Weighted geodesics, optimality checks and geodesic-cost transport.")
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("geodesic", help="solve a two-point geodesic problem")
    _add_common(g)

    t = sub.add_parser("transport", help="cost matrix + assignment or Sinkhorn")
    _add_common(t)
    _add_transport(t)

    pr = sub.add_parser("preset", help="run (or print) one of the worked examples")
    pr.add_argument("name", choices=PRESET_NAMES)
    _add_common(pr, with_source=False)
    _add_transport(pr)
    pr.add_argument("--show", action="store_true", help="print the configuration and exit")

    v = sub.add_parser("verify", help="optimality check of an energy trajectory")
    src = v.add_mutually_exclusive_group(required=True)
    src.add_argument("--trajectory", metavar="CSV", help="trajectory file (t, x.., v..)")
    src.add_argument("--config", metavar="PATH", help="geodesic problem to solve and verify")
    src.add_argument("--preset", metavar="NAME", choices=PRESET_NAMES)
    v.add_argument("--kernel", help="kernel expression (with --trajectory)")
    v.add_argument("-v", "--verbose", action="count", default=0)
    return parser


def _resolve(args, mode: Optional[str]) -> ProblemSpec:
    name = getattr(args, "name", None) or getattr(args, "preset", None)
    if name:
        spec = preset(name, kind=args.cost or "both", method=getattr(args, "method", None))
    else:
        spec = load_problem(args.config)
        if args.cost:
            spec = dataclasses.replace(spec, cost=args.cost)
    if mode and spec.mode != mode:
        raise GeodesicOTError(f"this is a {spec.mode} problem; use the '{spec.mode}' command")
    changes = {}
    if getattr(args, "method", None):
        changes["method"] = args.method
    if getattr(args, "epsilon", None) is not None:
        changes["epsilon"] = args.epsilon
    if getattr(args, "jobs", None):
        changes["jobs"] = args.jobs
    if getattr(args, "out", None):
        changes["out_dir"] = args.out
    if getattr(args, "format", None):
        changes["format"] = args.format
    return dataclasses.replace(spec, **changes) if changes else spec


def _print_bundle(bundle: ReportBundle) -> None:
    spec = bundle.spec
    label = spec.name or spec.mode
    if spec.mode == "geodesic":
        for kind in spec.cost_kinds:
            traj = bundle.trajectories[kind]
            print(f"{label} {kind:6s} cost = {bundle.costs[kind]:.6g}  "
                  f"(nodes {traj.n_nodes}, residual {traj.residual:.1e})")
        for kind, rep in bundle.reports.items():
            print(f"{label} {kind:6s} minimizer = {rep.is_minimizer}  "
                  f"legendre = {rep.legendre_ok}  min det U = {rep.min_det}  "
                  f"speed range = {rep.speed_range:.2e} (mean {rep.speed_mean:.6g})")
        for key, val in sorted(bundle.equivalence.items()):
            print(f"{label} {key} = {val:.3e}")
    else:
        for kind in spec.cost_kinds:
            plan = bundle.plans[kind]
            extra = f" eps={spec.epsilon:g} iters={plan.iterations}" if spec.method == "sinkhorn" else ""
            print(f"{label} {kind:6s} {spec.method} total = {bundle.totals[kind]:.6g}{extra}")
    for key, val in sorted(bundle.timings.items()):
        log.info("time %s: %.2f s", key, val)


def _run(args, mode: Optional[str]) -> int:
    spec = _resolve(args, mode)
    if getattr(args, "show", False):
        yaml.safe_dump(spec.to_dict(), sys.stdout, sort_keys=True)
        return 0
    bundle = run_pipeline(spec, cache_dir=getattr(args, "cache", None))
    _print_bundle(bundle)
    if spec.out_dir:
        manifest = export_outputs(bundle, spec.out_dir)
        print(f"wrote {len(manifest['files'])} files to {spec.out_dir}")
    return 0


def _verify(args) -> int:
    if args.trajectory:
        if not args.kernel:
            raise GeodesicOTError("--trajectory needs --kernel")
        traj = read_trajectory_csv(args.trajectory, kind="energy")
        k = parse_kernel(args.kernel, traj.dim)
    else:
        args.cost, args.out, args.format = "energy", None, None
        spec = _resolve(args, "geodesic")
        bundle = run_pipeline(spec)
        traj, k = bundle.trajectories["energy"], spec.kernel_expr()
    rep = verify_minimizer(k, traj)
    for key, val in rep.to_record().items():
        print(f"{key}: {val}")
    return 0 if rep.is_minimizer else 1


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "verify":
            return _verify(args)
        mode = None if args.command == "preset" else args.command
        return _run(args, mode)
    except (GeodesicOTError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
