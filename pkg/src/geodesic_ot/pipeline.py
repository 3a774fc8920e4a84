"""Run a ProblemSpec end to end and export plot-ready files.

Geodesic mode solves the requested cost kinds, verifies the energy path and
compares length and energy solutions. Transport mode assembles the geodesic
cost matrix and solves the discrete transport problem on it.
"""
from __future__ import annotations

import csv
import hashlib
import json
import logging
import os
import time
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np
import yaml

from .config import ProblemSpec
from .geodesic_bvp import (GeodesicProblem, Trajectory, solve_geodesic, trajectory_header,
                           trajectory_record, write_trajectory_csv)
from .optimality import OptimalityReport, verify_minimizer, write_det_csv, write_speed_csv
from .transport import (CostMatrix, TransportPlan, build_cost_matrix, constant_speed_energy,
                        path_cost, plan_cost, solve_transport, write_cost_matrix, write_plan_csv)

logger = logging.getLogger(__name__)


@dataclass
class ReportBundle:
    spec: ProblemSpec
    trajectories: Dict[str, Trajectory] = field(default_factory=dict)
    traces: Dict[str, List[Tuple[float, Trajectory]]] = field(default_factory=dict)
    reports: Dict[str, OptimalityReport] = field(default_factory=dict)
    costs: Dict[str, float] = field(default_factory=dict)
    equivalence: Dict[str, float] = field(default_factory=dict)
    matrices: Dict[str, CostMatrix] = field(default_factory=dict)
    plans: Dict[str, TransportPlan] = field(default_factory=dict)
    totals: Dict[str, float] = field(default_factory=dict)
    timings: Dict[str, float] = field(default_factory=dict)

    def summary(self) -> dict:
        """Deterministic record of the results (timings are left out)."""
        out = {"config": self.spec.to_dict(with_output=False)}
        if self.spec.mode == "geodesic":
            out["geodesic"] = {
                kind: trajectory_record(self.trajectories[kind], self.costs[kind])
                for kind in sorted(self.trajectories)
            }
            out["optimality"] = {kind: r.to_record() for kind, r in sorted(self.reports.items())}
            if self.equivalence:
                out["equivalence"] = dict(sorted(self.equivalence.items()))
        else:
            out["transport"] = {
                kind: {**self.plans[kind].to_record(), "total_cost": self.totals[kind],
                       "all_energy_entries_verified": _all_verified(self.matrices[kind])}
                for kind in sorted(self.plans)
            }
        return out


def _all_verified(C: CostMatrix):
    if C.cost_kind != "energy":
        return None
    flags = [m.get("is_minimizer") for row in C.meta for m in row]
    if any(f is None for f in flags):
        return None
    return bool(all(flags))


def _geodesic(spec: ProblemSpec, bundle: ReportBundle) -> None:
    k = spec.kernel_expr()
    a, b = np.array(spec.a, dtype=float), np.array(spec.b, dtype=float)
    for kind in spec.cost_kinds:
        t0 = time.perf_counter()
        traj, trace = solve_geodesic(GeodesicProblem(a, b, k, kind, **spec.solver))
        bundle.trajectories[kind] = traj
        bundle.traces[kind] = trace
        bundle.costs[kind] = path_cost(k, traj, kind)
        if kind == "energy":
            bundle.reports[kind] = verify_minimizer(k, traj)
        bundle.timings[f"solve_{kind}"] = time.perf_counter() - t0
        logger.info("%s cost %.10g (%d nodes)", kind, bundle.costs[kind], traj.n_nodes)

    if "energy" in bundle.trajectories:
        y = bundle.trajectories["energy"]
        E = bundle.costs["energy"]
        Ly = path_cost(k, y, "length")
        bundle.equivalence["length_of_energy_path"] = Ly
        bundle.equivalence["constant_speed_energy"] = constant_speed_energy(k, y)
        if "length" in bundle.trajectories:
            Lz = bundle.costs["length"]
            bundle.equivalence["length_squared_minus_twice_energy"] = abs(Lz**2 - 2.0 * E)
            bundle.equivalence["length_gap"] = abs(Lz - Ly)


def _transport(spec: ProblemSpec, bundle: ReportBundle, jobs: int,
               cache_dir: Optional[str]) -> None:
    k = spec.kernel_expr()
    mu, nu = spec.sources.measure(), spec.targets.measure()
    for kind in spec.cost_kinds:
        t0 = time.perf_counter()
        C = build_cost_matrix(k, mu, nu, kind, cfg=spec.solver, jobs=jobs, cache_dir=cache_dir)
        bundle.timings[f"cost_matrix_{kind}"] = time.perf_counter() - t0
        t0 = time.perf_counter()
        kw = {}
        if spec.method == "sinkhorn":
            kw = {"tol": spec.sinkhorn_tol, "max_iter": spec.sinkhorn_max_iter}
        plan = solve_transport(C, mu, nu, spec.method, epsilon=spec.epsilon, **kw)
        bundle.timings[f"{spec.method}_{kind}"] = time.perf_counter() - t0
        bundle.matrices[kind] = C
        bundle.plans[kind] = plan
        bundle.totals[kind] = plan_cost(C, plan)
        logger.info("%s %s total %.10g", kind, spec.method, bundle.totals[kind])


def run_pipeline(spec: ProblemSpec, jobs: Optional[int] = None,
                 cache_dir: Optional[str] = None) -> ReportBundle:
    """Solve everything ``spec`` asks for; errors from the solvers propagate."""
    bundle = ReportBundle(spec)
    t0 = time.perf_counter()
    if spec.mode == "geodesic":
        _geodesic(spec, bundle)
    else:
        _transport(spec, bundle, spec.jobs if jobs is None else jobs, cache_dir)
    bundle.timings["total"] = time.perf_counter() - t0
    return bundle


# ---------------------------------------------------------------------------
# Export
# ---------------------------------------------------------------------------

def _write_trace(trace, path) -> None:
    """All homotopy levels stacked in one CSV with a leading ``alpha`` column."""
    n = trace[0][1].dim
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["alpha"] + trajectory_header(n))
        for alpha, traj in trace:
            for k in range(traj.n_nodes):
                w.writerow([repr(float(alpha)), repr(float(traj.times[k]))]
                           + [repr(float(v)) for v in traj.states[k]]
                           + [repr(float(v)) for v in traj.derivs[k]])


def _write_summary(record: dict, path: str, fmt: str) -> None:
    with open(path, "w") as fh:
        if fmt == "yaml":
            yaml.safe_dump(record, fh, sort_keys=True, default_flow_style=False)
        else:
            json.dump(record, fh, indent=2, sort_keys=True)
            fh.write("\n")


def _sha256(path: str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def export_outputs(bundle: ReportBundle, outdir: str, fmt: Optional[str] = None) -> dict:
    """Write CSV tables, the summary and ``manifest.json``; return the manifest.

    Each cost kind gets its own subdirectory. Geodesic runs write
    ``trajectory.csv``, ``homotopy_trace.csv``, ``speed.csv`` and (energy)
    ``detU.csv``; transport runs write ``cost_matrix.csv`` (with a JSON
    metadata sidecar) and ``plan.csv``.
    """
    fmt = fmt or bundle.spec.format
    os.makedirs(outdir, exist_ok=True)
    written = []

    def rel(*parts):
        path = os.path.join(outdir, *parts)
        os.makedirs(os.path.dirname(path), exist_ok=True)
        written.append(os.path.join(*parts))
        return path

    spec = bundle.spec
    if spec.mode == "geodesic":
        k = spec.kernel_expr()
        for kind, traj in sorted(bundle.trajectories.items()):
            write_trajectory_csv(traj, rel(kind, "trajectory.csv"))
            _write_trace(bundle.traces[kind], rel(kind, "homotopy_trace.csv"))
            if kind in bundle.reports:
                write_det_csv(bundle.reports[kind], rel(kind, "detU.csv"))
                write_speed_csv(bundle.reports[kind], rel(kind, "speed.csv"))
            else:
                speeds = k.values(traj.states) * np.linalg.norm(traj.derivs, axis=1)
                rep = OptimalityReport(0.0, 0.0, False, 0.0, None, None, None, None, False,
                                       speeds=speeds, times=traj.times)
                write_speed_csv(rep, rel(kind, "speed.csv"))
    else:
        mu, nu = spec.sources.measure(), spec.targets.measure()
        for kind in sorted(bundle.plans):
            path = rel(kind, "cost_matrix.csv")
            write_cost_matrix(bundle.matrices[kind], path)
            written.append(os.path.join(kind, "cost_matrix.csv.json"))
            write_plan_csv(bundle.plans[kind], mu, nu, rel(kind, "plan.csv"))

    summary_name = "summary." + ("yaml" if fmt == "yaml" else "json")
    _write_summary(bundle.summary(), rel(summary_name), fmt)

    files = []
    for name in sorted(written):
        path = os.path.join(outdir, name)
        files.append({"path": name.replace(os.sep, "/"), "sha256": _sha256(path),
                      "bytes": os.path.getsize(path)})
    manifest = {"files": files}
    with open(os.path.join(outdir, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return manifest
