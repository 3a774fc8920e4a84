"""Discrete optimal transport with geodesic ground costs.

Cost matrices are assembled entry by entry from two-point geodesic solves;
plans come from an exact assignment solver (uniform square case) or from
entropic Sinkhorn scaling.
"""
from __future__ import annotations

import csv
import hashlib
import itertools
import json
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np
from scipy.special import logsumexp

from .errors import GeodesicOTError, UnsolvedEntryError
from .geodesic_bvp import GeodesicProblem, Trajectory, solve_geodesic, trapezoid_cost
from .kernel_expr import KernelExpr, parse_kernel
from .optimality import verify_minimizer

logger = logging.getLogger(__name__)

# c_ij / epsilon above this switches Sinkhorn to log-domain updates
LOG_DOMAIN_THRESHOLD = 500.0
BRUTE_FORCE_MAX = 9


@dataclass
class DiscreteMeasure:
    points: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        self.points = np.atleast_2d(np.asarray(self.points, dtype=float))
        self.weights = np.asarray(self.weights, dtype=float).reshape(-1)
        if len(self.points) != len(self.weights):
            raise ValueError("need one weight per point")
        if np.any(self.weights <= 0):
            raise ValueError("weights must be strictly positive")
        if abs(self.weights.sum() - 1.0) > 1e-12:
            raise ValueError(f"weights must sum to 1, got {self.weights.sum()!r}")
        if len(np.unique(self.points, axis=0)) != len(self.points):
            raise ValueError("support points must be pairwise distinct")

    @classmethod
    def uniform(cls, points) -> "DiscreteMeasure":
        points = np.atleast_2d(np.asarray(points, dtype=float))
        return cls(points, np.full(len(points), 1.0 / len(points)))

    def __len__(self) -> int:
        return len(self.weights)


@dataclass
class CostMatrix:
    entries: np.ndarray
    cost_kind: str
    meta: List[List[dict]] = field(default_factory=list)
    kernel: str = ""
    sources: Optional[np.ndarray] = None
    targets: Optional[np.ndarray] = None

    def __post_init__(self):
        self.entries = np.atleast_2d(np.asarray(self.entries, dtype=float))
        if not np.all(np.isfinite(self.entries)) or np.any(self.entries < 0):
            raise ValueError("cost entries must be finite and nonnegative")

    @property
    def shape(self):
        return self.entries.shape


@dataclass
class TransportPlan:
    coupling: np.ndarray
    method: str
    total_cost: float
    marginal_residual: tuple
    epsilon: Optional[float] = None
    iterations: Optional[int] = None
    converged: bool = True
    stabilized: bool = False

    def to_record(self) -> dict:
        return {
            "method": self.method,
            "epsilon": self.epsilon,
            "total_cost": float(self.total_cost),
            "marginal_residual": [float(r) for r in self.marginal_residual],
            "iterations": self.iterations,
            "converged": bool(self.converged),
            "log_domain": bool(self.stabilized),
        }


def _entries(C) -> np.ndarray:
    return C.entries if isinstance(C, CostMatrix) else np.atleast_2d(np.asarray(C, dtype=float))


def _weights(m, size) -> np.ndarray:
    if m is None:
        return np.full(size, 1.0 / size)
    return m.weights if isinstance(m, DiscreteMeasure) else np.asarray(m, dtype=float)


def path_cost(k, traj: Trajectory, kind: str) -> float:
    """Trapezoid quadrature of the length or energy integrand on the trajectory mesh."""
    return trapezoid_cost(k, traj.times, traj.states, traj.derivs, kind)


def constant_speed_energy(k, traj: Trajectory) -> float:
    """Energy estimate ``(mean speed)^2 / 2``, valid along an energy extremal."""
    speeds = k.values(traj.states) * np.linalg.norm(traj.derivs, axis=1)
    return 0.5 * float(speeds.mean()) ** 2


def plan_cost(C, plan) -> float:
    c = _entries(C)
    pi = plan.coupling if isinstance(plan, TransportPlan) else np.asarray(plan, dtype=float)
    if c.shape != pi.shape:
        raise ValueError(f"cost shape {c.shape} does not match plan shape {pi.shape}")
    return float(np.sum(c * pi))


def _marginal_residual(pi, mu, nu):
    return (float(np.max(np.abs(pi.sum(axis=1) - mu))),
            float(np.max(np.abs(pi.sum(axis=0) - nu))))


# ---------------------------------------------------------------------------
# Cost matrix assembly
# ---------------------------------------------------------------------------

_SOLVER_KEYS = ("tol", "mesh_n", "homotopy_steps", "homotopy_steps_max",
                "max_newton_iter", "stages", "max_mesh_n")


# sideways offsets tried when an energy entry fails verification
RETRY_BENDS = (0.05, -0.05)


def _solve_entry(task):
    """Solve one cost-matrix entry in a worker process.

    An energy extremal that fails verification (typically one squeezed
    against a peak of K) is re-solved from bent starts on both sides of the
    chord; the cheapest verified result wins.
    """
    i, j, src, dim, a, b, kind, cfg, verify = task
    k = parse_kernel(src, dim)
    p = GeodesicProblem(a, b, k, kind, **cfg)
    try:
        traj, trace = solve_geodesic(p)
    except UnsolvedEntryError as exc:
        return i, j, None, {"error": str(exc), "last_alpha": exc.last_alpha}
    cost = path_cost(k, traj, kind)
    meta = {
        "homotopy_steps": len(trace),
        "residual": traj.residual,
        "nodes": traj.n_nodes,
        "nonsmooth_point": traj.nonsmooth,
        "restarts": 0,
    }
    if kind == "energy" and verify:
        rep = verify_minimizer(k, traj)
        if not rep.is_minimizer:
            for bend in RETRY_BENDS:
                meta["restarts"] += 1
                try:
                    t2, tr2 = solve_geodesic(p, bend=bend)
                except UnsolvedEntryError:
                    continue
                r2 = verify_minimizer(k, t2)
                c2 = path_cost(k, t2, kind)
                if r2.is_minimizer and (not rep.is_minimizer or c2 < cost):
                    traj, trace, rep, cost = t2, tr2, r2, c2
                    meta.update(homotopy_steps=len(tr2), residual=t2.residual,
                                nodes=t2.n_nodes, nonsmooth_point=t2.nonsmooth)
        meta.update(is_minimizer=rep.is_minimizer, min_det=rep.min_det,
                    speed_range=rep.speed_range)
    return i, j, cost, meta


def cache_key(kernel: KernelExpr, X, Y, kind, cfg) -> str:
    payload = {
        "kernel": kernel.source,
        "dim": kernel.dim,
        "kind": kind,
        "sources": np.asarray(_points(X)).tolist(),
        "targets": np.asarray(_points(Y)).tolist(),
        "solver": {k: cfg[k] for k in sorted(cfg)},
    }
    blob = json.dumps(payload, sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()[:32]


def _points(m):
    return m.points if isinstance(m, DiscreteMeasure) else np.atleast_2d(np.asarray(m, dtype=float))


def build_cost_matrix(k: KernelExpr, X, Y, kind: str, cfg: Optional[dict] = None,
                      jobs: int = 1, verify: bool = True,
                      cache_dir: Optional[str] = None) -> CostMatrix:
    """Pairwise geodesic costs between the supports of ``X`` and ``Y``.

    ``cfg`` overrides solver settings; entries default to 5 homotopy steps
    escalating up to 51. Energy entries also carry the minimizer verdict.
    Results are cached under ``cache_dir`` when given.
    """
    settings = {"homotopy_steps": 5}
    settings.update(cfg or {})
    unknown = set(settings) - set(_SOLVER_KEYS)
    if unknown:
        raise ValueError(f"unknown solver settings: {sorted(unknown)}")
    Xp, Yp = _points(X), _points(Y)

    key = None
    if cache_dir:
        key = cache_key(k, Xp, Yp, kind, settings)
        cached = _load_cached(cache_dir, key)
        if cached is not None:
            logger.info("cost matrix loaded from cache %s", key)
            return cached

    tasks = [(i, j, k.source, k.dim, Xp[i], Yp[j], kind, settings, verify)
             for i in range(len(Xp)) for j in range(len(Yp))]
    entries = np.zeros((len(Xp), len(Yp)))
    meta = [[{} for _ in range(len(Yp))] for _ in range(len(Xp))]
    failed = []
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_solve_entry, tasks, chunksize=1))
    else:
        results = map(_solve_entry, tasks)
    for i, j, cost, m in results:
        meta[i][j] = m
        if cost is None:
            failed.append((i, j))
        else:
            entries[i, j] = cost
    if failed:
        raise UnsolvedEntryError(f"unsolved cost-matrix entries: {failed}", pairs=failed)

    C = CostMatrix(entries, kind, meta, k.source, Xp.copy(), Yp.copy())
    if cache_dir:
        os.makedirs(cache_dir, exist_ok=True)
        write_cost_matrix(C, os.path.join(cache_dir, f"{key}.csv"))
    return C


def _load_cached(cache_dir, key) -> Optional[CostMatrix]:
    path = os.path.join(cache_dir, f"{key}.csv")
    if not (os.path.exists(path) and os.path.exists(path + ".json")):
        return None
    return read_cost_matrix(path)


def write_cost_matrix(C: CostMatrix, path) -> None:
    """Plain CSV matrix plus a ``<path>.json`` metadata sidecar."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        for row in C.entries:
            w.writerow([repr(float(v)) for v in row])
    side = {
        "cost_kind": C.cost_kind,
        "kernel": C.kernel,
        "shape": list(C.entries.shape),
        "sources": None if C.sources is None else C.sources.tolist(),
        "targets": None if C.targets is None else C.targets.tolist(),
        "entries": C.meta,
    }
    with open(str(path) + ".json", "w") as fh:
        json.dump(side, fh, indent=2, sort_keys=True, default=_json_default)
        fh.write("\n")


def read_cost_matrix(path) -> CostMatrix:
    with open(path, newline="") as fh:
        entries = np.array([[float(v) for v in row] for row in csv.reader(fh) if row])
    side = {}
    if os.path.exists(str(path) + ".json"):
        with open(str(path) + ".json") as fh:
            side = json.load(fh)
    return CostMatrix(
        entries,
        side.get("cost_kind", ""),
        side.get("entries", []),
        side.get("kernel", ""),
        None if side.get("sources") is None else np.array(side["sources"]),
        None if side.get("targets") is None else np.array(side["targets"]),
    )


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"not serializable: {type(o).__name__}")


# ---------------------------------------------------------------------------
# Assignment
# ---------------------------------------------------------------------------

def _check_uniform_square(c, mu, nu):
    k0, k1 = c.shape
    if k0 != k1:
        raise ValueError(f"assignment needs a square cost matrix, got {c.shape}")
    for w in (mu, nu):
        if w is not None and np.max(np.abs(_weights(w, k0) - 1.0 / k0)) > 1e-12:
            raise ValueError("assignment needs uniform weights 1/k on both sides")


def _permutation_plan(c, perm, method) -> TransportPlan:
    k = len(perm)
    pi = np.zeros((k, k))
    pi[np.arange(k), perm] = 1.0 / k
    mu = np.full(k, 1.0 / k)
    return TransportPlan(pi, method, float(np.sum(c * pi)), _marginal_residual(pi, mu, mu))


def lap_permutation(c: np.ndarray) -> np.ndarray:
    """Column assigned to each row, by shortest augmenting paths with potentials.

    Rows are inserted one at a time; each insertion runs a Dijkstra-like
    search over reduced costs ``c[i, j] - u[i] - v[j]`` and augments along the
    cheapest alternating path. Ties go to the lowest column index.
    """
    c = np.asarray(c, dtype=float)
    n = c.shape[0]
    u = np.zeros(n + 1)
    v = np.zeros(n + 1)
    match = np.zeros(n + 1, dtype=int)  # match[j] = 1-based row on column j
    way = np.zeros(n + 1, dtype=int)
    for i in range(1, n + 1):
        match[0] = i
        j0 = 0
        minv = np.full(n + 1, np.inf)
        used = np.zeros(n + 1, dtype=bool)
        while True:
            used[j0] = True
            i0 = match[j0]
            free = ~used[1:]
            cur = c[i0 - 1] - u[i0] - v[1:]
            better = free & (cur < minv[1:])
            minv[1:][better] = cur[better]
            way[1:][better] = j0
            cand = np.where(free, minv[1:], np.inf)
            j1 = int(np.argmin(cand)) + 1
            delta = cand[j1 - 1]
            u[match[used]] += delta
            v[used] -= delta
            minv[1:][free] -= delta
            j0 = j1
            if match[j0] == 0:
                break
        while j0:
            j1 = way[j0]
            match[j0] = match[j1]
            j0 = j1
    perm = np.empty(n, dtype=int)
    perm[match[1:] - 1] = np.arange(n)
    return perm


def solve_assignment(C, mu=None, nu=None) -> TransportPlan:
    """Optimal permutation plan for uniform square measures (mass is not split)."""
    c = _entries(C)
    _check_uniform_square(c, mu, nu)
    return _permutation_plan(c, lap_permutation(c), "assignment")


def brute_force_assignment(C) -> TransportPlan:
    """Exhaustive search over permutations; first minimum in lexicographic order."""
    c = _entries(C)
    k = c.shape[0]
    if c.shape != (k, k):
        raise ValueError("brute force needs a square matrix")
    if k > BRUTE_FORCE_MAX:
        raise ValueError(f"brute force limited to k <= {BRUTE_FORCE_MAX}")
    perms = np.array(list(itertools.permutations(range(k))), dtype=int)
    totals = c[np.arange(k)[None, :], perms].sum(axis=1)
    return _permutation_plan(c, perms[int(np.argmin(totals))], "brute-force")


# ---------------------------------------------------------------------------
# Sinkhorn
# ---------------------------------------------------------------------------

def sinkhorn(C, mu=None, nu=None, epsilon: float = 1.0, tol: float = 1e-9,
             max_iter: int = 100000, log_domain: Optional[bool] = None) -> TransportPlan:
    """Entropic OT by alternating scaling ``v = nu / K^T u``, ``u = mu / K v``.

    Stops when the L1 violation of the column marginal falls below ``tol``.
    Log-domain updates are used when some ``c_ij / epsilon`` exceeds 500,
    or when forced with ``log_domain=True``.
    """
    if not epsilon > 0:
        raise ValueError("epsilon must be positive")
    c = _entries(C)
    a = _weights(mu, c.shape[0])
    b = _weights(nu, c.shape[1])
    if log_domain is None:
        log_domain = bool(np.max(c) / epsilon > LOG_DOMAIN_THRESHOLD)
    if not log_domain:
        try:
            return _sinkhorn_plain(c, a, b, epsilon, tol, max_iter)
        except FloatingPointError:
            logger.info("plain Sinkhorn under/overflowed, retrying in log domain")
    return _sinkhorn_log(c, a, b, epsilon, tol, max_iter)


def _finish(c, pi, a, b, eps, it, err, tol, stabilized):
    converged = err < tol
    if not converged:
        logger.warning("Sinkhorn stopped at max_iter=%d with marginal error %.3e", it, err)
    return TransportPlan(pi, "sinkhorn", float(np.sum(c * pi)), _marginal_residual(pi, a, b),
                         epsilon=float(eps), iterations=it, converged=converged,
                         stabilized=stabilized)


def _sinkhorn_plain(c, a, b, eps, tol, max_iter):
    with np.errstate(all="raise"):
        K = np.exp(-c / eps)
        u = np.ones(len(a))
        err = np.inf
        it = 0
        while it < max_iter:
            it += 1
            Ktu = K.T @ u
            v = b / Ktu
            Kv = K @ v
            u = a / Kv
            err = float(np.sum(np.abs(v * (K.T @ u) - b)))
            if err < tol:
                break
        pi = u[:, None] * K * v[None, :]
    return _finish(c, pi, a, b, eps, it, err, tol, False)


def _sinkhorn_log(c, a, b, eps, tol, max_iter):
    f = np.zeros(len(a))  # u = exp(f / eps) = 1
    loga, logb = np.log(a), np.log(b)
    err = np.inf
    it = 0
    while it < max_iter:
        it += 1
        g = eps * (logb - logsumexp((f[:, None] - c) / eps, axis=0))
        f = eps * (loga - logsumexp((g[None, :] - c) / eps, axis=1))
        logpi = (f[:, None] + g[None, :] - c) / eps
        err = float(np.sum(np.abs(np.exp(logsumexp(logpi, axis=0)) - b)))
        if err < tol:
            break
    pi = np.exp((f[:, None] + g[None, :] - c) / eps)
    return _finish(c, pi, a, b, eps, it, err, tol, True)


def solve_transport(C, mu, nu, method: str, epsilon: Optional[float] = None, **kw) -> TransportPlan:
    if method == "assignment":
        return solve_assignment(C, mu, nu)
    if method == "sinkhorn":
        if epsilon is None:
            raise GeodesicOTError("sinkhorn needs epsilon")
        return sinkhorn(C, mu, nu, epsilon, **kw)
    raise ValueError(f"unknown transport method {method!r}")


def write_plan_csv(plan: TransportPlan, sources, targets, path) -> None:
    """Rows ``i, j, x1..xn, y1..yn, mass`` for every (source, target) pair."""
    X, Y = _points(sources), _points(targets)
    n = X.shape[1]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["i", "j"] + [f"x{d + 1}" for d in range(n)]
                   + [f"y{d + 1}" for d in range(n)] + ["mass"])
        for i in range(len(X)):
            for j in range(len(Y)):
                w.writerow([i, j] + [repr(float(v)) for v in X[i]]
                           + [repr(float(v)) for v in Y[j]]
                           + [repr(float(plan.coupling[i, j]))])
