"""Geodesics of a weighted metric as two-point boundary value problems.

The Euler-Lagrange equations for the length Lagrangian ``K(x)|x'|`` and the
energy Lagrangian ``K(x)^2 |x'|^2 / 2`` are written as first-order systems in
``y = (x, v)`` and discretized by Lobatto IIIA collocation. The nonlinear
collocation equations are solved by damped Newton with a sparse Jacobian
assembled from the analytic derivatives of the right-hand side, and the
target kernel is reached by continuation through ``(1 - alpha) + alpha*K``.
"""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np
import scipy.sparse as sp
from numpy.polynomial import legendre as npleg
from scipy.interpolate import CubicHermiteSpline
from scipy.sparse.linalg import spsolve

from .errors import (
    KernelDomainError,
    NewtonConvergenceError,
    UnsolvedEntryError,
)
from .kernel_expr import HomotopyKernel, KernelExpr, check_positive

logger = logging.getLogger(__name__)

COST_KINDS = ("length", "energy")

# Homotopy schedules tried in order after a failure; capped by homotopy_steps_max.
HOMOTOPY_LADDER = (5, 11, 21, 41)

_VELOCITY_FLOOR = 1e-12
_MAX_HALVINGS = 10
# intervals narrower than this are never split again; a defect that survives
# down to this width sits on a kink of K (e.g. norm(x) at the origin)
_MIN_INTERVAL = 1e-9


@dataclass
class GeodesicProblem:
    a: np.ndarray
    b: np.ndarray
    kernel: KernelExpr
    cost_kind: str = "energy"
    tol: float = 1e-4
    mesh_n: int = 101
    homotopy_steps: int = 21
    homotopy_steps_max: int = 51
    max_newton_iter: int = 50
    stages: int = 4
    max_mesh_n: int = 20001

    def __post_init__(self):
        self.a = np.asarray(self.a, dtype=float).reshape(-1)
        self.b = np.asarray(self.b, dtype=float).reshape(-1)
        if self.a.shape != (self.kernel.dim,) or self.b.shape != (self.kernel.dim,):
            raise ValueError(f"endpoints must have length {self.kernel.dim}")
        if self.cost_kind not in COST_KINDS:
            raise ValueError(f"cost_kind must be one of {COST_KINDS}, got {self.cost_kind!r}")
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if self.mesh_n < 2:
            raise ValueError("mesh_n must be at least 2")
        if self.homotopy_steps < 2:
            raise ValueError("homotopy_steps must be at least 2 (alpha = 0 and 1)")
        if self.homotopy_steps > self.homotopy_steps_max:
            raise ValueError("homotopy_steps exceeds homotopy_steps_max")
        if self.stages not in (2, 3, 4, 5):
            raise ValueError("stages must be between 2 and 5")

    @property
    def dim(self) -> int:
        return self.kernel.dim


@dataclass
class Trajectory:
    """Path sampled on a mesh of [0, 1]: states x(t_k) and velocities x'(t_k)."""

    times: np.ndarray
    states: np.ndarray
    derivs: np.ndarray
    alpha: float = 0.0
    residual: float = 0.0
    kind: Optional[str] = None
    nonsmooth: bool = False
    newton_iterations: int = 0

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.states = np.atleast_2d(np.asarray(self.states, dtype=float))
        self.derivs = np.atleast_2d(np.asarray(self.derivs, dtype=float))
        if self.states.shape != self.derivs.shape or len(self.times) != len(self.states):
            raise ValueError("times, states and derivs must agree in length")
        if np.any(np.diff(self.times) <= 0):
            raise ValueError("times must be strictly increasing")

    @property
    def dim(self) -> int:
        return self.states.shape[1]

    @property
    def n_nodes(self) -> int:
        return len(self.times)


# ---------------------------------------------------------------------------
# Euler-Lagrange right-hand sides
# ---------------------------------------------------------------------------

def _el_terms(kind, K, g, H, V, with_jac=True):
    """Acceleration f(x, v) and its Jacobians for a batch of points.

    ``K``, ``g``, ``H`` are kernel value, gradient, Hessian at the positions,
    ``V`` the velocities. Returns ``f`` of shape (m, n) and, when requested,
    ``f_x`` and ``f_v`` of shape (m, n, n).
    """
    speed2 = np.einsum("ij,ij->i", V, V)
    invK = 1.0 / K
    f = (speed2 * invK)[:, None] * g
    gv = None
    if kind == "energy":
        gv = np.einsum("ij,ij->i", g, V)
        f = f - (2.0 * gv * invK)[:, None] * V
    if not with_jac:
        return f, None, None

    n = V.shape[1]
    ggT = g[:, :, None] * g[:, None, :]
    fx = speed2[:, None, None] * (invK[:, None, None] * H - (invK * invK)[:, None, None] * ggT)
    fv = (2.0 * invK)[:, None, None] * (g[:, :, None] * V[:, None, :])
    if kind == "energy":
        Hv = np.einsum("ijk,ik->ij", H, V)
        w = invK[:, None] * Hv - (gv * invK * invK)[:, None] * g
        fx = fx - 2.0 * V[:, :, None] * w[:, None, :]
        fv = fv - (2.0 * invK)[:, None, None] * (
            V[:, :, None] * g[:, None, :] + gv[:, None, None] * np.eye(n)[None]
        )
    return f, fx, fv


def _single_rhs(kind, k, x, v):
    x = np.asarray(x, dtype=float)
    v = np.asarray(v, dtype=float)
    ev = k.jet(x[None, :], order=1)
    check_positive(ev.value)
    f, _, _ = _el_terms(kind, ev.value, ev.grad, None, v[None, :], with_jac=False)
    return f[0]


def el_rhs_energy(k, x, v) -> np.ndarray:
    """Acceleration of the energy Euler-Lagrange equation.

    ``(|v|^2 / K) grad K - (2 grad K . v / K) v``
    """
    return _single_rhs("energy", k, x, v)


def el_rhs_length(k, x, v) -> np.ndarray:
    """Acceleration ``(|v|^2 / K) grad K`` of the length equation; ``v`` must be nonzero."""
    if not np.any(np.asarray(v, dtype=float)):
        raise ValueError("length Euler-Lagrange equation is singular at zero velocity")
    return _single_rhs("length", k, x, v)


def length_velocity_hessian(K: float, v) -> np.ndarray:
    """Second velocity derivative of ``K|v|``: ``(K/|v|^3)(|v|^2 I - v v^T)``."""
    v = np.asarray(v, dtype=float)
    nv = np.linalg.norm(v)
    return (K / nv**3) * (nv**2 * np.eye(len(v)) - np.outer(v, v))


def lagrangian_values(kernel, states, derivs, kind) -> np.ndarray:
    K = kernel.values(states)
    if kind == "length":
        return K * np.linalg.norm(derivs, axis=1)
    if kind == "energy":
        return 0.5 * K**2 * np.einsum("ij,ij->i", derivs, derivs)
    raise ValueError(f"unknown cost kind {kind!r}")


def trapezoid_cost(kernel, times, states, derivs, kind) -> float:
    vals = lagrangian_values(kernel, states, derivs, kind)
    return float(np.sum(0.5 * np.diff(times) * (vals[1:] + vals[:-1])))


# ---------------------------------------------------------------------------
# Lobatto IIIA collocation
# ---------------------------------------------------------------------------

def lobatto_iiia(s: int) -> Tuple[np.ndarray, np.ndarray]:
    """Nodes ``c`` on [0, 1] and coefficient matrix ``A`` of the s-stage method."""
    if s == 2:
        c = np.array([0.0, 1.0])
    else:
        # interior Lobatto points are the roots of P'_{s-1}
        dcoef = npleg.legder([0] * (s - 1) + [1])
        inner = np.sort(npleg.legroots(dcoef))
        c = np.concatenate(([0.0], 0.5 * (inner + 1.0), [1.0]))
    A = np.zeros((s, s))
    for j in range(s):
        others = np.delete(c, j)
        poly = np.poly1d(others, r=True) / np.prod(c[j] - others)
        integral = np.polyint(poly)
        A[:, j] = integral(c) - integral(0.0)
    return c, A


def _lagrange_tables(c, taus):
    """Basis values l_j(tau) and integrals int_0^tau l_j for each test point."""
    s = len(c)
    ell = np.zeros((len(taus), s))
    L = np.zeros((len(taus), s))
    for j in range(s):
        others = np.delete(c, j)
        poly = np.poly1d(others, r=True) / np.prod(c[j] - others)
        integral = np.polyint(poly)
        ell[:, j] = poly(taus)
        L[:, j] = integral(taus) - integral(0.0)
    return ell, L


class _Collocation:
    """Collocation equations for one problem at one homotopy level."""

    def __init__(self, problem: GeodesicProblem, alpha: float):
        self.p = problem
        self.n = problem.dim
        self.d = 2 * self.n
        self.kind = problem.cost_kind
        self.hk = HomotopyKernel(problem.kernel, float(alpha))
        self.s = problem.stages
        self.c, self.A = lobatto_iiia(self.s)
        self.nonsmooth = False
        mids = 0.5 * (self.c[1:] + self.c[:-1])
        self.test_ell, self.test_L = _lagrange_tables(self.c, mids)

    # -- layout ------------------------------------------------------------
    def point_times(self, mesh):
        h = np.diff(mesh)
        t = (mesh[:-1, None] + h[:, None] * self.c[None, :-1]).reshape(-1)
        return np.append(t, mesh[-1])

    def interval_index(self, N):
        return np.arange(N)[:, None] * (self.s - 1) + np.arange(self.s)[None, :]

    # -- right-hand side -----------------------------------------------------
    def rhs(self, Y, with_jac=True):
        n = self.n
        X, V = Y[:, :n], Y[:, n:]
        ev = self.hk.jet(X, order=2 if with_jac else 1)
        check_positive(ev.value)
        if not (np.all(np.isfinite(ev.grad))
                and (ev.hess is None or np.all(np.isfinite(ev.hess)))):
            raise KernelDomainError("non-finite kernel derivatives along the path")
        self.nonsmooth |= ev.nonsmooth
        if self.kind == "length":
            # keep the Dirichlet system well posed through zero-velocity iterates
            nv = np.linalg.norm(V, axis=1)
            small = nv < _VELOCITY_FLOOR
            if np.any(small):
                V = V.copy()
                V[small, 0] += _VELOCITY_FLOOR
        f, fx, fv = _el_terms(self.kind, ev.value, ev.grad, ev.hess, V, with_jac)
        F = np.concatenate([Y[:, n:], f], axis=1)
        if not with_jac:
            return F, None
        m = len(Y)
        JF = np.zeros((m, self.d, self.d))
        JF[:, :n, n:] = np.eye(n)
        JF[:, n:, :n] = fx
        JF[:, n:, n:] = fv
        return F, JF

    # -- residual and Jacobian ---------------------------------------------
    def residual(self, mesh, Y, F):
        h = np.diff(mesh)
        idx = self.interval_index(len(h))
        Yk, Fk = Y[idx], F[idx]
        R = Yk[:, 1:] - Yk[:, :1] - h[:, None, None] * np.einsum("ij,kjd->kid", self.A[1:], Fk)
        return R.reshape(-1)

    def jacobian(self, mesh, JF, free):
        h = np.diff(mesh)
        N, s, d = len(h), self.s, self.d
        idx = self.interval_index(N)
        E = np.eye(s)[1:] - np.eye(s)[None, 0].repeat(s - 1, axis=0)
        blocks = (E[None, :, :, None, None] * np.eye(d)[None, None, None]
                  - h[:, None, None, None, None] * self.A[None, 1:, :, None, None]
                  * JF[idx][:, None])
        eq = (np.arange(N)[:, None] * (s - 1) + np.arange(s - 1)[None, :])
        rows = (eq[:, :, None, None, None] * d
                + np.arange(d)[None, None, None, :, None])
        cols = (idx[:, None, :, None, None] * d
                + np.arange(d)[None, None, None, None, :])
        rows = np.broadcast_to(rows, blocks.shape).reshape(-1)
        cols = np.broadcast_to(cols, blocks.shape).reshape(-1)
        M = N * (s - 1) + 1
        J = sp.csc_matrix((blocks.reshape(-1), (rows, cols)), shape=(N * (s - 1) * d, M * d))
        return J[:, free]

    def free_mask(self, M):
        free = np.ones(M * self.d, dtype=bool)
        free[: self.n] = False
        free[(M - 1) * self.d: (M - 1) * self.d + self.n] = False
        return free

    # -- Newton --------------------------------------------------------------
    def newton(self, mesh, Y):
        """Damped Newton on the collocation system; returns (Y, iterations)."""
        p = self.p
        Y = Y.copy()
        M = len(Y)
        Y[0, : self.n] = p.a
        Y[-1, : self.n] = p.b
        free = self.free_mask(M)
        F, JF = self.rhs(Y)
        R = self.residual(mesh, Y, F)
        for it in range(1, p.max_newton_iter + 1):
            scale = 1.0 + np.max(np.abs(Y))
            rnorm = np.max(np.abs(R))
            if rnorm <= 1e-10 * scale:
                return Y, it - 1
            J = self.jacobian(mesh, JF, free)
            try:
                step = spsolve(J, -R)
            except RuntimeError as exc:  # singular factorization
                raise NewtonConvergenceError(f"singular Newton matrix: {exc}") from exc
            if not np.all(np.isfinite(step)):
                raise NewtonConvergenceError("singular Newton matrix")
            full = np.zeros(M * self.d)
            full[free] = step
            full = full.reshape(M, self.d)
            r2 = np.linalg.norm(R)
            lam = 1.0
            for _ in range(_MAX_HALVINGS + 1):
                trial = Y + lam * full
                try:
                    Ft, JFt = self.rhs(trial)
                except KernelDomainError:
                    lam *= 0.5
                    continue
                Rt = self.residual(mesh, trial, Ft)
                if np.linalg.norm(Rt) <= (1.0 - 1e-4 * lam) * r2:
                    break
                lam *= 0.5
            else:
                raise NewtonConvergenceError(
                    f"line search failed at Newton iteration {it} (|R| = {rnorm:.3e})")
            Y, F, JF, R = trial, Ft, JFt, Rt
            if lam == 1.0 and np.max(np.abs(full)) <= 1e-12 * scale:
                return Y, it
        if np.max(np.abs(R)) <= 1e-10 * (1.0 + np.max(np.abs(Y))):
            return Y, p.max_newton_iter
        raise NewtonConvergenceError(
            f"Newton did not converge in {p.max_newton_iter} iterations "
            f"(|R| = {np.max(np.abs(R)):.3e})")

    # -- error control -------------------------------------------------------
    def interval_residuals(self, mesh, Y, F):
        """Scaled defect |u' - F(u)| / (1 + |F(u)|) at points between stages."""
        h = np.diff(mesh)
        N = len(h)
        idx = self.interval_index(N)
        Fk = F[idx]
        U = Y[idx[:, 0]][:, None, :] + h[:, None, None] * np.einsum("qj,kjd->kqd", self.test_L, Fk)
        dU = np.einsum("qj,kjd->kqd", self.test_ell, Fk)
        FU, _ = self.rhs(U.reshape(-1, self.d), with_jac=False)
        FU = FU.reshape(U.shape)
        r = np.abs(dU - FU) / (1.0 + np.abs(FU))
        return r.max(axis=(1, 2))

    def cost(self, mesh, Y):
        n = self.n
        nodes = Y[:: self.s - 1]
        return trapezoid_cost(self.hk, mesh, nodes[:, :n], nodes[:, n:], self.kind)

    def refine(self, mesh, Y, F, splits):
        """Split interval k into ``splits[k]`` equal pieces and interpolate Y."""
        pieces = [mesh[:-1]]
        h = np.diff(mesh)
        new_t = [mesh[-1:]]
        for q in range(2, int(splits.max()) + 1):
            sel = splits >= q
            pieces.append(mesh[:-1][sel] + h[sel] * (q - 1) / splits[sel])
        new_mesh = np.unique(np.concatenate(pieces + new_t))
        new_times = self.point_times(new_mesh)
        k = np.clip(np.searchsorted(mesh, new_times, side="right") - 1, 0, len(h) - 1)
        tau = (new_times - mesh[k]) / h[k]
        newY = self._dense_points(mesh, Y, F, k, tau)
        # nodes that already exist keep their exact values
        newY[-1] = Y[-1]
        return new_mesh, newY

    def _dense_points(self, mesh, Y, F, k, tau):
        h = np.diff(mesh)
        idx = self.interval_index(len(h))[k]
        out = np.empty((len(k), self.d))
        # group by identical tau to keep the Lagrange tables small
        for t_val in np.unique(tau):
            sel = tau == t_val
            _, L = _lagrange_tables(self.c, np.array([t_val]))
            out[sel] = Y[idx[sel, 0]] + h[k[sel], None] * np.einsum("j,mjd->md", L[0], F[idx[sel]])
        return out


def straight_line_init(a, b, mesh_n: int) -> Trajectory:
    """Uniform-mesh straight line from ``a`` to ``b`` (the alpha = 0 geodesic)."""
    if mesh_n < 2:
        raise ValueError("mesh_n must be at least 2")
    a = np.asarray(a, dtype=float).reshape(-1)
    b = np.asarray(b, dtype=float).reshape(-1)
    t = np.linspace(0.0, 1.0, mesh_n)
    states = a[None, :] + t[:, None] * (b - a)[None, :]
    states[-1] = b
    derivs = np.repeat((b - a)[None, :], mesh_n, axis=0)
    return Trajectory(t, states, derivs, alpha=0.0)


def _initial_points(col: _Collocation, init: Trajectory, mesh: np.ndarray) -> np.ndarray:
    """Stage-point guesses from a node-only trajectory by Hermite interpolation."""
    t = init.times
    acc_kernel = HomotopyKernel(col.p.kernel, float(init.alpha))
    ev = acc_kernel.jet(init.states, order=1)
    kind = init.kind or col.kind
    acc, _, _ = _el_terms(kind, ev.value, ev.grad, None, init.derivs, with_jac=False)
    pts = col.point_times(mesh)
    X = CubicHermiteSpline(t, init.states, init.derivs, axis=0)(pts)
    V = CubicHermiteSpline(t, init.derivs, acc, axis=0)(pts)
    return np.concatenate([X, V], axis=1)


def _to_trajectory(col: _Collocation, mesh, Y, alpha, residual, iters) -> Trajectory:
    n = col.n
    nodes = Y[:: col.s - 1]
    states = nodes[:, :n].copy()
    states[0] = col.p.a
    states[-1] = col.p.b
    return Trajectory(
        times=mesh.copy(),
        states=states,
        derivs=nodes[:, n:].copy(),
        alpha=float(alpha),
        residual=float(residual),
        kind=col.kind,
        nonsmooth=col.nonsmooth,
        newton_iterations=iters,
    )


def solve_bvp(p: GeodesicProblem, init: Trajectory, alpha: float,
              cost_check: bool = True) -> Trajectory:
    """Solve the Euler-Lagrange BVP at homotopy level ``alpha``.

    The mesh starts from ``init.times`` and is refined where the collocation
    defect exceeds ``p.tol``. With ``cost_check`` the mesh is then halved until
    the trapezoid cost changes by less than ``tol * (1 + |cost|)``.

    Raises:
        NewtonConvergenceError: Newton failed on some mesh.
        KernelPositivityError: a Newton iterate left the region where K > 0.
    """
    col = _Collocation(p, alpha)
    mesh = np.asarray(init.times, dtype=float).copy()
    if mesh[0] != 0.0 or mesh[-1] != 1.0:
        raise ValueError("trajectory mesh must span [0, 1]")
    Y = _initial_points(col, init, mesh)
    Y, iters = col.newton(mesh, Y)

    def check_size(m):
        if len(m) > p.max_mesh_n:
            raise NewtonConvergenceError(
                f"mesh refinement exceeded {p.max_mesh_n} nodes at alpha={alpha}")

    while True:
        F, _ = col.rhs(Y, with_jac=False)
        res = col.interval_residuals(mesh, Y, F)
        worst = float(res.max())
        if worst <= p.tol:
            break
        bad = (res > p.tol) & (np.diff(mesh) > _MIN_INTERVAL)
        if not bad.any():
            logger.info("alpha=%.4f: defect %.2e left on intervals at the width floor", alpha, worst)
            col.nonsmooth = True
            break
        logger.debug("alpha=%.4f refine: nodes=%d residual=%.2e", alpha, len(mesh), worst)
        splits = np.where(bad, np.where(res > 100 * p.tol, 3, 2), 1)
        mesh, Y = col.refine(mesh, Y, F, splits)
        check_size(mesh)
        Y, more = col.newton(mesh, Y)
        iters += more

    if cost_check:
        cost = col.cost(mesh, Y)
        while True:
            F, _ = col.rhs(Y, with_jac=False)
            fine_mesh, fine_Y = col.refine(mesh, Y, F, np.full(len(mesh) - 1, 2))
            check_size(fine_mesh)
            fine_Y, more = col.newton(fine_mesh, fine_Y)
            iters += more
            fine_cost = col.cost(fine_mesh, fine_Y)
            mesh, Y = fine_mesh, fine_Y
            logger.debug("alpha=%.4f cost check: nodes=%d cost=%.10g", alpha, len(mesh), fine_cost)
            if abs(fine_cost - cost) <= p.tol * (1.0 + abs(fine_cost)):
                break
            cost = fine_cost
        F, _ = col.rhs(Y, with_jac=False)
        worst = float(col.interval_residuals(mesh, Y, F).max())

    logger.debug("alpha=%.4f nodes=%d residual=%.2e newton=%d", alpha, len(mesh), worst, iters)
    return _to_trajectory(col, mesh, Y, alpha, worst, iters)


def homotopy_schedule(p: GeodesicProblem) -> List[int]:
    """Step counts tried in order, e.g. 5 -> 11 -> 21 -> 41 -> 51."""
    steps = [p.homotopy_steps]
    steps += [s for s in HOMOTOPY_LADDER if p.homotopy_steps < s < p.homotopy_steps_max]
    if p.homotopy_steps_max > steps[-1]:
        steps.append(p.homotopy_steps_max)
    return steps


def bent_line_init(a, b, mesh_n: int, bend: float = 0.05) -> Trajectory:
    """Chord pushed sideways by ``bend * |b - a| * sin(pi t)``.

    Used to leave a symmetric extremal (for instance a straight line through a
    peak of K) when continuation from the straight line stalls on it.
    """
    line = straight_line_init(a, b, mesh_n)
    d = line.states[-1] - line.states[0]
    n = len(d)
    if n < 2:
        return line
    # unit normal: the coordinate axis least aligned with the chord, orthogonalized
    e = np.zeros(n)
    e[int(np.argmin(np.abs(d)))] = 1.0
    dist = float(np.linalg.norm(d))
    normal = e - (e @ d) / dist**2 * d if dist > 0 else e
    normal /= np.linalg.norm(normal)
    t = line.times
    amp = bend * max(dist, 1.0)
    states = line.states + amp * np.sin(np.pi * t)[:, None] * normal[None, :]
    derivs = line.derivs + amp * np.pi * np.cos(np.pi * t)[:, None] * normal[None, :]
    return Trajectory(t, states, derivs, alpha=0.0)


def solve_geodesic(p: GeodesicProblem, bend: Optional[float] = None):
    """Continuation in alpha from the straight line to the target kernel.

    Every step count of :func:`homotopy_schedule` is tried in turn, each time
    restarting from the straight line. If all of them fail, the schedule is
    run once more from a slightly bent chord, skipping the alpha = 0 solve
    (which would straighten it again). An explicit ``bend`` skips the
    straight-line attempts and uses only that bent start; its sign selects
    the side.

    Returns ``(trajectory, trace)`` where ``trace`` is a list of
    ``(alpha, Trajectory)`` for every level of the successful schedule.
    """
    last_good = 0.0
    errors = []
    attempts = []
    if bend is None:
        attempts += [(steps, False) for steps in homotopy_schedule(p)]
        bend = 0.05
    attempts += [(steps, True) for steps in homotopy_schedule(p)]
    for steps, bent in attempts:
        if bent:
            traj = bent_line_init(p.a, p.b, p.mesh_n, bend)
            levels = np.linspace(0.0, 1.0, steps)[1:]
        else:
            traj = straight_line_init(p.a, p.b, p.mesh_n)
            levels = np.linspace(0.0, 1.0, steps)
        trace = [(0.0, traj)] if bent else []
        alpha = 0.0
        try:
            for alpha in levels:
                alpha = float(alpha)
                traj = solve_bvp(p, traj, alpha, cost_check=(alpha == 1.0))
                trace.append((alpha, traj))
                last_good = max(last_good, alpha)
        except (NewtonConvergenceError, KernelDomainError) as exc:
            label = f"{steps} steps" + (" (bent start)" if bent else "")
            logger.info("homotopy with %s failed at alpha=%.3f: %s", label, alpha, exc)
            errors.append(f"{label}: {exc}")
            continue
        return traj, trace
    raise UnsolvedEntryError(
        "geodesic solve failed for every homotopy schedule: " + "; ".join(errors),
        last_alpha=last_good,
    )


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------

def trajectory_header(n: int) -> List[str]:
    return ["t"] + [f"x{i + 1}" for i in range(n)] + [f"v{i + 1}" for i in range(n)]


def write_trajectory_csv(traj: Trajectory, path, extra_columns=None) -> None:
    """Write ``t, x1..xn, v1..vn`` rows; ``extra_columns`` prepends named columns."""
    extra = extra_columns or {}
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(list(extra) + trajectory_header(traj.dim))
        for k in range(traj.n_nodes):
            row = [repr(float(v)) for v in extra.values()]
            row += [repr(float(traj.times[k]))]
            row += [repr(float(v)) for v in traj.states[k]]
            row += [repr(float(v)) for v in traj.derivs[k]]
            w.writerow(row)


def read_trajectory_csv(path, alpha: float = 1.0, kind: Optional[str] = None) -> Trajectory:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = np.array([[float(v) for v in row] for row in reader if row])
    if not header or header[0] != "t":
        raise ValueError(f"{path}: expected columns t, x1..xn, v1..vn")
    n = (len(header) - 1) // 2
    if header != trajectory_header(n):
        raise ValueError(f"{path}: unexpected columns {header}")
    return Trajectory(rows[:, 0], rows[:, 1: 1 + n], rows[:, 1 + n:], alpha=alpha, kind=kind)


def trajectory_record(traj: Trajectory, cost: Optional[float] = None) -> dict:
    rec = {
        "alpha": traj.alpha,
        "residual": traj.residual,
        "kind": traj.kind,
        "nodes": traj.n_nodes,
        "newton_iterations": traj.newton_iterations,
        "nonsmooth_point": traj.nonsmooth,
    }
    if cost is not None:
        rec["cost"] = cost
    return rec
