"""A-posteriori checks that a computed energy extremal is a minimizer.

Three checks are combined: constant speed ``K(x)|x'|`` along the path
(necessary), positive definiteness of ``L_vv`` (Legendre), and absence of a
sign change of ``det U`` for the linear Hamiltonian system

    U' = -P^{-1} V,   V' = -Q U,   U(0) = I, V(0) = 0,

integrated with symplectic Euler on the trajectory's own mesh.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import KernelDomainError
from .geodesic_bvp import Trajectory, length_velocity_hessian
from .kernel_expr import KernelExpr, check_positive

# det(U_k) at or below this counts as a crossing
DET_CROSSING = 1e-12


@dataclass
class SpeedProfile:
    speeds: np.ndarray
    range: float
    mean: float


@dataclass
class SecondVariationBlocks:
    """Second-variation coefficients along a trajectory.

    ``A``, ``B``, ``C`` live on all N+1 nodes; ``Bdot``, ``P`` and ``Q`` on
    nodes 0..N-1 because the derivative of B is a forward difference.
    """

    times: np.ndarray
    P: np.ndarray
    Q: np.ndarray
    A: Optional[np.ndarray] = None
    B: Optional[np.ndarray] = None
    C: Optional[np.ndarray] = None
    Bdot: Optional[np.ndarray] = None
    hessian_method: str = "forward-mode"

    @classmethod
    def from_pq(cls, times, P, Q) -> "SecondVariationBlocks":
        """Blocks given directly; P and Q hold one matrix per interval."""
        times = np.asarray(times, dtype=float)
        P = np.asarray(P, dtype=float)
        Q = np.asarray(Q, dtype=float)
        if P.ndim == 1:
            P = P[:, None, None]
        if Q.ndim == 1:
            Q = Q[:, None, None]
        if len(P) != len(times) - 1 or len(Q) != len(times) - 1:
            raise ValueError("need one P and one Q block per mesh interval")
        return cls(times, P, Q, hessian_method="given")


@dataclass
class ScanResult:
    legendre_ok: bool
    min_legendre_eig: float
    dets: Optional[np.ndarray] = None
    conjugate_point: Optional[int] = None
    conjugate_time: Optional[float] = None
    min_det: Optional[float] = None
    symplectic_residual: Optional[float] = None
    symplectic_scale: Optional[float] = None


@dataclass
class OptimalityReport:
    speed_range: float
    speed_mean: float
    legendre_ok: bool
    min_legendre_eig: float
    conjugate_point: Optional[int]
    conjugate_time: Optional[float]
    min_det: Optional[float]
    symplectic_residual: Optional[float]
    is_minimizer: bool
    hessian_method: str = "forward-mode"
    speeds: np.ndarray = field(default=None, repr=False)
    times: np.ndarray = field(default=None, repr=False)
    dets: Optional[np.ndarray] = field(default=None, repr=False)

    def to_record(self) -> dict:
        def num(v):
            return None if v is None else float(v)

        return {
            "speed_range": float(self.speed_range),
            "speed_mean": float(self.speed_mean),
            "legendre_ok": bool(self.legendre_ok),
            "min_legendre_eig": float(self.min_legendre_eig),
            "conjugate_point": self.conjugate_point,
            "conjugate_time": num(self.conjugate_time),
            "min_det": num(self.min_det),
            "symplectic_residual": num(self.symplectic_residual),
            "is_minimizer": bool(self.is_minimizer),
            "hessian_method": self.hessian_method,
        }


def speed_profile(k: KernelExpr, traj: Trajectory) -> SpeedProfile:
    """Per-node speeds ``K(x_k)|x'_k|`` with their spread and mean."""
    speeds = k.values(traj.states) * np.linalg.norm(traj.derivs, axis=1)
    return SpeedProfile(speeds, float(speeds.max() - speeds.min()), float(speeds.mean()))


def _kernel_hessians(k: KernelExpr, X: np.ndarray):
    ev = k.jet(X, order=2)
    check_positive(ev.value)
    if np.all(np.isfinite(ev.hess)) and not ev.nonsmooth:
        return ev.value, ev.grad, ev.hess, "forward-mode"
    # central differences of the forward-mode gradient
    n = X.shape[1]
    H = np.empty((len(X), n, n))
    for i in range(n):
        step = 1e-5 * (1.0 + np.abs(X[:, i]))
        Xp, Xm = X.copy(), X.copy()
        Xp[:, i] += step
        Xm[:, i] -= step
        gp = k.jet(Xp, order=1).grad
        gm = k.jet(Xm, order=1).grad
        H[:, :, i] = (gp - gm) / (2.0 * step[:, None])
    H = 0.5 * (H + np.swapaxes(H, 1, 2))
    if not np.all(np.isfinite(H)):
        raise KernelDomainError("non-finite kernel Hessian along the trajectory")
    return ev.value, ev.grad, H, "central-difference"


def second_variation_blocks(k: KernelExpr, traj: Trajectory) -> SecondVariationBlocks:
    """Blocks of the second variation of ``L = K^2 |v|^2 / 2`` along ``traj``."""
    X, V = traj.states, traj.derivs
    n = traj.dim
    K, g, H, method = _kernel_hessians(k, X)
    if not np.all(np.isfinite(g)):
        raise KernelDomainError("non-finite kernel gradient along the trajectory")
    speed2 = np.einsum("ij,ij->i", V, V)
    A = speed2[:, None, None] * (g[:, :, None] * g[:, None, :] + K[:, None, None] * H)
    A = 0.5 * (A + np.swapaxes(A, 1, 2))
    B = 2.0 * K[:, None, None] * g[:, :, None] * V[:, None, :]
    C = (K**2)[:, None, None] * np.eye(n)[None]
    h = np.diff(traj.times)
    Bdot = (B[1:] - B[:-1]) / h[:, None, None]
    P = C[:-1].copy()
    Q = A[:-1] - 0.5 * (Bdot + np.swapaxes(Bdot, 1, 2))
    return SecondVariationBlocks(traj.times.copy(), P, Q, A, B, C, Bdot, method)


def refine_blocks(blocks: SecondVariationBlocks) -> SecondVariationBlocks:
    """Halve every scan interval, interpolating P and Q linearly."""
    t = blocks.times
    mid = 0.5 * (t[1:] + t[:-1])
    times = np.empty(2 * len(t) - 1)
    times[0::2] = t
    times[1::2] = mid

    def interp(M):
        nxt = np.concatenate([M[1:], M[-1:]])  # last interval has no right value
        out = np.empty((2 * len(M),) + M.shape[1:])
        out[0::2] = M
        out[1::2] = 0.5 * (M + nxt)
        return out

    return SecondVariationBlocks(times, interp(blocks.P), interp(blocks.Q),
                                 hessian_method=blocks.hessian_method)


def conjugate_point_scan(blocks: SecondVariationBlocks, times=None) -> ScanResult:
    """Symplectic Euler on the Jacobi system, watching the sign of det U.

    Skipped (``dets`` is None) when some P_k is not positive definite.
    """
    times = blocks.times if times is None else np.asarray(times, dtype=float)
    P, Q = blocks.P, blocks.Q
    eigs = np.linalg.eigvalsh(P)
    min_eig = float(eigs.min())
    scale = max(1.0, float(np.abs(eigs).max()))
    if not min_eig > 1e-12 * scale:
        return ScanResult(False, min_eig)

    n = P.shape[1]
    N = len(times) - 1
    U = np.eye(n)
    V = np.zeros((n, n))
    dets = np.empty(N + 1)
    dets[0] = 1.0
    sym_res = 0.0
    sym_scale = 0.0
    crossing = None
    for k in range(N):
        hk = times[k + 1] - times[k]
        V = V - hk * (Q[k] @ U)
        Z = np.linalg.solve(P[k], V)
        U = U - hk * Z
        dets[k + 1] = np.linalg.det(U)
        S = U.T @ V - V.T @ U
        sym_res = max(sym_res, float(np.abs(S).sum(axis=1).max()))
        sym_scale = max(sym_scale, float(np.abs(U).sum(axis=1).max() * np.abs(V).sum(axis=1).max()))
        if crossing is None and dets[k + 1] <= DET_CROSSING:
            crossing = k + 1
    return ScanResult(
        legendre_ok=True,
        min_legendre_eig=min_eig,
        dets=dets,
        conjugate_point=crossing,
        conjugate_time=None if crossing is None else float(times[crossing]),
        min_det=float(dets.min()),
        symplectic_residual=sym_res,
        symplectic_scale=sym_scale,
    )


def verify_minimizer(k: KernelExpr, traj: Trajectory) -> OptimalityReport:
    """Speed profile, Legendre condition and conjugate-point scan in one report.

    A length trajectory never passes: ``L_vv`` of ``K|v|`` is singular along v.
    """
    prof = speed_profile(k, traj)
    if traj.kind == "length":
        K = k.values(traj.states)
        P = np.stack([length_velocity_hessian(Ki, v) for Ki, v in zip(K, traj.derivs)])
        min_eig = float(np.linalg.eigvalsh(P).min())
        return OptimalityReport(
            prof.range, prof.mean, False, min_eig, None, None, None, None, False,
            hessian_method="not-needed", speeds=prof.speeds, times=traj.times,
        )
    blocks = second_variation_blocks(k, traj)
    scan = conjugate_point_scan(blocks)
    ok = scan.legendre_ok and scan.conjugate_point is None
    return OptimalityReport(
        speed_range=prof.range,
        speed_mean=prof.mean,
        legendre_ok=scan.legendre_ok,
        min_legendre_eig=scan.min_legendre_eig,
        conjugate_point=scan.conjugate_point,
        conjugate_time=scan.conjugate_time,
        min_det=scan.min_det,
        symplectic_residual=scan.symplectic_residual,
        is_minimizer=ok,
        hessian_method=blocks.hessian_method,
        speeds=prof.speeds,
        times=traj.times,
        dets=scan.dets,
    )


def write_det_csv(report: OptimalityReport, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["k", "t", "detU"])
        if report.dets is not None:
            for i, d in enumerate(report.dets):
                w.writerow([i, repr(float(report.times[i])), repr(float(d))])


def write_speed_csv(report: OptimalityReport, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["k", "t", "speed"])
        for i, s in enumerate(report.speeds):
            w.writerow([i, repr(float(report.times[i])), repr(float(s))])
