"""Differential Riccati equation, offset equation, and feedback assembly.

The operator DRE runs forward in its own time variable,

    dPi/dt = Pi A + A* Pi - Pi B B* Pi + Q*Q,      Pi(0) = P*P,

and the feedback reads the solution backwards: K(t) = -B* Pi(T - t), i.e.
gains[k] uses Pis[nt - k].  Each implicit-Euler step solves the residual
equation

    R(X) = X - Pi_k - dt (X A + A X - X S X + q^2 I) = 0,      S = B B*,

by Newton iteration; the Newton correction solves the Sylvester equation
At^T D + D At = -R with At = I/2 - dt (A - S X).  Iterates are symmetrized.
Two interchangeable Sylvester backends: Bartels-Stewart with one shared Schur
factorization for single trajectories (both coefficients are transposes of
At), and a dense batched Kronecker LU used by the ensemble studies (identical
equation, chosen for throughput at small n).

The offset h solves the backward equation  -h' = (A* - Pi(T-t) BB*) h +
Pi(T-t) r(t),  h(T) = 0,  by implicit backward Euler:

    (I - dt (A - Pi(T-t_k) S)) h_k = h_{k+1} + dt Pi(T-t_k) r(t_k).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .errors import SolverError
from .spatial_model import OperatorFamily, ProblemData, adjoint_control, forcing_r

__all__ = [
    "TimeGrid",
    "RiccatiTrajectory",
    "OffsetTrajectory",
    "FeedbackLaw",
    "solve_riccati",
    "solve_riccati_dense",
    "solve_riccati_batch",
    "solve_offset",
    "solve_offset_batch",
    "feedback_from",
    "optimal_cost_homogeneous",
    "optimal_cost_nonhomogeneous",
]

NEWTON_MAX_ITER = 30
NEWTON_RTOL = 1e-10   # contractual stopping tolerance
NEWTON_RTOL_TARGET = 1e-12  # aimed for, so residuals stay well under the contract
_KRON_MAX_N = 12  # batched Kronecker solves become memory-bound beyond this


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid t_k = k*dt, k = 0..nt, dt = T/nt."""

    nt: int
    T: float

    def __post_init__(self):
        if self.nt < 2:
            raise ValueError("need at least 2 time steps")
        if self.T <= 0:
            raise ValueError("horizon must be positive")

    @property
    def dt(self) -> float:
        return self.T / self.nt

    @property
    def nodes(self) -> np.ndarray:
        return np.arange(self.nt + 1) * self.dt


@dataclass(frozen=True)
class RiccatiTrajectory:
    """Pis[k] ~ Pi(t_k) on the DRE's forward grid; hx tags the H geometry."""

    Pis: np.ndarray  # (nt+1, n, n)
    grid: TimeGrid
    hx: float

    @property
    def n(self) -> int:
        return self.Pis.shape[-1]


@dataclass(frozen=True)
class OffsetTrajectory:
    """hs[k] ~ h(t_k); terminal value hs[nt] is exactly zero."""

    hs: np.ndarray  # (nt+1, n)
    grid: TimeGrid


@dataclass(frozen=True)
class FeedbackLaw:
    """Time-gridded affine feedback u(t_k, y) = gains[k] @ y + offsets[k]."""

    gains: np.ndarray    # (nt+1, m, n);  gains[k] = -B* Pi(T - t_k)
    offsets: np.ndarray  # (nt+1, m);     offsets[k] = -B* h(t_k)
    grid: TimeGrid
    hx: float

    @property
    def m(self) -> int:
        return self.gains.shape[1]

    @property
    def n(self) -> int:
        return self.gains.shape[2]


# ----------------------------------------------------------------------------
# Sylvester backends
# ----------------------------------------------------------------------------

_trsyl = scipy.linalg.get_lapack_funcs(("trsyl",), (np.zeros((2, 2)),))[0]


def _newton_step_sylvester(At: np.ndarray, R: np.ndarray) -> np.ndarray:
    """Solve At^T D + D At = -R by Bartels-Stewart with one shared Schur form.

    Both coefficient matrices are transposes of each other, so a single Schur
    factorization At = U T U^T suffices: T^T Y + Y T = -U^T R U, D = U Y U^T.
    """
    T, U = scipy.linalg.schur(At)
    C = U.T @ (-R) @ U
    Y, scale, info = _trsyl(T, T, C, trana="T")
    if info < 0 or scale == 0.0:
        raise SolverError(f"Sylvester solve failed (trsyl info={info})")
    if scale != 1.0:
        Y = Y / scale
    return U @ Y @ U.T


def _newton_step_kron(At: np.ndarray, R: np.ndarray) -> np.ndarray:
    """Solve At^T D + D At = -R for a batch via the dense Kronecker system."""
    B, n, _ = At.shape
    eye = np.eye(n)
    At_T = np.swapaxes(At, 1, 2)
    # row-major vec: At^T D I -> (At^T (x) I), I D At -> (I (x) At^T)
    M = (np.einsum("bij,kl->bikjl", At_T, eye)
         + np.einsum("ij,bkl->bikjl", eye, At_T)).reshape(B, n * n, n * n)
    D = np.linalg.solve(M, -R.reshape(B, n * n, 1))
    return D.reshape(B, n, n)


# ----------------------------------------------------------------------------
# DRE solves
# ----------------------------------------------------------------------------

def _dre_residual(X, Pk, A, S, q2, dt):
    XA = X @ A
    return X - Pk - dt * (XA + np.swapaxes(XA, -1, -2) - X @ S @ X + q2 * _eye_like(X))


def _eye_like(X):
    n = X.shape[-1]
    eye = np.eye(n)
    if X.ndim == 3:
        return eye[None]
    return eye


def solve_riccati_dense(A: np.ndarray, S: np.ndarray, q_obs: float, p_ter: float,
                        grid: TimeGrid, hx: float = 1.0) -> RiccatiTrajectory:
    """Implicit-Euler DRE solve from Pi(0) = p_ter^2 I with explicit S = B B*."""
    A = np.asarray(A, dtype=float)
    n = A.shape[0]
    if not np.allclose(A, A.T, rtol=0, atol=1e-10 * (1 + np.abs(A).max())):
        raise ValueError("A must be symmetric")
    dt = grid.dt
    q2 = q_obs**2
    Pis = np.empty((grid.nt + 1, n, n))
    Pis[0] = p_ter**2 * np.eye(n)
    X = Pis[0].copy()
    for k in range(grid.nt):
        Pk = Pis[k]
        scale = 1.0 + np.linalg.norm(Pk, "fro")
        resid = prev = np.inf
        for _ in range(NEWTON_MAX_ITER):
            R = _dre_residual(X, Pk, A, S, q2, dt)
            resid = np.linalg.norm(R, "fro")
            # aim below the contract tolerance; accept a stall once inside it
            if resid <= NEWTON_RTOL_TARGET * scale or (
                    resid <= NEWTON_RTOL * scale and resid > 0.5 * prev):
                break
            prev = resid
            At = 0.5 * np.eye(n) - dt * (A - S @ X)
            X = X + _newton_step_sylvester(At, R)
            X = 0.5 * (X + X.T)
        if resid > NEWTON_RTOL * scale:
            raise SolverError(
                f"DRE Newton did not converge at step {k + 1}: residual {resid:.3e}",
                step=k + 1, residual=float(resid))
        Pis[k + 1] = X
    return RiccatiTrajectory(Pis=Pis, grid=grid, hx=hx)


def solve_riccati(A: np.ndarray, fam: OperatorFamily, grid: TimeGrid) -> RiccatiTrajectory:
    """DRE solve for one evaluated operator A(sigma) of the family."""
    S = fam.Bmat @ adjoint_control(fam)
    return solve_riccati_dense(A, S, fam.q_obs, fam.p_ter, grid, hx=fam.grid.hx)


def solve_riccati_batch(As: np.ndarray, fam: OperatorFamily,
                        grid: TimeGrid) -> np.ndarray:
    """DRE solves for a batch of operators; returns Pis of shape (B, nt+1, n, n).

    Uses the Kronecker backend for n <= 12, otherwise falls back to per-item
    Bartels-Stewart.  Identical Newton iteration and tolerances as the single
    solve; a non-converged batch element reports its node index.
    """
    As = np.asarray(As, dtype=float)
    B, n, _ = As.shape
    S = fam.Bmat @ adjoint_control(fam)
    if n > _KRON_MAX_N:
        out = np.empty((B, grid.nt + 1, n, n))
        for b in range(B):
            try:
                out[b] = solve_riccati(As[b], fam, grid).Pis
            except SolverError as exc:
                raise SolverError(f"node {b}: {exc}", step=exc.step,
                                  residual=exc.residual, node=b) from exc
        return out

    dt = grid.dt
    q2 = fam.q_obs**2
    Pis = np.empty((B, grid.nt + 1, n, n))
    Pis[:, 0] = fam.p_ter**2 * np.eye(n)
    X = Pis[:, 0].copy()
    Sb = S[None]
    for k in range(grid.nt):
        Pk = Pis[:, k]
        scale = 1.0 + np.linalg.norm(Pk, axis=(1, 2))
        resid = prev = np.full(B, np.inf)
        for _ in range(NEWTON_MAX_ITER):
            R = _dre_residual(X, Pk, As, Sb, q2, dt)
            resid = np.linalg.norm(R, axis=(1, 2))
            done = (resid <= NEWTON_RTOL_TARGET * scale) | (
                (resid <= NEWTON_RTOL * scale) & (resid > 0.5 * prev))
            if done.all():
                break
            prev = resid
            At = 0.5 * np.eye(n)[None] - dt * (As - Sb @ X)
            X = X + _newton_step_kron(At, R)
            X = 0.5 * (X + np.swapaxes(X, 1, 2))
        over = resid > NEWTON_RTOL * scale
        if over.any():
            bad = int(np.argmax(resid / scale))
            raise SolverError(
                f"DRE Newton did not converge at step {k + 1} for node {bad}: "
                f"residual {resid[bad]:.3e}", step=k + 1,
                residual=float(resid[bad]), node=bad)
        Pis[:, k + 1] = X
    return Pis


# ----------------------------------------------------------------------------
# offset equation
# ----------------------------------------------------------------------------

def solve_offset(A: np.ndarray, fam: OperatorFamily, Pis: RiccatiTrajectory,
                 data: ProblemData, sigma, grid: TimeGrid) -> OffsetTrajectory:
    """Backward implicit Euler for the offset h from h(T) = 0."""
    if Pis.grid != grid:
        raise ValueError("Riccati trajectory computed on a different grid")
    n = A.shape[0]
    nt, dt = grid.nt, grid.dt
    S = fam.Bmat @ adjoint_control(fam)
    hs = np.zeros((nt + 1, n))
    eye = np.eye(n)
    for k in range(nt - 1, -1, -1):
        Pi_rev = Pis.Pis[nt - k]  # Pi(T - t_k)
        M = eye - dt * (A - Pi_rev @ S)
        rhs = hs[k + 1] + dt * Pi_rev @ forcing_r(fam, data, sigma, k * dt)
        try:
            hs[k] = np.linalg.solve(M, rhs)
        except np.linalg.LinAlgError as exc:
            raise SolverError(
                f"singular offset step matrix at step {k} (dt = {dt:g})",
                step=k) from exc
    return OffsetTrajectory(hs=hs, grid=grid)


def solve_offset_batch(As: np.ndarray, fam: OperatorFamily, Pis_batch: np.ndarray,
                       data: ProblemData, sigmas: np.ndarray,
                       grid: TimeGrid) -> np.ndarray:
    """Batched offsets; As (B,n,n), Pis_batch (B,nt+1,n,n), sigmas (B,s)."""
    B, n, _ = As.shape
    nt, dt = grid.nt, grid.dt
    S = fam.Bmat @ adjoint_control(fam)
    hs = np.zeros((B, nt + 1, n))
    eye = np.eye(n)[None]
    gvals = {k: data.g(k * dt) for k in range(nt)}
    for k in range(nt - 1, -1, -1):
        Pi_rev = Pis_batch[:, nt - k]
        M = eye - dt * (As - Pi_rev @ S[None])
        r = (data.f(k * dt)[None] + As @ gvals[k] - data.gdot(k * dt)[None])
        rhs = hs[:, k + 1] + dt * np.einsum("bij,bj->bi", Pi_rev, r)
        try:
            hs[:, k] = np.linalg.solve(M, rhs[..., None])[..., 0]
        except np.linalg.LinAlgError as exc:
            raise SolverError(f"singular offset step matrix at step {k} (dt = {dt:g})",
                              step=k) from exc
    return hs


# ----------------------------------------------------------------------------
# feedback assembly and optimal-cost functionals
# ----------------------------------------------------------------------------

def feedback_from(Pis: RiccatiTrajectory, hs: OffsetTrajectory | None,
                  fam: OperatorFamily) -> FeedbackLaw:
    """K(t_k) = -B* Pi(T - t_k), kappa(t_k) = -B* h(t_k)."""
    grid = Pis.grid
    if hs is not None and hs.grid != grid:
        raise ValueError("offset trajectory computed on a different grid")
    Bs = adjoint_control(fam)
    gains = -np.einsum("mi,kij->kmj", Bs, Pis.Pis[::-1])
    if hs is None:
        offsets = np.zeros((grid.nt + 1, fam.m))
    else:
        offsets = -hs.hs @ Bs.T
    return FeedbackLaw(gains=gains, offsets=offsets, grid=grid, hx=Pis.hx)


def optimal_cost_homogeneous(Pis: RiccatiTrajectory, y0: np.ndarray) -> float:
    """(1/2) <Pi(T) y0, y0>_H, the homogeneous optimal cost."""
    return 0.5 * Pis.hx * float(y0 @ Pis.Pis[-1] @ y0)


def optimal_cost_nonhomogeneous(Pis: RiccatiTrajectory, hs: OffsetTrajectory,
                                data: ProblemData, fam: OperatorFamily, sigma,
                                x0: np.ndarray) -> float:
    """Optimal cost of the transformed tracking problem.

    (1/2)<Pi(T) x0, x0>_H + <h(0), x0>_H
        + sum_k dt (<h_k, r(t_k)>_H - (1/2)|B* h_k|_U^2)     (left endpoints).
    """
    if hs.grid != Pis.grid:
        raise ValueError("trajectories on different grids")
    hx = Pis.hx
    grid = Pis.grid
    Bs = adjoint_control(fam)
    total = 0.5 * hx * float(x0 @ Pis.Pis[-1] @ x0) + hx * float(hs.hs[0] @ x0)
    for k in range(grid.nt):
        h_k = hs.hs[k]
        r_k = forcing_r(fam, data, sigma, k * grid.dt)
        total += grid.dt * (hx * float(h_k @ r_k) - 0.5 * float(np.sum((Bs @ h_k) ** 2)))
    return total
