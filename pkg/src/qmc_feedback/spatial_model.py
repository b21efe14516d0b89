"""Discretization of the 1-D uncertain-diffusion operator family on (0,1).

The diffusion coefficient is affine in the parameters,

    a(sigma; x) = a0 + sum_j sigma_j * psi_j(x),
    psi_j(x)    = cbar * j^{-qdec} * sin(j pi x),      sigma in [-1/2, 1/2]^s,

so the stiffness family is A(sigma) = A0 + sum_j sigma_j A_j with each matrix
the standard second-order finite-difference discretization of u -> (a u')'
with homogeneous Dirichlet boundary, coefficients evaluated at cell midpoints:

    (A w)_i = [ a_{i+1/2} (w_{i+1} - w_i) - a_{i-1/2} (w_i - w_{i-1}) ] / hx^2 .

Uniform ellipticity a_min = a0 - (cbar/2) sum_{j<=smax} j^{-qdec} > 0 is
enforced at construction.  The state space is discrete H with the weighted
inner product <u, v>_H = hx * u.v, which makes B* = hx * B^T the exact adjoint
of the control injection against Euclidean U = R^m.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

__all__ = [
    "SpatialGrid",
    "DiffusionField",
    "OperatorFamily",
    "ProblemData",
    "assemble_family",
    "evaluate_operator",
    "evaluate_operators",
    "forcing_r",
    "adjoint_control",
]

VectorFunc = Callable[[float], np.ndarray]


@dataclass(frozen=True)
class SpatialGrid:
    """Interior nodes x_i = i*hx, i = 1..n, of a uniform mesh on (0,1)."""

    n: int

    def __post_init__(self):
        if self.n < 2:
            raise ValueError("need at least 2 interior nodes")

    @property
    def hx(self) -> float:
        return 1.0 / (self.n + 1)

    @property
    def nodes(self) -> np.ndarray:
        return np.arange(1, self.n + 1) * self.hx

    @property
    def midpoints(self) -> np.ndarray:
        """Cell midpoints x_{i+1/2} = (i + 1/2)*hx for i = 0..n."""
        return (np.arange(0, self.n + 1) + 0.5) * self.hx

    def h_inner(self, u: np.ndarray, v: np.ndarray) -> float:
        """Discrete H inner product hx * sum_i u_i v_i."""
        return self.hx * float(np.dot(u, v))

    def h_norm(self, u: np.ndarray) -> float:
        return float(np.sqrt(self.hx) * np.linalg.norm(u))


@dataclass(frozen=True)
class DiffusionField:
    """Affine diffusion coefficient data; checks uniform ellipticity."""

    a0: float
    cbar: float
    qdec: float
    smax: int

    def __post_init__(self):
        if self.a0 <= 0 or self.cbar <= 0:
            raise ValueError("a0 and cbar must be positive")
        if self.qdec <= 1:
            raise ValueError("qdec must exceed 1 for a summable fluctuation series")
        if self.smax < 1:
            raise ValueError("smax must be >= 1")
        amin = self.a_min
        if amin <= 0:
            raise ValueError(
                f"uniform ellipticity violated: a0 - (cbar/2)*sum(j^-qdec) = {amin:.6g} <= 0"
            )

    @property
    def a_min(self) -> float:
        j = np.arange(1, self.smax + 1, dtype=float)
        return self.a0 - 0.5 * self.cbar * float(np.sum(j**-self.qdec))

    @property
    def bseq(self) -> np.ndarray:
        """Decay majorants b_j = cbar * j^{-qdec} of the fluctuation operators."""
        j = np.arange(1, self.smax + 1, dtype=float)
        return self.cbar * j**-self.qdec

    def psi(self, j: int, x: np.ndarray) -> np.ndarray:
        return self.cbar * float(j) ** -self.qdec * np.sin(j * np.pi * x)


@dataclass(frozen=True)
class OperatorFamily:
    """Affine stiffness family plus control/observation data on one grid."""

    grid: SpatialGrid
    A0: np.ndarray
    Ajs: np.ndarray  # (smax, n, n)
    bseq: np.ndarray
    Bmat: np.ndarray  # (n, m)
    q_obs: float
    p_ter: float

    @property
    def n(self) -> int:
        return self.grid.n

    @property
    def m(self) -> int:
        return self.Bmat.shape[1]

    @property
    def smax(self) -> int:
        return self.Ajs.shape[0]


@dataclass(frozen=True)
class ProblemData:
    """Horizon, forcing, targets and initial state as closed-form callables."""

    T: float
    f: VectorFunc
    g: VectorFunc
    gdot: VectorFunc
    gT: np.ndarray
    y0: np.ndarray

    def __post_init__(self):
        if self.T <= 0:
            raise ValueError("horizon T must be positive")


def _stiffness_from_midpoint_coeff(a_mid: np.ndarray, hx: float) -> np.ndarray:
    """Dirichlet FD matrix of u -> (a u')' from coefficient values at midpoints."""
    n = a_mid.size - 1
    A = np.zeros((n, n))
    main = -(a_mid[:-1] + a_mid[1:])
    off = a_mid[1:-1]
    idx = np.arange(n)
    A[idx, idx] = main
    A[idx[:-1], idx[:-1] + 1] = off
    A[idx[:-1] + 1, idx[:-1]] = off
    return A / hx**2


def assemble_family(
    grid: SpatialGrid,
    fld: DiffusionField,
    actuators: list[tuple[float, float]],
    q_obs: float,
    p_ter: float,
) -> OperatorFamily:
    """Build A0, the fluctuation matrices A_j, and the actuator injection B."""
    if q_obs < 0 or p_ter < 0:
        raise ValueError("q_obs and p_ter must be nonnegative")
    if not actuators:
        raise ValueError("need at least one actuator interval")
    hx = grid.hx
    mid = grid.midpoints
    A0 = _stiffness_from_midpoint_coeff(np.full(grid.n + 1, fld.a0), hx)
    Ajs = np.stack([
        _stiffness_from_midpoint_coeff(fld.psi(j, mid), hx)
        for j in range(1, fld.smax + 1)
    ])
    B = np.zeros((grid.n, len(actuators)))
    x = grid.nodes
    for c, (lo, hi) in enumerate(actuators):
        if not (0.0 < lo < hi < 1.0):
            raise ValueError(f"actuator ({lo}, {hi}) must be a nonempty interval in (0,1)")
        B[:, c] = ((x >= lo) & (x <= hi)).astype(float)
    return OperatorFamily(grid=grid, A0=A0, Ajs=Ajs, bseq=fld.bseq, Bmat=B,
                          q_obs=float(q_obs), p_ter=float(p_ter))


def _check_sigma(fam: OperatorFamily, sigma: np.ndarray) -> np.ndarray:
    sigma = np.atleast_1d(np.asarray(sigma, dtype=float))
    if sigma.shape[-1] > fam.smax:
        raise ValueError(f"sigma has {sigma.shape[-1]} components, family holds {fam.smax}")
    if np.any(np.abs(sigma) > 0.5 + 1e-12):
        raise ValueError("sigma components must satisfy |sigma_j| <= 1/2")
    return sigma


def evaluate_operator(fam: OperatorFamily, sigma) -> np.ndarray:
    """A(sigma) = A0 + sum_{j<=s} sigma_j A_j (components beyond s are zero)."""
    sigma = _check_sigma(fam, sigma)
    s = sigma.shape[0]
    A = fam.A0.copy()
    if s:
        A += np.tensordot(sigma, fam.Ajs[:s], axes=(0, 0))
    return A


def evaluate_operators(fam: OperatorFamily, sigmas: np.ndarray) -> np.ndarray:
    """Batched A(sigma) for sigmas of shape (B, s); returns (B, n, n)."""
    sigmas = np.asarray(sigmas, dtype=float)
    if sigmas.ndim != 2:
        raise ValueError("sigmas must be (batch, s)")
    _check_sigma(fam, sigmas)
    s = sigmas.shape[1]
    return fam.A0[None] + np.tensordot(sigmas, fam.Ajs[:s], axes=(1, 0))


def forcing_r(fam: OperatorFamily, data: ProblemData, sigma, t: float) -> np.ndarray:
    """Nonhomogeneous drive r_sigma(t) = f(t) + A(sigma) g(t) - gdot(t)."""
    if not -1e-12 <= t <= data.T + 1e-12:
        raise ValueError(f"t = {t} outside the horizon [0, {data.T}]")
    A = evaluate_operator(fam, sigma)
    return data.f(t) + A @ data.g(t) - data.gdot(t)


def adjoint_control(fam: OperatorFamily) -> np.ndarray:
    """B* = hx * B^T, the exact adjoint for <.,.>_H against Euclidean U."""
    return fam.grid.hx * fam.Bmat.T
