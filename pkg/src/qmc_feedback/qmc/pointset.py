"""Point sets on the symmetric cube [-1/2, 1/2]^s and the maps that produce them.

Raw constructions (lattices, polynomial lattices, MC) live on [0,1)^s; the
integration domain of the parametric problem is the symmetric cube, reached by
subtracting 1/2 componentwise.  Randomization uses one counter-based Philox
generator so that every point set is bit-reproducible from (seed, inputs);
replication r of a seeded construction draws from the sub-stream key (seed, r).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "PointSetMeta",
    "QmcPointSet",
    "shift_mod1",
    "tent",
    "to_symmetric",
    "tent_fold",
    "mc_points",
    "rng_for",
]


def rng_for(seed: int, stream: int = 0) -> np.random.Generator:
    """Philox generator for (seed, stream); distinct streams are independent."""
    return np.random.Generator(np.random.Philox(key=[int(seed), int(stream)]))


@dataclass(frozen=True)
class PointSetMeta:
    """Construction descriptor attached to a point set (also the CSV comment header)."""

    kind: str  # lattice | shifted | folded | interlaced | mc
    N: int
    s: int
    seed: int | None = None
    z: tuple[int, ...] | None = None
    alpha: int | None = None

    def header(self) -> str:
        parts = [f"kind={self.kind}", f"N={self.N}", f"s={self.s}"]
        if self.seed is not None:
            parts.append(f"seed={self.seed}")
        if self.z is not None:
            parts.append("z=" + ":".join(str(v) for v in self.z))
        if self.alpha is not None:
            parts.append(f"alpha={self.alpha}")
        return "# " + ",".join(parts)


@dataclass(frozen=True)
class QmcPointSet:
    """N x s nodes in [-1/2, 1/2]^s with construction metadata."""

    points: np.ndarray
    meta: PointSetMeta

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim != 2:
            raise ValueError("points must be an N x s array")
        if pts.size and (pts.min() < -0.5 - 1e-15 or pts.max() > 0.5 + 1e-15):
            raise ValueError("point coordinates must lie in [-1/2, 1/2]")
        object.__setattr__(self, "points", pts)

    @property
    def N(self) -> int:
        return self.points.shape[0]

    @property
    def s(self) -> int:
        return self.points.shape[1]


def shift_mod1(points: np.ndarray, delta: np.ndarray) -> np.ndarray:
    """{x_k + delta} componentwise on [0,1)^s."""
    return np.mod(np.asarray(points, dtype=float) + np.asarray(delta, dtype=float), 1.0)


def tent(x):
    """Tent transform phi(x) = 1 - |2x - 1| on [0,1] (measure preserving)."""
    x = np.asarray(x, dtype=float)
    return 1.0 - np.abs(2.0 * x - 1.0)


def to_symmetric(points: np.ndarray, meta: PointSetMeta | None = None) -> QmcPointSet:
    """Map [0,1]^s points to the symmetric cube by x - 1/2."""
    pts = np.asarray(points, dtype=float)
    if pts.min() < -1e-15 or pts.max() > 1.0 + 1e-15:
        raise ValueError("to_symmetric expects points in [0,1]^s")
    if meta is None:
        meta = PointSetMeta(kind="lattice", N=pts.shape[0], s=pts.shape[1])
    return QmcPointSet(points=pts - 0.5, meta=meta)


def tent_fold(points: np.ndarray, meta: PointSetMeta | None = None) -> QmcPointSet:
    """Fold [0,1)^s points by the tent map, then center on the symmetric cube."""
    pts = np.asarray(points, dtype=float)
    if pts.min() < -1e-15 or pts.max() >= 1.0:
        raise ValueError("tent_fold expects points in [0,1)^s")
    if meta is None:
        meta = PointSetMeta(kind="folded", N=pts.shape[0], s=pts.shape[1])
    return QmcPointSet(points=tent(pts) - 0.5, meta=meta)


def mc_points(N: int, s: int, seed: int, stream: int = 0) -> QmcPointSet:
    """i.i.d. uniform nodes on [-1/2, 1/2]^s from the seeded Philox stream."""
    if N < 1:
        raise ValueError("N must be >= 1")
    u = rng_for(seed, stream).random((N, s))
    return QmcPointSet(points=u - 0.5,
                       meta=PointSetMeta(kind="mc", N=N, s=s, seed=seed))
