"""Parameter averaging of feedback laws and the error studies built on it.

``average_feedback`` realizes the cubature approximation of the mean feedback:
every node sigma^(k) gets its own Riccati solve (plus offset solve in the
tracking scenario), and the gains/offsets are accumulated with the cubature
weights.  Node solves run in fixed-size blocks; block partial sums are
combined by a pairwise tree over the block index, so results are bitwise
reproducible for any worker count.  Blocks can be dispatched to a thread pool
(numpy/LAPACK release the GIL).

Distances between feedback laws use the combined metric

    sup_k [ ||dK(t_k)||_{H->U} + |dkappa(t_k)|_U ],
    ||dK||_{H->U} = sigma_max(dK) / sqrt(hx),

matching the discrete H geometry (||v||_H = sqrt(hx) |v|_2).
"""

from __future__ import annotations

import hashlib
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import SolverError
from .qmc import (
    QmcPointSet,
    WeightSpec,
    cbc_interlaced,
    cbc_lattice,
    folded_lattice,
    interlaced_points,
    lattice_pointset,
    mc_points,
    random_shift,
    tuned_pod_spec,
    zeta,
)
from .riccati import (
    FeedbackLaw,
    TimeGrid,
    solve_offset_batch,
    solve_riccati_batch,
)
from .spatial_model import OperatorFamily, ProblemData, adjoint_control, evaluate_operators

__all__ = [
    "CubatureRule",
    "FeedbackEnsembleStats",
    "average_feedback",
    "feedback_distance",
    "truncation_study",
    "qmc_rate_study",
    "derivative_decay_study",
    "reference_mean",
    "pod_spec_for",
    "spod_spec_for",
]

REDUCE_BLOCK = 256  # fixed accumulation block; independent of worker count
_CACHE_MAGIC = b"QFBCACHE1\n"


@dataclass(frozen=True)
class CubatureRule:
    """Nodes with weights summing to one (equal 1/N for QMC and MC rules)."""

    nodes: QmcPointSet
    weights: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        if w.shape != (self.nodes.N,):
            raise ValueError("need one weight per node")
        if abs(w.sum() - 1.0) > 1e-14:
            raise ValueError("cubature weights must sum to 1 within 1e-14")
        object.__setattr__(self, "weights", w)

    @classmethod
    def equal_weight(cls, nodes: QmcPointSet) -> "CubatureRule":
        return cls(nodes=nodes, weights=np.full(nodes.N, 1.0 / nodes.N))


@dataclass(frozen=True)
class FeedbackEnsembleStats:
    """Cubature-averaged feedback; shifted_ensemble attaches the per-shift means."""

    mean_gain: np.ndarray    # (nt+1, m, n)
    mean_offset: np.ndarray  # (nt+1, m)
    grid: TimeGrid
    hx: float
    per_shift_gains: np.ndarray | None = None
    per_shift_offsets: np.ndarray | None = None

    def as_law(self) -> FeedbackLaw:
        return FeedbackLaw(gains=self.mean_gain, offsets=self.mean_offset,
                           grid=self.grid, hx=self.hx)


def pod_spec_for(fam: OperatorFamily, s: int, mode: str = "pod",
                 lam: float = 1.0) -> WeightSpec:
    """POD weights from the family's decay sequence (optionally lambda-tuned)."""
    b = fam.bseq[:s]
    if mode == "pod":
        return WeightSpec(kind="pod", bseq=b)
    if mode == "pod_tuned":
        return tuned_pod_spec(b, lam, zeta(2.0 * lam))
    raise ValueError(f"unknown weight mode {mode!r}")


def spod_spec_for(fam: OperatorFamily, s: int, alpha: int) -> WeightSpec:
    return WeightSpec(kind="spod", bseq=fam.bseq[:s], alpha=alpha)


# ----------------------------------------------------------------------------
# averaging core
# ----------------------------------------------------------------------------

def _block_partial(fam: OperatorFamily, data: ProblemData | None, grid: TimeGrid,
                   sigmas: np.ndarray, weights: np.ndarray, tracking: bool,
                   node_offset: int):
    """Weighted (gain, offset) sums of one node block, summed in node order."""
    try:
        As = evaluate_operators(fam, sigmas)
        Pis = solve_riccati_batch(As, fam, grid)
    except SolverError as exc:
        node = node_offset + (exc.node or 0)
        raise SolverError(f"averaging aborted at node {node}: {exc}",
                          step=exc.step, residual=exc.residual, node=node) from exc
    Bs = adjoint_control(fam)
    gains = -np.einsum("mi,bkij->bkmj", Bs, Pis[:, ::-1])
    gain_sum = np.einsum("b,bkmj->kmj", weights, gains)
    if tracking:
        if data is None:
            raise ValueError("tracking averaging needs problem data")
        hs = solve_offset_batch(As, fam, Pis, data, sigmas, grid)
        offs = -hs @ Bs.T
        off_sum = np.einsum("b,bkm->km", weights, offs)
    else:
        off_sum = np.zeros((grid.nt + 1, fam.m))
    return gain_sum, off_sum


def _pairwise_tree(parts: list):
    """Fixed-topology pairwise reduction over the block index."""
    while len(parts) > 1:
        nxt = []
        for i in range(0, len(parts), 2):
            if i + 1 < len(parts):
                nxt.append((parts[i][0] + parts[i + 1][0],
                            parts[i][1] + parts[i + 1][1]))
            else:
                nxt.append(parts[i])
        parts = nxt
    return parts[0]


def average_feedback(rule: CubatureRule, fam: OperatorFamily,
                     data: ProblemData | None, grid: TimeGrid,
                     tracking: bool = False, workers: int = 1) -> FeedbackEnsembleStats:
    """Cubature average of the per-parameter feedback laws over the rule's nodes."""
    sigmas = rule.nodes.points
    if sigmas.shape[1] > fam.smax:
        raise ValueError(f"node dimension {sigmas.shape[1]} exceeds smax={fam.smax}")
    blocks = [(k, sigmas[k:k + REDUCE_BLOCK], rule.weights[k:k + REDUCE_BLOCK])
              for k in range(0, sigmas.shape[0], REDUCE_BLOCK)]
    if workers > 1 and len(blocks) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(
                lambda blk: _block_partial(fam, data, grid, blk[1], blk[2],
                                           tracking, blk[0]), blocks))
    else:
        parts = [_block_partial(fam, data, grid, sb, wb, tracking, k)
                 for k, sb, wb in blocks]
    gain, off = _pairwise_tree(parts)
    return FeedbackEnsembleStats(mean_gain=gain, mean_offset=off, grid=grid,
                                 hx=fam.grid.hx)


def shifted_ensemble(rule, fam: OperatorFamily, data: ProblemData | None,
                     grid: TimeGrid, R: int, seed: int, tracking: bool = False,
                     workers: int = 1) -> FeedbackEnsembleStats:
    """Mean feedback over R independently shifted copies of a lattice rule.

    The combined mean is the equal-weight average of the per-shift means,
    which are kept for dispersion diagnostics.
    """
    gains, offs = [], []
    for r in range(R):
        nodes = random_shift(rule, seed, stream=r)
        stats = average_feedback(CubatureRule.equal_weight(nodes), fam, data,
                                 grid, tracking=tracking, workers=workers)
        gains.append(stats.mean_gain)
        offs.append(stats.mean_offset)
    gains = np.stack(gains)
    offs = np.stack(offs)
    return FeedbackEnsembleStats(
        mean_gain=gains.mean(axis=0), mean_offset=offs.mean(axis=0), grid=grid,
        hx=fam.grid.hx, per_shift_gains=gains, per_shift_offsets=offs)


def feedback_distance(Ka: FeedbackLaw | FeedbackEnsembleStats,
                      Kb: FeedbackLaw | FeedbackEnsembleStats) -> float:
    """sup_k of the H->U gain deviation plus the Euclidean offset deviation."""
    la = Ka.as_law() if isinstance(Ka, FeedbackEnsembleStats) else Ka
    lb = Kb.as_law() if isinstance(Kb, FeedbackEnsembleStats) else Kb
    if la.gains.shape != lb.gains.shape or la.grid != lb.grid:
        raise ValueError("feedback laws differ in grid or shape")
    dK = la.gains - lb.gains
    dk = la.offsets - lb.offsets
    svals = np.linalg.svd(dK, compute_uv=False)[..., 0]
    per_node = svals / math.sqrt(la.hx) + np.linalg.norm(dk, axis=1)
    return float(per_node.max())


# ----------------------------------------------------------------------------
# reference means and caching
# ----------------------------------------------------------------------------

def _family_digest(fam: OperatorFamily, data_tag: str, grid: TimeGrid,
                   descriptor: dict) -> str:
    h = hashlib.sha256()
    for arr in (fam.A0, fam.Ajs, fam.Bmat, fam.bseq):
        h.update(np.ascontiguousarray(arr).tobytes())
    h.update(np.float64([fam.q_obs, fam.p_ter, fam.grid.hx, grid.T]).tobytes())
    h.update(np.int64([grid.nt]).tobytes())
    h.update(data_tag.encode())
    h.update(json.dumps(descriptor, sort_keys=True).encode())
    return h.hexdigest()[:24]


def _cache_store(path: Path, key: str, arrays: dict[str, np.ndarray]):
    path.parent.mkdir(parents=True, exist_ok=True)
    header = {
        "version": 1,
        "key": key,
        "names": list(arrays),
        "shapes": {k: list(v.shape) for k, v in arrays.items()},
    }
    with open(path, "wb") as fh:
        fh.write(_CACHE_MAGIC)
        blob = json.dumps(header).encode()
        fh.write(len(blob).to_bytes(8, "little"))
        fh.write(blob)
        for name in header["names"]:
            fh.write(np.ascontiguousarray(arrays[name], dtype=np.float64).tobytes())


def _cache_load(path: Path, key: str) -> dict[str, np.ndarray] | None:
    if not path.exists():
        return None
    with open(path, "rb") as fh:
        if fh.read(len(_CACHE_MAGIC)) != _CACHE_MAGIC:
            return None
        size = int.from_bytes(fh.read(8), "little")
        header = json.loads(fh.read(size).decode())
        if header.get("key") != key or header.get("version") != 1:
            return None
        out = {}
        for name in header["names"]:
            shape = tuple(header["shapes"][name])
            count = int(np.prod(shape)) if shape else 1
            out[name] = np.frombuffer(fh.read(8 * count), dtype=np.float64).reshape(shape)
        return out


def reference_mean(fam: OperatorFamily, data: ProblemData | None, grid: TimeGrid,
                   s: int, kind: str = "interlaced", m: int = 12,
                   tracking: bool = False, workers: int = 1,
                   cache_dir: str | Path | None = None) -> FeedbackEnsembleStats:
    """High-accuracy mean feedback used as study truth (interlaced alpha=2 rule).

    Cached to ``cache_dir/<digest>.bin`` keyed by the model/grid/rule content.
    """
    descriptor = {"kind": kind, "m": m, "s": s, "tracking": tracking}
    key = _family_digest(fam, "tracking" if tracking else "homogeneous", grid, descriptor)
    path = None
    if cache_dir is not None:
        path = Path(cache_dir) / f"{key}.bin"
        cached = _cache_load(path, key)
        if cached is not None:
            return FeedbackEnsembleStats(
                mean_gain=cached["mean_gain"], mean_offset=cached["mean_offset"],
                grid=grid, hx=fam.grid.hx)
    if kind == "interlaced":
        rule = cbc_interlaced(m, s, 2, spod_spec_for(fam, s, 2))
        nodes = interlaced_points(rule)
    elif kind == "shifted":
        nlat = _prime_at_least(2**m)
        nodes = random_shift(cbc_lattice(nlat, s, pod_spec_for(fam, s)), seed=2**m)
    else:
        raise ValueError(f"unknown reference kind {kind!r}")
    stats = average_feedback(CubatureRule.equal_weight(nodes), fam, data, grid,
                             tracking=tracking, workers=workers)
    if path is not None:
        _cache_store(path, key, {"mean_gain": stats.mean_gain,
                                 "mean_offset": stats.mean_offset})
    return stats


def _prime_at_least(n: int) -> int:
    from .qmc import is_prime

    while not is_prime(n):
        n += 1
    return n


# ----------------------------------------------------------------------------
# studies
# ----------------------------------------------------------------------------

def truncation_study(fam: OperatorFamily, data: ProblemData | None, grid: TimeGrid,
                     s_list, s_ref: int, N: int = 1021, tracking: bool = False,
                     workers: int = 1) -> dict:
    """Dimension-truncation errors of the mean feedback against dimension s_ref.

    One deterministic lattice in dimension s_ref supplies all means; dimension
    s uses the same nodes with coordinates beyond s zeroed.  Also reports the
    single-parameter errors |Pi_{sigma,s}(T) - Pi_{sigma,s_ref}(T)|_2 at the
    worst corner sigma = (1/2, ..., 1/2).
    """
    if s_ref <= max(s_list):
        raise ValueError("s_ref must exceed every entry of s_list")
    if s_ref > fam.smax:
        raise ValueError("s_ref exceeds the family's smax")
    from .qmc import PointSetMeta

    rule = cbc_lattice(N, s_ref, pod_spec_for(fam, s_ref))
    nodes_full = lattice_pointset(rule).points
    meta = PointSetMeta(kind="lattice", N=rule.N, s=s_ref, z=rule.z)

    def mean_at(s: int) -> FeedbackEnsembleStats:
        # truncation to dimension s keeps the same nodes, zeroing tail coords
        pts = nodes_full.copy()
        pts[:, s:] = 0.0
        ps = QmcPointSet(points=pts, meta=meta)
        return average_feedback(CubatureRule.equal_weight(ps), fam, data, grid,
                                tracking=tracking, workers=workers)

    ref = mean_at(s_ref)
    rows = []
    for s in s_list:
        err = feedback_distance(mean_at(s), ref)
        rows.append({"s": int(s), "error": err})

    # pointwise corner errors
    corner_errors = []
    corner_ref = _corner_pi(fam, grid, s_ref)
    for s in s_list:
        corner_errors.append({
            "s": int(s),
            "error": float(np.linalg.norm(_corner_pi(fam, grid, s) - corner_ref, 2)),
        })
    xs = np.log([r["s"] for r in rows])
    ys = np.log([max(r["error"], 1e-300) for r in rows])
    slope = float(np.polyfit(xs, ys, 1)[0])
    return {"rows": rows, "slope": slope, "corner_rows": corner_errors}


def _corner_pi(fam: OperatorFamily, grid: TimeGrid, s: int) -> np.ndarray:
    sigma = np.zeros((1, s)) + 0.5
    return solve_riccati_batch(evaluate_operators(fam, sigma), fam, grid)[0, -1]


def qmc_rate_study(fam: OperatorFamily, data: ProblemData | None, grid: TimeGrid,
                   s: int, N_list, method: str, R: int = 16, seed: int = 0,
                   alpha: int = 2, tracking: bool = False, workers: int = 1,
                   reference: FeedbackEnsembleStats | None = None,
                   cache_dir: str | Path | None = None,
                   weight_mode: str = "pod", reference_m: int = 12) -> dict:
    """RMS feedback-mean error against a high-accuracy reference, per N.

    method: "shifted" (R random shifts), "mc" (R replications), "folded" or
    "interlaced" (deterministic, R ignored).  Emits the fitted log-log slope.
    """
    if method not in ("shifted", "folded", "interlaced", "mc"):
        raise ValueError(f"unknown method {method!r}")
    if reference is None:
        reference = reference_mean(fam, data, grid, s, kind="interlaced",
                                   m=reference_m, tracking=tracking, workers=workers,
                                   cache_dir=cache_dir)
    rows = []
    for N in N_list:
        if method in ("shifted", "folded"):
            rule = cbc_lattice(N, s, pod_spec_for(fam, s, mode=weight_mode))
        errs = []
        reps = range(R) if method in ("shifted", "mc") else range(1)
        for r in reps:
            if method == "shifted":
                nodes = random_shift(rule, seed, stream=r)
            elif method == "folded":
                nodes = folded_lattice(rule)
            elif method == "mc":
                nodes = mc_points(N, s, seed, stream=r)
            else:
                mexp = int(round(math.log2(N)))
                if 2**mexp != N:
                    raise ValueError("interlaced rate study needs N = 2^m")
                prule = cbc_interlaced(mexp, s, alpha, spod_spec_for(fam, s, alpha))
                nodes = interlaced_points(prule)
            stats = average_feedback(CubatureRule.equal_weight(nodes), fam, data,
                                     grid, tracking=tracking, workers=workers)
            errs.append(feedback_distance(stats, reference))
        rms = float(np.sqrt(np.mean(np.square(errs))))
        rows.append({"N": int(N), "rms_error": rms, "errors": [float(e) for e in errs]})
    xs = np.log([r["N"] for r in rows])
    ys = np.log([max(r["rms_error"], 1e-300) for r in rows])
    slope = float(np.polyfit(xs, ys, 1)[0])
    return {"rows": rows, "slope": slope, "method": method}


def derivative_decay_study(fam: OperatorFamily, data: ProblemData | None,
                           grid: TimeGrid, j_list, delta: float = 1e-3) -> dict:
    """Central finite differences of gain sup-norm and optimal cost at sigma = 0.

    Reports fd(j) for the gain (operator-norm metric of the gain difference)
    and for the homogeneous optimal cost, plus ratios to fd(1).
    """
    if delta > 1e-2:
        raise ValueError("delta must be <= 1e-2")
    if data is None:
        raise ValueError("derivative decay study needs problem data for y0")
    Bs = adjoint_control(fam)
    hx = fam.grid.hx
    y0 = data.y0

    def solve_at(sigma):
        sig = np.asarray(sigma, dtype=float)[None, :]
        Pis = solve_riccati_batch(evaluate_operators(fam, sig), fam, grid)[0]
        gains = -np.einsum("mi,kij->kmj", Bs, Pis[::-1])
        cost = 0.5 * hx * float(y0 @ Pis[-1] @ y0)
        return gains, cost

    js = list(j_list)
    if 1 not in js:
        js = [1] + js
    fd = {}
    for j in js:
        e = np.zeros(max(js))
        e[j - 1] = delta
        gp, cp = solve_at(e)
        gm, cm = solve_at(-e)
        dK = (gp - gm) / (2 * delta)
        svals = np.linalg.svd(dK, compute_uv=False)[..., 0]
        fd[j] = {
            "fd_gain": float(svals.max() / math.sqrt(hx)),
            "fd_cost": abs(cp - cm) / (2 * delta),
        }
    base_g, base_c = fd[1]["fd_gain"], fd[1]["fd_cost"]
    rows = []
    for j in js:
        rows.append({
            "j": int(j),
            "fd_gain": fd[j]["fd_gain"],
            "fd_cost": fd[j]["fd_cost"],
            "ratio_gain": fd[j]["fd_gain"] / base_g if base_g else 0.0,
            "ratio_cost": fd[j]["fd_cost"] / base_c if base_c else 0.0,
            "b_ratio": float(fam.bseq[j - 1] / fam.bseq[0]),
        })
    return {"rows": rows}
