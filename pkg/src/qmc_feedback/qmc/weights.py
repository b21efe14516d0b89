"""Coordinate weights for weighted-space QMC constructions.

Two families are provided. POD weights (product and order dependent),

    gamma_u = (|u|+2)! * prod_{j in u} (2 b_j),

and SPOD weights (smoothness-driven POD), for smoothness alpha,

    gamma_u = sum_{nu in {1..alpha}^{|u|}} (|nu|+2)! * prod_{j in u} 2^[nu_j=alpha] b_j^{nu_j},

with gamma_{} = 1 in both cases.  For alpha = 1 the SPOD formula collapses to
the POD one.  Both families factor through a per-dimension/order structure
that the CBC searches exploit; ``pod_form``/``spod_coeffs`` expose it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

__all__ = ["WeightSpec", "pod_weight", "spod_weight", "tuned_pod_spec"]


def pod_weight(u_size: int, b_subset) -> float:
    """POD weight (|u|+2)! * prod(2*b_j) of a coordinate set u.

    ``b_subset`` lists the b_j for j in u; the empty set has weight 1.
    """
    b_subset = list(b_subset)
    if u_size != len(b_subset):
        raise ValueError(f"u_size={u_size} does not match len(b_subset)={len(b_subset)}")
    if u_size == 0:
        return 1.0
    w = math.factorial(u_size + 2)
    for b in b_subset:
        w *= 2.0 * b
    return w


def spod_weight(b_subset, alpha: int) -> float:
    """SPOD weight of a coordinate set u with smoothness alpha.

    Sums (|nu|+2)! * prod_j 2^[nu_j=alpha] b_j^{nu_j} over nu in {1..alpha}^|u|.
    The empty set has weight 1 for any alpha.
    """
    if alpha < 1:
        raise ValueError(f"alpha must be >= 1, got {alpha}")
    b_subset = list(b_subset)
    if not b_subset:
        return 1.0
    # Accumulate the distribution of |nu| with the per-j factor products folded in:
    # mass[l] = sum over nu with |nu|=l of prod_j 2^[nu_j=alpha] b_j^{nu_j}.
    mass = {0: 1.0}
    for b in b_subset:
        nxt: dict[int, float] = {}
        for nu in range(1, alpha + 1):
            c = (2.0 if nu == alpha else 1.0) * b**nu
            for l, m in mass.items():
                nxt[l + nu] = nxt.get(l + nu, 0.0) + m * c
        mass = nxt
    return sum(math.factorial(l + 2) * m for l, m in mass.items())


@dataclass(frozen=True)
class PodForm:
    """Order-times-product factorization gamma_u = orders[|u|] * prod_{j in u} betas[j].

    ``orders`` has length s+1 (orders[0] = 1); ``betas`` has length s.
    """

    orders: np.ndarray
    betas: np.ndarray

    def weight(self, u: tuple[int, ...]) -> float:
        """Weight of the subset u given as 1-based coordinate indices."""
        w = float(self.orders[len(u)])
        for j in u:
            w *= float(self.betas[j - 1])
        return w

    def powered(self, exponent: float) -> "PodForm":
        """The factorization of gamma_u**exponent (POD structure is closed under powers)."""
        return PodForm(orders=self.orders**exponent, betas=self.betas**exponent)


@dataclass(frozen=True)
class WeightSpec:
    """Weight family selector: kind "pod" or "spod" driven by the decay sequence b_j.

    For the SPOD kind ``alpha`` must be >= 2 (alpha = 1 is exactly POD and is
    represented by the POD kind).  ``orders_override`` supports tuned POD
    variants whose order factor is not (l+2)!.
    """

    kind: str
    bseq: np.ndarray
    alpha: int | None = None
    orders_override: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.kind not in ("pod", "spod"):
            raise ValueError(f"unknown weight kind {self.kind!r}")
        b = np.asarray(self.bseq, dtype=float)
        if b.ndim != 1 or b.size == 0:
            raise ValueError("bseq must be a nonempty 1-D sequence")
        if np.any(b <= 0.0):
            raise ValueError("bseq entries must be positive")
        if np.any(np.diff(b) > 1e-15):
            raise ValueError("bseq must be nonincreasing")
        object.__setattr__(self, "bseq", b)
        if self.kind == "spod":
            if self.alpha is None or self.alpha < 2:
                raise ValueError("spod weights require alpha >= 2")

    @property
    def s(self) -> int:
        return int(self.bseq.size)

    def weight(self, u: tuple[int, ...]) -> float:
        """gamma_u for a subset u of 1-based coordinate indices."""
        bs = [float(self.bseq[j - 1]) for j in u]
        if self.kind == "pod":
            if self.orders_override is not None:
                return self.pod_form().weight(tuple(u))
            return pod_weight(len(bs), bs)
        return spod_weight(bs, int(self.alpha))

    def pod_form(self) -> PodForm:
        """POD factorization (orders, betas); raises for the SPOD kind."""
        if self.kind != "pod":
            raise ValueError("pod_form is only defined for POD weights")
        if self.orders_override is not None:
            orders = np.asarray(self.orders_override, dtype=float)
            if orders.size != self.s + 1:
                raise ValueError("orders_override must have length s+1")
        else:
            orders = np.array([math.factorial(l + 2) for l in range(self.s + 1)], dtype=float)
        orders = orders.copy()
        orders[0] = 1.0  # gamma of the empty set is 1 by convention
        return PodForm(orders=orders, betas=2.0 * self.bseq)

    def spod_coeffs(self) -> np.ndarray:
        """Per-dimension order coefficients c[j, nu] = 2^[nu=alpha] b_j^nu, shape (s, alpha).

        The SPOD weight is gamma_u = sum_l (l+2)! * [coefficient of total order l in
        prod_{j in u} sum_nu c[j, nu]]; CBC recursions consume this table.
        """
        if self.kind != "spod":
            raise ValueError("spod_coeffs is only defined for SPOD weights")
        a = int(self.alpha)
        nus = np.arange(1, a + 1, dtype=float)
        c = self.bseq[:, None] ** nus[None, :]
        c[:, -1] *= 2.0
        return c


def tuned_pod_spec(bseq, lam: float, zeta_2lam: float) -> WeightSpec:
    """POD weights minimizing the shifted-lattice error constant at parameter lambda.

    gamma_u = ((|u|+2)! * prod_{j in u} b_j (2 pi^2)^{lam/2} / sqrt(2 zeta(2 lam)))^{1/(1+lam)}

    Still POD-shaped, so the same CBC machinery applies.  ``zeta_2lam`` is
    zeta(2*lam), supplied by the caller to keep this module free of the zeta
    evaluator.
    """
    if not 0.5 < lam <= 1.0:
        raise ValueError(f"lambda must be in (1/2, 1], got {lam}")
    b = np.asarray(bseq, dtype=float)
    expo = 1.0 / (1.0 + lam)
    scale = (2.0 * math.pi**2) ** (lam / 2.0) / math.sqrt(2.0 * zeta_2lam)
    orders = np.array(
        [math.factorial(l + 2) ** expo for l in range(b.size + 1)], dtype=float
    )
    # betas absorb the per-coordinate factor; the stored bseq keeps the raw decay
    # so invariant checks (positivity, monotonicity) still apply.
    spec = WeightSpec(kind="pod", bseq=(b * scale) ** expo / 2.0, orders_override=orders)
    return spec
