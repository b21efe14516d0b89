"""Interlaced polynomial lattice rules over GF(2).

A polynomial lattice rule with N = 2^m points and generating polynomials
q_1, ..., q_d modulo an irreducible p(x) of degree m has nodes

    x_n^{(l)} = nu_m( n(x) q_l(x) mod p(x) ),   n = 0..N-1,

where nu_m reads the first m fractional coefficients of the formal Laurent
expansion w(x)/p(x) as a dyadic value.  Digit interlacing of alpha such
components per coordinate yields an order-alpha rule on [0,1)^s.

The CBC search constructs the alpha*s components greedily.  Its quality
function is the order-alpha digital-net criterion in per-component form:
coordinate j contributes prod_{w=1..alpha}(1 + phi_w(.)) - 1, where the
stream-w kernel

    phi_w(x) = 2^{-w} * [ (1 - r^{z-1})/(1 - r) - r^{z-1} ],   r = 2^{1-alpha},

depends only on the position z of the first nonzero digit of x (phi_w(0) =
2^{-w}/(1-r)).  This is the Walsh-series bound obtained from the digit
positions that interlacing assigns to each stream; combined with SPOD weights
of the projected coordinate set it upper-bounds the exact order-alpha
worst-case figure.  Scoring walks GF(2^m)^* with a primitive element, one
direct circular correlation per component.

Polynomials are encoded as Python ints (bit i = coefficient of x^i).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .pointset import PointSetMeta, QmcPointSet, to_symmetric
from .weights import WeightSpec

__all__ = [
    "PolyLatticeRule",
    "cbc_interlaced",
    "interlace_digits",
    "interlaced_points",
    "modulus_for_degree",
    "gf2_is_irreducible",
    "IRREDUCIBLE_MODULI",
]

# Primitive (hence irreducible) polynomials over GF(2), degrees 4..14,
# re-verified by trial division on first use.
IRREDUCIBLE_MODULI: dict[int, int] = {
    4: 0b10011,            # x^4 + x + 1
    5: 0b100101,           # x^5 + x^2 + 1
    6: 0b1000011,          # x^6 + x + 1
    7: 0b10000011,         # x^7 + x + 1
    8: 0b100011101,        # x^8 + x^4 + x^3 + x^2 + 1
    9: 0b1000010001,       # x^9 + x^4 + 1
    10: 0b10000001001,     # x^10 + x^3 + 1
    11: 0b100000000101,    # x^11 + x^2 + 1
    12: 0b1000001010011,   # x^12 + x^6 + x^4 + x + 1
    13: 0b10000000011011,  # x^13 + x^4 + x^3 + x + 1
    14: 0b100010001000011, # x^14 + x^10 + x^6 + x + 1
}

_TIE_REL_TOL = 1e-9
_MAX_OUTPUT_BITS = 53


# ----------------------------------------------------------------------------
# GF(2) polynomial arithmetic on int bitmasks
# ----------------------------------------------------------------------------

def gf2_degree(a: int) -> int:
    return a.bit_length() - 1


def gf2_mul(a: int, b: int) -> int:
    r = 0
    while b:
        if b & 1:
            r ^= a
        a <<= 1
        b >>= 1
    return r


def gf2_mod(a: int, p: int) -> int:
    dp = gf2_degree(p)
    while a and gf2_degree(a) >= dp:
        a ^= p << (gf2_degree(a) - dp)
    return a


def gf2_mulmod(a: int, b: int, p: int) -> int:
    return gf2_mod(gf2_mul(a, b), p)


def gf2_is_irreducible(p: int) -> bool:
    """Trial division by every polynomial of degree 1..deg(p)/2."""
    m = gf2_degree(p)
    if m < 1:
        return False
    for d in range(1, m // 2 + 1):
        for q in range(1 << d, 1 << (d + 1)):
            if gf2_mod(p, q) == 0:
                return False
    return True


def modulus_for_degree(m: int) -> int:
    """Shipped irreducible modulus of degree m, re-verified by trial division."""
    if m not in IRREDUCIBLE_MODULI:
        raise ValueError(f"no shipped modulus of degree {m} (have 4..14)")
    p = IRREDUCIBLE_MODULI[m]
    if not gf2_is_irreducible(p):
        raise AssertionError(f"modulus table corrupt at degree {m}")
    return p


# ----------------------------------------------------------------------------
# rule type, coordinates, interlacing
# ----------------------------------------------------------------------------

@dataclass(frozen=True)
class PolyLatticeRule:
    """Interlaced polynomial lattice rule: N = 2^m points, alpha*s generators."""

    m: int
    modulus: int
    zpolys: tuple[int, ...]
    alpha: int
    s: int
    criterion: float | None = None  # CBC quality value of the full vector

    def __post_init__(self):
        if gf2_degree(self.modulus) != self.m:
            raise ValueError("modulus degree must equal m")
        if not gf2_is_irreducible(self.modulus):
            raise ValueError("modulus must be irreducible over GF(2)")
        if self.alpha < 1:
            raise ValueError("alpha must be >= 1")
        if len(self.zpolys) != self.alpha * self.s:
            raise ValueError("need alpha*s generating polynomials")
        for q in self.zpolys:
            if not 1 <= q < (1 << self.m):
                raise ValueError("generating polynomials must be nonzero of degree < m")

    @property
    def N(self) -> int:
        return 1 << self.m


def _laurent_coords(elements: np.ndarray, p: int, m: int) -> np.ndarray:
    """nu_m(w/p) for field elements w (deg < m), as m-bit ints (MSB = first digit)."""
    r = elements.astype(np.int64).copy()
    v = np.zeros_like(r)
    for i in range(1, m + 1):
        r <<= 1
        bit = (r >> m) & 1
        v |= bit << (m - i)
        r ^= bit * p
    return v


def _component_coords(q: int, p: int, m: int) -> np.ndarray:
    """Integer coordinates of all N points for one generating polynomial q."""
    N = 1 << m
    n = np.arange(N, dtype=np.int64)
    elems = np.zeros(N, dtype=np.int64)
    for i in range(m):
        t = gf2_mulmod(1 << i, q, p)
        elems ^= ((n >> i) & 1) * t
    return _laurent_coords(elems, p, m)


def interlace_digits(streams, alpha: int) -> float:
    """Digit-interlace alpha values in [0,1): output digits cycle through the streams.

    Truncated at 53 output bits; alpha = 1 is the identity on dyadic inputs.
    """
    if alpha < 1:
        raise ValueError("alpha must be >= 1")
    streams = list(streams)
    if len(streams) != alpha:
        raise ValueError(f"expected {alpha} streams, got {len(streams)}")
    ints = []
    for x in streams:
        if not 0.0 <= x < 1.0:
            raise ValueError("stream values must lie in [0,1)")
        ints.append(int(x * (1 << _MAX_OUTPUT_BITS)))
    out = 0
    for pos in range(_MAX_OUTPUT_BITS):          # output digit index, 0-based
        ell, w = divmod(pos, alpha)              # stream digit ell of stream w
        bit = (ints[w] >> (_MAX_OUTPUT_BITS - 1 - ell)) & 1
        out |= bit << (_MAX_OUTPUT_BITS - 1 - pos)
    return out / (1 << _MAX_OUTPUT_BITS)


def _interlace_int_streams(vints: np.ndarray, m: int, alpha: int) -> np.ndarray:
    """Interlace alpha integer coordinate streams (m digits each) into floats [0,1).

    vints has shape (alpha, N); output digit (ell-1)*alpha + w is digit ell of
    stream w, truncated at 53 bits.
    """
    L = min(alpha * m, _MAX_OUTPUT_BITS)
    out = np.zeros(vints.shape[1], dtype=np.int64)
    for ell in range(1, m + 1):
        for w in range(alpha):
            pos = (ell - 1) * alpha + w          # 0-based output digit index
            if pos >= L:
                continue
            bit = (vints[w] >> (m - ell)) & 1
            out |= bit << (L - 1 - pos)
    return out / float(1 << L)


def interlaced_points(rule: PolyLatticeRule) -> QmcPointSet:
    """Generate the rule's nodes on the symmetric cube."""
    N = rule.N
    pts = np.empty((N, rule.s))
    for j in range(rule.s):
        vints = np.stack([
            _component_coords(rule.zpolys[j * rule.alpha + w], rule.modulus, rule.m)
            for w in range(rule.alpha)
        ])
        pts[:, j] = _interlace_int_streams(vints, rule.m, rule.alpha)
    meta = PointSetMeta(kind="interlaced", N=N, s=rule.s, alpha=rule.alpha,
                        z=rule.zpolys)
    return to_symmetric(pts, meta)


# ----------------------------------------------------------------------------
# CBC construction
# ----------------------------------------------------------------------------

def _stream_kernel(m: int, alpha: int, w: int) -> np.ndarray:
    """phi_w over all m-bit coordinate ints (index = integer coordinate value)."""
    r = 2.0 ** (1 - alpha)
    v = np.arange(1 << m, dtype=np.int64)
    # z = position of the first nonzero digit = m - bit_length(v) + 1; v = 0 special
    bitlen = np.frexp(v.astype(float))[1]
    z = m - bitlen + 1
    psi = (1.0 - r ** (z - 1.0)) / (1.0 - r) - r ** (z - 1.0)
    psi[0] = 1.0 / (1.0 - r)
    return 2.0 ** (-w) * psi


def _correlate_cyclic(table: np.ndarray, weights: np.ndarray) -> np.ndarray:
    doubled = np.concatenate([table, table[:-1]])
    return np.correlate(doubled, weights, mode="valid")


def cbc_interlaced(m: int, s: int, alpha: int, weights: WeightSpec) -> PolyLatticeRule:
    """CBC construction of an interlaced polynomial lattice rule of order alpha.

    Greedy over the alpha*s generating polynomials; each step minimizes the
    per-component order-alpha criterion with the SPOD weights.  Requires the
    shipped modulus table (degrees 4..14); x is primitive for every entry, so
    the candidate walk is the orbit of x in GF(2^m)^*.
    """
    if not 2 <= alpha <= 4:
        raise ValueError("alpha must be in {2, 3, 4}")
    if not 4 <= m <= 14:
        raise ValueError("m must be in 4..14")
    if not 1 <= s <= 64:
        raise ValueError("s must be in 1..64")
    if weights.kind != "spod" or weights.alpha != alpha:
        raise ValueError("cbc_interlaced requires SPOD weights with matching alpha")
    if weights.s < s:
        raise ValueError(f"weights cover {weights.s} coordinates, need {s}")

    p = modulus_for_degree(m)
    N = 1 << m

    # orbit of the primitive element x: orbit[t] = x^t as int, t = 0..N-2
    orbit = np.empty(N - 1, dtype=np.int64)
    acc = 1
    for t in range(N - 1):
        orbit[t] = acc
        acc = gf2_mulmod(acc, 0b10, p)
    coords_orbit = _laurent_coords(orbit, p, m)

    kernels = [_stream_kernel(m, alpha, w) for w in range(1, alpha + 1)]
    cjv = weights.spod_coeffs()  # (>=s, alpha)
    L = alpha * s
    fac = np.array([math.factorial(l + 2) for l in range(L + 1)], dtype=float)

    P = np.zeros((N, L + 1))
    P[:, 0] = 1.0
    zpolys: list[int] = []
    for j in range(1, s + 1):
        lj = alpha * j
        # candidate-independent weight per point: W_j(n) = sum_l fac[l] sum_nu c P[n, l-nu]
        W = np.zeros(N)
        for nu in range(1, alpha + 1):
            W += cjv[j - 1, nu - 1] * (P[:, : lj + 1 - nu] @ fac[nu : lj + 1])
        cum = np.ones(N)
        vcols = np.empty((alpha, N), dtype=np.int64)
        for w in range(alpha):
            u = W * cum
            table = kernels[w][coords_orbit]
            scores = _correlate_cyclic(table, u[orbit])
            best = scores.min()
            tol = _TIE_REL_TOL * (abs(best) + 1e-300)
            tied = np.flatnonzero(scores <= best + tol)
            a = tied[np.argmin(orbit[tied])]
            q = int(orbit[a])
            zpolys.append(q)
            vcol = np.zeros(N, dtype=np.int64)
            vcol[orbit] = coords_orbit[(a + np.arange(N - 1)) % (N - 1)]
            vcols[w] = vcol
            cum *= 1.0 + kernels[w][vcol]
        phi_j = cum - 1.0
        P_old = P.copy()
        for nu in range(1, alpha + 1):
            P[:, nu : lj + 1] += cjv[j - 1, nu - 1] * phi_j[:, None] * P_old[:, : lj + 1 - nu]
    crit = float(np.sum(P[:, 1:].mean(axis=0) * fac[1:]))
    return PolyLatticeRule(m=m, modulus=p, zpolys=tuple(zpolys), alpha=alpha, s=s,
                           criterion=crit)
