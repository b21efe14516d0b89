"""QMC constructions: CBC lattices, shifted/folded variants, interlaced polynomial
lattice rules, POD/SPOD weights, and the MC baseline."""

from .lattice import (
    LatticeRule,
    cbc_lattice,
    euler_totient,
    folded_lattice,
    is_prime,
    lattice_points,
    lattice_pointset,
    primitive_root,
    random_shift,
    theoretical_bound,
    wce_shift_avg,
    zeta,
)
from .pointset import (
    PointSetMeta,
    QmcPointSet,
    mc_points,
    rng_for,
    shift_mod1,
    tent,
    tent_fold,
    to_symmetric,
)
from .polylattice import (
    IRREDUCIBLE_MODULI,
    PolyLatticeRule,
    cbc_interlaced,
    gf2_is_irreducible,
    interlace_digits,
    interlaced_points,
    modulus_for_degree,
)
from .weights import WeightSpec, pod_weight, spod_weight, tuned_pod_spec

__all__ = [
    "LatticeRule",
    "PolyLatticeRule",
    "PointSetMeta",
    "QmcPointSet",
    "WeightSpec",
    "IRREDUCIBLE_MODULI",
    "cbc_interlaced",
    "cbc_lattice",
    "euler_totient",
    "folded_lattice",
    "gf2_is_irreducible",
    "interlace_digits",
    "interlaced_points",
    "is_prime",
    "lattice_points",
    "lattice_pointset",
    "mc_points",
    "modulus_for_degree",
    "pod_weight",
    "primitive_root",
    "random_shift",
    "rng_for",
    "shift_mod1",
    "spod_weight",
    "tent",
    "tent_fold",
    "theoretical_bound",
    "to_symmetric",
    "tuned_pod_spec",
    "wce_shift_avg",
    "zeta",
]
