"""Error exponents for superposition codes on the degraded broadcast channel."""
from .channel import (BroadcastChannel, DegradedBscSpec, HierarchicalEnsemble, JointDist, RatePair,
                      bsc_capacity_corner, info_functionals, make_binary_ensemble, make_degraded_bsc,
                      weak_marginal)
from .enumerator import (Combine, EnumeratorParams, EnumeratorSettings, Side, TypeContext,
                         strong_exponent_t2, weak_exponent_t2)
from .gallager import (ExponentReport, GallagerParams, GridSettings, Mode, e0, f_abz, gallager74_strong,
                       gallager74_weak, strong_exponent_t1, weak_exponent_t1)

__version__ = "0.1.0"
