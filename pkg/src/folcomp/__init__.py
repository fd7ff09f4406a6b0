"""Numerical stable foliations for piecewise power-law skew maps.

The package computes the invariant slope field of a two-sided power-law
normal form by iterating its graph transform to the attracting fixed
point, extends the result with derivative jets through a fiber
contraction, integrates leaves of the resulting foliation, and collapses
the dynamics to a one-dimensional transversal return map.
"""

__version__ = "0.1.0"

from .errors import (ConfigError, DegenerateDy, DenominatorBreach,
                     EvalAtSingular, FolcompError, ImageOutsideD, L2Violated,
                     LeafEscapes, LeftDomain, NearSingularDenominator,
                     NoConvergence, NormDiverging, NotPositive, OrderMismatch,
                     OrderUnsupported, SpecInvalid)
from .map_model import (MapSpec, Point, eval_ABC, eval_T, load_spec, save_spec,
                        spec_from_dict, spec_to_dict, validate)
from .multilinear import MLMap, adapted_norm, pushforward, symmetrize
from .norms import (NormBundle, PerronData, build_perron, check_L2, check_L3,
                    compute_L, compute_Lambda, compute_Theta, estimate_norms,
                    run_assumption_check)
from .graph_transform import (Field, Grid, decay_exponent, field_load,
                              field_save, gamma_apply, interpolate,
                              iterate_to_fixed_point, measure_contraction,
                              sup_distance, zero_field)
from .jet_transform import (JetField, fiber_iterate, psi_apply,
                            verify_vanishing, zero_jets)
from .foliation import (Leaf, ReducedMap, check_invariance, path_independence,
                        reduce_1d, trace_leaf)

__all__ = [
    "__version__",
    "ConfigError", "DegenerateDy", "DenominatorBreach", "EvalAtSingular",
    "FolcompError", "ImageOutsideD", "L2Violated", "LeafEscapes", "LeftDomain",
    "NearSingularDenominator", "NoConvergence", "NormDiverging", "NotPositive",
    "OrderMismatch", "OrderUnsupported", "SpecInvalid",
    "MapSpec", "Point", "eval_ABC", "eval_T", "load_spec", "save_spec",
    "spec_from_dict", "spec_to_dict", "validate",
    "MLMap", "adapted_norm", "pushforward", "symmetrize",
    "NormBundle", "PerronData", "build_perron", "check_L2", "check_L3",
    "compute_L", "compute_Lambda", "compute_Theta", "estimate_norms",
    "run_assumption_check",
    "Field", "Grid", "decay_exponent", "field_load", "field_save",
    "gamma_apply", "interpolate", "iterate_to_fixed_point",
    "measure_contraction", "sup_distance", "zero_field",
    "JetField", "fiber_iterate", "psi_apply", "verify_vanishing", "zero_jets",
    "Leaf", "ReducedMap", "check_invariance", "path_independence", "reduce_1d",
    "trace_leaf",
]
