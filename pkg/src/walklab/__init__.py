"""Random walks on finitely generated groups: entropy, drift and growth,
Green metrics, boundary kernels, shadows, Z^d spectral data and nilpotent
geodesics."""

__version__ = "0.1.0"

from .errors import (BudgetExceeded, ConfigError, ConvergenceError, ModelMismatch, NoPeripheralStructure,
                     NotAdmissible, RadiusExhausted, TorsionElement, WalkLabError)
from .groups import (FiniteCyclic, FreeAbelian, FreeGroup, FreeProduct, GroupElement, GroupModel, Heisenberg,
                     cayley_ball, compose, coset_distance, distance, geodesics, invert, midpoint_count,
                     midpoints, model_from_spec, sphere_counts, volume_growth, word_length)
from .walks import (SparseMeasure, asymptotic_report, convolve, convolve_power, deviation_stats, dirac,
                    guivarch_report, measure_from_words, sample_paths, simple_random_walk)
from .green import (BoundaryRay, GreenEstimate, GreenMetric, GreenUnavailable, boundary_identity_audit,
                    cross_ratio, martin_cocycle, naim_kernel, rough_similarity_audit, translation_length)
