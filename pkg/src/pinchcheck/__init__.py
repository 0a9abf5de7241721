"""Discrete verification of eigenvalue pinching for manifolds carrying almost
parallel forms: sampled model manifolds, kernel Laplacians on forms, spectral
solvers and the residual reports built on top of them."""

from .exterior import hodge_star, wedge
from .gh import FiniteMetricSpace, gh_upper_bound_from_map, hausdorff_distance, verify_approximation_map
from .harness import run_pinching
from .kahler import almost_kahler_defect, verify_kahler_bound
from .manifolds import SampledManifold, load_manifold, product, quotient_example, sample_sphere, save_manifold
from .operators import FormField, assemble_connection_laplacian, assemble_function_laplacian
from .orientability import detect_orientability
from .reference import bounds, pinching_exponents
from .spectral import lowest_eigenpairs

__version__ = "0.1.0"

__all__ = [
    "FiniteMetricSpace",
    "FormField",
    "SampledManifold",
    "almost_kahler_defect",
    "assemble_connection_laplacian",
    "assemble_function_laplacian",
    "bounds",
    "detect_orientability",
    "gh_upper_bound_from_map",
    "hausdorff_distance",
    "hodge_star",
    "load_manifold",
    "lowest_eigenpairs",
    "pinching_exponents",
    "product",
    "quotient_example",
    "run_pinching",
    "sample_sphere",
    "save_manifold",
    "verify_approximation_map",
    "verify_kahler_bound",
    "wedge",
]
