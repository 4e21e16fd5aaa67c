"""Exact polynomial integration over linear-arithmetic regions and constrained densities."""
from .cubature import CubatureRule, integrate_on_simplex, prepare_grundmann_moller, stable_sum
from .density import ConstrainedDensity, FitConfig, FitReport, fit, normalize
from .exceptions import WMIError
from .formula import And, Atom, Not, Or, decompose, parse, parse_file
from .geometry import Box, Polytope, Simplex, h_to_v, triangulate
from .integrator import CompiledIntegral, compile_integral, gasp_integrate, integrate_formula
from .nstar_bench import NStarSpec, nstar_dataset, nstar_formula, random_simplex_problems
from .polynomial import Polynomial, SosPolynomial, SplineDensitySpec, expand_square

__all__ = [
    "And", "Atom", "Box", "CompiledIntegral", "ConstrainedDensity", "CubatureRule", "FitConfig",
    "FitReport", "Not", "NStarSpec", "Or", "Polynomial", "Polytope", "Simplex", "SosPolynomial",
    "SplineDensitySpec", "WMIError", "compile_integral", "decompose", "expand_square", "fit",
    "gasp_integrate", "h_to_v", "integrate_formula", "integrate_on_simplex", "normalize",
    "nstar_dataset", "nstar_formula", "parse", "parse_file", "prepare_grundmann_moller",
    "random_simplex_problems", "stable_sum", "triangulate",
]
