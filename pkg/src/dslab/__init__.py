"""Numerical lab for Dirac-Schrödinger operators ``∂_x + S(x)`` on 1-D grids."""

from .config import DEFAULT, Tolerances
from .discretize import AssembledOperator, ParametrixBundle, assemble_dirac_schrodinger, build_parametrix
from .errors import *  # noqa: F401,F403
from .family import (
    CoverPatch,
    Grid1D,
    PotentialFamily,
    attach_cylinder_ends,
    build_family,
    make_constant_ends,
    rescale,
    smooth_family,
    standard_cover,
    trivialising_perturbation,
    verify_assumptions,
)
from .index import IndexReport, convergence_study, fredholm_index, graded_index
from .sflow import SpectralFlowReport, spectral_flow_circle, spectral_flow_crossing, spectral_flow_partition
from .theorems import (
    THEOREMS,
    EnsembleSpec,
    TheoremCheckResult,
    check_cylinder_replacement,
    check_graded_vanishing,
    check_homotopy_invariance,
    check_index_equals_sf,
    check_parametrix,
    check_relative_index,
    check_rescaling,
    relative_index_values,
)

__version__ = "0.1.0"
