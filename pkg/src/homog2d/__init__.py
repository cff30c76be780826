"""Finite-element toolkit for periodic homogenization of 2D semilinear elliptic systems.

Typical flow: build a :class:`PeriodicCoefficientField`, solve the cell
problems, form the homogenized tensor, solve the homogenized and the
oscillating problems, and compare them through corrector expansions.
"""
from .cell import (
    CoercivityError,
    CorrectorSet,
    FluxCorrectorSet,
    HomogenizedTensor,
    PeriodicCoefficientField,
    checkerboard_field,
    constant_field,
    flux_correctors,
    homogenized_tensor,
    laminate_field,
    solve_cell_problems,
    tabulated_field,
    trigonometric_field,
    verify_coercivity,
)
from .expansion import ExpansionRecipe, Mollifier, build_expansion, cutoff, discrepancy, mollify
from .fem import DUAL_H1, SUP, NormKind, SolutionField, W1p, assemble_diffusion, norm, solve_sparse
from .mesh import DomainSpec, Mesh, PeriodicMesh, boundary_distance, build_domain_mesh, build_unit_cell_mesh, unit_square
from .semilinear import (
    NewtonReport,
    NonlinearityModel,
    ProblemSpec,
    check_nondegeneracy,
    local_uniqueness_probe,
    newton_solve,
    residual,
)
from .study import StudyConfig, StudyReport, emit_outputs, fit_rate, parse_config, reference_config, run_study

__version__ = "0.1.0"

__all__ = [
    "CoercivityError",
    "CorrectorSet",
    "FluxCorrectorSet",
    "HomogenizedTensor",
    "PeriodicCoefficientField",
    "checkerboard_field",
    "constant_field",
    "flux_correctors",
    "homogenized_tensor",
    "laminate_field",
    "solve_cell_problems",
    "tabulated_field",
    "trigonometric_field",
    "verify_coercivity",
    "ExpansionRecipe",
    "Mollifier",
    "build_expansion",
    "cutoff",
    "discrepancy",
    "mollify",
    "DUAL_H1",
    "SUP",
    "NormKind",
    "SolutionField",
    "W1p",
    "assemble_diffusion",
    "norm",
    "solve_sparse",
    "DomainSpec",
    "Mesh",
    "PeriodicMesh",
    "boundary_distance",
    "build_domain_mesh",
    "build_unit_cell_mesh",
    "unit_square",
    "NewtonReport",
    "NonlinearityModel",
    "ProblemSpec",
    "check_nondegeneracy",
    "local_uniqueness_probe",
    "newton_solve",
    "residual",
    "StudyConfig",
    "StudyReport",
    "emit_outputs",
    "fit_rate",
    "parse_config",
    "reference_config",
    "run_study",
]
