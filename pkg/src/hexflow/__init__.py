"""hexflow: MHFE-FV single-phase Darcy flow on hexahedral grids.

Assembles the non-symmetric 2x2 block systems of the mixed-hybrid finite
element / finite volume discretization and solves them with Bi-CGStab
accelerated by a block-LDU preconditioner whose decoupling factors are
approximated by restricted minimum-energy solves (static patch patterns
or residual-driven dynamic growth).
"""

from .assembly import (BlockSystem, assemble, balance_residuals, elemental_B,
                       element_operators, interelement_flux_coefficients,
                       recover_face_fluxes, update_accumulation)
from .grid import (BoundarySpec, ConductivityField, FluidRockProps, HexGrid,
                   build_structured, deform_dome, load_raster_field,
                   rotate_tensor_field, synth_heterogeneous_field)
from .krylov import SolveReport, bicgstab
from .patterns import PatternSet, base_pattern, static_pattern, static_patterns
from .precond import (BlockLDUPreconditioner, DynamicConfig, build_stage1,
                      build_stage2, compute_density, grow_pattern_dynamic,
                      solve_restricted_row)

__version__ = "0.1.0"

__all__ = [
    "BlockLDUPreconditioner", "BlockSystem", "BoundarySpec",
    "ConductivityField", "DynamicConfig", "FluidRockProps", "HexGrid",
    "PatternSet", "SolveReport", "assemble", "balance_residuals",
    "base_pattern", "bicgstab", "build_stage1", "build_stage2",
    "build_structured", "compute_density", "deform_dome", "elemental_B",
    "element_operators", "grow_pattern_dynamic",
    "interelement_flux_coefficients", "load_raster_field",
    "recover_face_fluxes", "rotate_tensor_field", "solve_restricted_row",
    "static_pattern", "static_patterns", "synth_heterogeneous_field",
    "update_accumulation",
]
