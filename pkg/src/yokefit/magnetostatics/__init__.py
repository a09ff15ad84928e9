"""2D nonlinear magnetostatics on the parameterized H-dipole cross-section."""

from .geometry import AIR, COIL_NEG, COIL_POS, IRON, DipoleGeometry
from .mesh import (Mesh, export_field_csv, gap_triangle_count,
                   generate_dipole_mesh, load_mesh, save_mesh)
from .solver import (MU0, NU0, FemSystem, FieldSolution, LinearMaterial,
                     NuTable, assemble_and_solve, build_nu_table, element_b,
                     probe_b, probe_field, solve_nonlinear)

__all__ = [
    "AIR", "IRON", "COIL_POS", "COIL_NEG", "DipoleGeometry",
    "Mesh", "generate_dipole_mesh", "gap_triangle_count",
    "save_mesh", "load_mesh", "export_field_csv",
    "MU0", "NU0", "FemSystem", "FieldSolution", "LinearMaterial", "NuTable",
    "assemble_and_solve", "build_nu_table", "element_b",
    "probe_b", "probe_field", "solve_nonlinear",
]
