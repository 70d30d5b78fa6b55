"""Finite elements on closed surfaces whose motion is driven by the surface field."""

from .analysis import ErrorAccumulator, ErrorReport, compute_eoc, emit_table, error_norms
from .assembly import (
    BlockSystemMatrix,
    assemble_mass,
    assemble_normal_coupling,
    assemble_normal_load,
    assemble_scalar_load,
    assemble_stiffness,
    build_velocity_matrix,
    discrete_norms,
)
from .mesh import (
    ElementGeometry,
    SurfaceMesh,
    element_geometry,
    export_obj,
    export_surface,
    generate_icosphere,
    mesh_quality,
)
from .problems import (
    ManufacturedSphere,
    ProblemSpec,
    TumorKinetics,
    VelocityLaw,
    example1_problem,
    example3_problem,
    exact_solution,
    manufactured_forcing,
    tumor_initial_data,
    tumor_kinetics,
    tumor_problem,
    velocity_law,
)
from .stepper import StepperConfig, SystemState, run, step_coupled, step_dynamic

__all__ = [name for name in dir() if not name.startswith("_")]
__version__ = "0.1.0"
