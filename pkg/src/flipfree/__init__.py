"""Flip-free mesh distortion optimisation toolkit."""

__version__ = "0.1.0"

from .energies import EnergyKind, conformal_init, evaluate, tutte_init
from .jacobian import build_gradient_operator
from .mesh_io import (
    HandleConstraints,
    Mesh,
    MeshError,
    load_mesh,
    mesh_from_arrays,
    save_obj_with_uv,
)
from .solver import (
    AdmmSolver,
    ExitStatus,
    SolveResult,
    SolverConfig,
    solve,
)

__all__ = [
    "AdmmSolver",
    "EnergyKind",
    "ExitStatus",
    "HandleConstraints",
    "Mesh",
    "MeshError",
    "SolveResult",
    "SolverConfig",
    "__version__",
    "build_gradient_operator",
    "conformal_init",
    "evaluate",
    "load_mesh",
    "mesh_from_arrays",
    "save_obj_with_uv",
    "solve",
    "tutte_init",
]
