"""Navier-Stokes finite-element frontend: mesh, Taylor–Hood spaces,
steady solves and the quadratic-DAE assembly for the cylinder benchmark."""

from .mesh import (CHANNEL_HEIGHT, CHANNEL_LENGTH, CYLINDER_CENTER,
                   CYLINDER_DIAMETER, CYLINDER_RADIUS, Mesh, build_mesh,
                   inflow_profile, load_mesh, save_mesh, write_mesh_text)
from .steady import (SteadyState, assemble_dae, drag_lift, steady_solve,
                     stokes_solve)
from .taylor_hood import VISCOUS_LENGTH, FemProblem, build_fem

__all__ = [
    "CHANNEL_HEIGHT", "CHANNEL_LENGTH", "CYLINDER_CENTER",
    "CYLINDER_DIAMETER", "CYLINDER_RADIUS", "Mesh", "build_mesh",
    "inflow_profile", "load_mesh", "save_mesh", "write_mesh_text",
    "SteadyState", "assemble_dae", "drag_lift", "steady_solve",
    "stokes_solve", "VISCOUS_LENGTH", "FemProblem", "build_fem",
]
