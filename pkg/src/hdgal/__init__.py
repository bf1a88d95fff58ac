"""HDG discretization of steady incompressible Navier-Stokes with
augmented-Lagrangian block preconditioners on the condensed system."""
from .mesh import Mesh, MeshFormatError, generate_bfs, generate_unit_square, read_mesh, write_mesh
from .femspace import SpaceLayout, build_layout, eval_basis, eval_face_basis, quadrature
from .assembly import Discretization, BlockSystem, assemble_system

__version__ = "0.1.0"
