"""Static condensation of one Picard linearization, checked against a monolithic solve."""
import numpy as np
import scipy.sparse.linalg as spla

from hdgal.assembly import Discretization, apply_dirichlet, assemble_system
from hdgal.condense import condense
from hdgal.driver import bfs_case
from hdgal.mesh import generate_bfs

d = Discretization(generate_bfs(1), 2)
L = d.layout
g = d.project_boundary_data(bfs_case().boundary_data)
x0 = np.zeros(L.total_dofs)
x0[L.dirichlet] = g
s = assemble_system(d, x0, 0.1, 1e2, "picard")
c = condense(s, dirichlet_values=g)
x = c.back_substitute(spla.spsolve(c.matrix.tocsc(), c.rhs))
K, b = apply_dirichlet(s.matrix, s.rhs, L.dirichlet, g)
ref = spla.spsolve(K.tocsc(), b)
print(f"full system {L.total_dofs} dofs, condensed {L.condensed_dofs}")
print(f"condensed vs monolithic relative difference {np.linalg.norm(x - ref) / np.linalg.norm(ref):.2e}")
