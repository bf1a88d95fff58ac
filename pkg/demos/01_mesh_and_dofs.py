"""Structured meshes and the HDG degree-of-freedom counts."""
import io

from hdgal.assembly import Discretization
from hdgal.mesh import generate_bfs, generate_unit_square, read_mesh, write_mesh

for nx in (4, 8, 16, 32):
    L = Discretization(generate_unit_square(nx), 2).layout
    print(f"unit square nx={nx:2d}: cells={2 * nx * nx:5d} total={L.total_dofs:6d} condensed={L.condensed_dofs:6d}")

m = generate_bfs(2)
tags = sorted(set(m.boundary_tags.values()))
print(f"step mesh n=2: {m.ncells} cells, {m.nfaces} faces, boundary tags {tags}")

buf = io.StringIO()
write_mesh(m, buf)
buf.seek(0)
assert read_mesh(buf) == m
print("mesh text round trip ok")
