"""The facet jump penalty equals B^T Mbar^{-1} B for the trace-pressure coupling."""
import numpy as np

from hdgal.assembly import Discretization, assemble_dh, assemble_stokes_forms, assemble_trace_mass
from hdgal.mesh import generate_unit_square

for nx in (2, 4):
    for k in (1, 2, 3):
        d = Discretization(generate_unit_square(nx), k)
        D = assemble_dh(d).toarray()
        B = assemble_stokes_forms(d)["B_pbu"].toarray()
        M = assemble_trace_mass(d).toarray()
        err = np.abs(D - B.T @ np.linalg.solve(M, B)).max() / np.abs(D).max()
        print(f"nx={nx} k={k}: relative max difference {err:.2e}")
