"""Outer FGMRES iterations with the two Schur approximations, and the Schur spectrum."""
import numpy as np

from hdgal.alprecond import ALPreconditioner, PreconditionerSpec, schur_mass_quality
from hdgal.assembly import Discretization, assemble_system
from hdgal.condense import condense
from hdgal.driver import lid_case
from hdgal.krylov import KrylovConfig, fgmres
from hdgal.mesh import generate_unit_square


def build(nx, k, gamma):
    d = Discretization(generate_unit_square(nx), k)
    g = d.project_boundary_data(lid_case().boundary_data)
    x0 = np.zeros(d.layout.total_dofs)
    x0[d.layout.dirichlet] = g
    return condense(assemble_system(d, x0, 1.0, gamma, convection=False), dirichlet_values=g)


c = build(8, 2, 1e4)
for variant in ("GM", "G"):
    P = ALPreconditioner(c, PreconditionerSpec(variant))
    _, st = fgmres(c.matrix, c.rhs, P, KrylovConfig(rtol=1e-4, atol=1e-12))
    print(f"variant {variant:2s}: outer {st.iterations}, inner velocity {P.max_velocity_iters}, "
          f"inner Schur {P.max_schur_iters}")

print("gamma   relative gap   eigenvalues of (Mbar/gamma)^-1 (-S)")
for row in schur_mass_quality(lambda g: build(4, 2, g), (1e2, 1e3, 1e4, 1e5))["rows"]:
    print(f"{row['gamma']:7.0e}  {row['relative_gap']:.3f}   [{row['eig_min']:.3f}, {row['eig_max']:.3f}]")
