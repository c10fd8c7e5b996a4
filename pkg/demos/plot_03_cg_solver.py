"""
A spectral-element conjugate gradient solve
===========================================

A box of hexahedral elements with Gauss-Lobatto-Legendre points, a
matrix-free Poisson operator and a preconditioned CG loop.  The same loop
runs in binary64, in binary32 ("single"), or in binary32 with the result
handed back as binary64 ("mixed").
"""

from mixprec.cg_solver import CgConfig, cg_solve
from mixprec.context import Context
from mixprec.sem_core import manufactured_rhs, setup_box_mesh

mesh = setup_box_mesh(2, 2, 2, nx1=8)
print(mesh.describe())

ctx = Context()
f = manufactured_rhs(mesh, ctx)

for variant in ("double", "single"):
    for precond in ("none", "jacobi"):
        _, trace = cg_solve(mesh, f, CgConfig(precond=precond, variant=variant, tol=1e-10 if variant == "double" else 1e-5))
        print(f"{variant:6s} {precond:6s} iterations={trace.iterations:3d} residual={trace.final_residual:.2e}")

# Counters record flops and bytes per kernel; they feed the roofline model.
for row in ctx.counters.rows()[:5]:
    print(row)
