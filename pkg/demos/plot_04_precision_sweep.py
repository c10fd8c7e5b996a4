"""
How many mantissa bits does CG need?
====================================

Only the kernels of the CG loop are emulated at reduced width; setup stays
in binary64.  The final residual drops to the double-precision value once
the pseudo-mantissa is wide enough, then stays flat.
"""

from mixprec.cg_solver import CgConfig
from mixprec.harness import MeshSpec, plateau_onset, sweep_vprec

rows = sweep_vprec(MeshSpec(2, 2, 2, 8), CgConfig(miter=300), t_values=[3, 8, 12, 16, 20, 23, 30, 40, 52])
for row in rows:
    print(f"t={row.t:2d}  residual={row.final_residual:.2e}  iterations={row.iterations:3d}  converged={row.converged}")
print("plateau from t =", plateau_onset(rows))
