"""
From roofline prediction to candidate sections
==============================================

A code section is a named set of kernels.  Each section is checked in
turn: would binary32 be faster according to the roofline model, does a
binary32 emulation keep the final residual, and does the solution keep
enough significant bits under random rounding?
"""

from mixprec.cg_solver import CgConfig
from mixprec.harness import MeshSpec, PipelineConfig, pipeline, run_solve
from mixprec.roofline import MachineModel, profiles_from_counters, roofline_rows

machine = MachineModel.xeon_e5_2690()
spec = MeshSpec(2, 2, 1, 5)

# Per-kernel intensity and predicted binary32 speedup from a reference solve.
reference = run_solve(spec, CgConfig())
for row in roofline_rows(profiles_from_counters(reference.counters), machine):
    print(f"{row['kernel']:8s} ai={row['ai']:.3f}  {row['binding_roof']:20s} x{row['predicted_sp_speedup']:.2f}")

# The CG loop survives every check; a kernel built around catastrophic
# cancellation is rejected by the stochastic check.
cfg = PipelineConfig(sections={"cg_loop": {"cg", "glsc3", "add2s1", "add2s2", "add2", "ax", "mxm", "gs_op", "solveM"},
                               "cancel": {"cancel"}},
                     mesh=spec, mca_runs=8)
for section in pipeline(cfg).sections:
    print(section.name, section.verdict, f"speedup={section.predicted_speedup:.2f}", f"s2={section.mca_s2}")
