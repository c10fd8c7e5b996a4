"""Reduced-precision emulation, stochastic arithmetic and roofline analysis
for a spectral-element conjugate-gradient mini-solver."""
from .cg_solver import CgConfig, CgTrace, SolverDefect, accuracy_metrics, cg_solve, gain
from .context import Context, Ieee, Mca, ScopeMap, Vprec, parse_backend, resolve, scoped_op
from .fpemu import BINARY16, BINARY32, BINARY64, VprecFormat, format_bounds, vprec_op, vprec_round
from .mca import McaConfig, McaMode, NoiseStream, SampleStats, inexact, mca_op, significant_bits, summarize
from .roofline import KernelProfile, MachineModel, attainable, classify, predict_precision_gain
from .sem_core import Mesh, ax, gll_setup, glsc3, setup_box_mesh

__version__ = "0.1.0"
