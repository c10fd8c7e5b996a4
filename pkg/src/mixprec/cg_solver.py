"""Preconditioned conjugate gradient over the spectral-element operator.

Three storage variants share one loop:

* ``double``: everything in binary64, arithmetic routed through the context;
* ``single``: setup in binary64, the loop (fields, geometry, scalars) in
  binary32, solution returned in binary32;
* ``mixed``: as ``single`` but the solution is converted back to binary64.
"""
from __future__ import annotations

import csv
import math
import time
from dataclasses import dataclass, field

import numpy as np

from .context import Context, scoped_op
from .sem_core import Mesh, add2s1, add2s2, ax, glsc3

__all__ = [
    "CgConfig",
    "CgTrace",
    "SolverDefect",
    "jacobi_diagonal",
    "solve_m",
    "cg_solve",
    "accuracy_metrics",
    "gain",
    "VARIANTS",
    "PRECONDITIONERS",
]

VARIANTS = ("double", "single", "mixed")
PRECONDITIONERS = ("none", "jacobi")


class SolverDefect(RuntimeError):
    """Raised on a non-positive ``pap`` or a non-finite residual; carries the partial trace."""

    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = trace


@dataclass(frozen=True)
class CgConfig:
    miter: int = 1000
    tol: float = 1.0e-10
    precond: str = "none"
    variant: str = "double"

    def __post_init__(self):
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if self.miter < 1:
            raise ValueError("miter must be at least 1")
        if self.precond not in PRECONDITIONERS:
            raise ValueError(f"precond must be one of {PRECONDITIONERS}")
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}")


TRACE_COLUMNS = ["iteration", "residual", "rtz1", "beta", "alpha", "pap", "rtr"]


@dataclass
class CgTrace:
    residual: list = field(default_factory=list)
    rtz1: list = field(default_factory=list)
    beta: list = field(default_factory=list)
    alpha: list = field(default_factory=list)
    pap: list = field(default_factory=list)
    rtr: list = field(default_factory=list)
    converged: bool = False
    wall_seconds: float = 0.0

    @property
    def iterations(self) -> int:
        return len(self.residual)

    @property
    def final_residual(self) -> float:
        return self.residual[-1] if self.residual else math.nan

    def record(self, **values):
        for k, v in values.items():
            getattr(self, k).append(float(v))

    def rows(self):
        for i in range(self.iterations):
            yield {"iteration": i + 1, **{c: getattr(self, c)[i] for c in TRACE_COLUMNS[1:]}}

    def write_csv(self, path, header: str | None = None):
        with open(path, "w", newline="") as fh:
            if header:
                fh.write(f"# {header}\n")
            w = csv.DictWriter(fh, fieldnames=TRACE_COLUMNS)
            w.writeheader()
            w.writerows(self.rows())

    def same_as(self, other: "CgTrace") -> bool:
        """Bitwise equality of every recorded quantity."""
        return self.converged == other.converged and all(
            np.array_equal(np.array(getattr(self, c)).view(np.uint64),
                           np.array(getattr(other, c)).view(np.uint64))
            for c in TRACE_COLUMNS[1:]
        )


def jacobi_diagonal(mesh: Mesh) -> np.ndarray:
    """Assembled diagonal of the stiffness operator; 1.0 on masked points."""
    D2 = mesh.D**2
    dd = np.diag(mesh.D)
    g11, g12, g13, g22, g23, g33 = mesh.g
    d = (np.einsum("li,ekjl->ekji", D2, g11)
         + np.einsum("lj,ekli->ekji", D2, g22)
         + np.einsum("lk,elji->ekji", D2, g33))
    di = dd[None, None, None, :]
    dj = dd[None, None, :, None]
    dk = dd[None, :, None, None]
    d = d + 2 * (di * dj * g12 + di * dk * g13 + dj * dk * g23)
    d = np.bincount(mesh.gs_map, weights=d.ravel())[mesh.gs_map]
    if np.any((mesh.mask > 0) & (d <= 0)):
        raise SolverDefect("zero diagonal on an interior point")
    return np.where(mesh.mask > 0, d, 1.0)


def solve_m(r, mesh: Mesh, precond: str, ctx: Context, diag=None):
    """Preconditioner application ``z = M^-1 r``."""
    ctx.call("solveM")
    n = r.size
    if precond == "none":
        ctx.charge_traffic("solveM", n * r.itemsize, n * r.itemsize)
        return r.copy()
    if precond == "jacobi":
        if diag is None:
            diag = jacobi_diagonal(mesh).astype(r.dtype)
        ctx.charge_traffic("solveM", 2 * n * r.itemsize, n * r.itemsize)
        return np.asarray(ctx.op("solveM", r, diag, "/", mesh.gs_map), dtype=r.dtype)
    raise ValueError(f"unknown preconditioner {precond!r}")


def _scalar(ctx, a, b, op, dtype):
    if dtype == np.float32:
        # native binary32 scalar arithmetic for the single loop
        ctx.op("cg", dtype(a), dtype(b), op)
        with np.errstate(all="ignore"):
            return {"/": np.divide, "*": np.multiply}[op](dtype(a), dtype(b))
    return scoped_op("cg", a, b, op, ctx)


def cg_solve(mesh: Mesh, f, cfg: CgConfig, ctx: Context | None = None):
    """Solve ``A x = f`` from ``x0 = 0``; returns ``(x, trace)``.

    The stopping test is on the absolute residual ``sqrt(glsc3(r, c, r))``.
    """
    ctx = ctx if ctx is not None else Context()
    f = np.asarray(f, dtype=np.float64)
    if f.size != mesh.n:
        raise ValueError("right-hand side does not match mesh")
    diag = jacobi_diagonal(mesh) if cfg.precond == "jacobi" else None

    if cfg.variant == "double":
        dtype, m = np.float64, mesh
    else:
        # conversion at loop entry, setup stays binary64
        dtype, m = np.float32, mesh.astype(np.float32)
        diag = diag.astype(np.float32) if diag is not None else None
    c = m.c
    keys = m.gs_map
    r = f.astype(dtype).ravel()
    x = np.zeros_like(r)
    p = np.zeros_like(r)
    trace = CgTrace()
    rtz1 = dtype(1.0)

    start = time.perf_counter()
    for it in range(1, cfg.miter + 1):
        z = solve_m(r, m, cfg.precond, ctx, diag)
        rtz2 = rtz1
        rtz1 = glsc3(r, c, z, ctx)
        if rtz1 == 0:
            rtr = glsc3(r, c, r, ctx)
            res = math.sqrt(float(rtr))
            trace.record(residual=res, rtz1=0.0, beta=0.0, alpha=0.0, pap=0.0, rtr=rtr)
            trace.converged = res <= cfg.tol
            break
        beta = _scalar(ctx, rtz1, rtz2, "/", dtype) if it > 1 else dtype(0.0)
        add2s1(p, z, beta, ctx, keys)
        w = ax(p, m, ctx)
        pap = glsc3(w, c, p, ctx)
        if not pap > 0:
            trace.wall_seconds = time.perf_counter() - start
            raise SolverDefect(f"non-positive pap={float(pap)!r} at iteration {it}", trace)
        alpha = _scalar(ctx, rtz1, pap, "/", dtype)
        add2s2(x, p, alpha, ctx, keys)
        add2s2(r, w, -alpha, ctx, keys)
        rtr = glsc3(r, c, r, ctx)
        res = float(np.sqrt(rtr)) if dtype == np.float32 else math.sqrt(rtr) if rtr >= 0 else math.nan
        trace.record(residual=res, rtz1=rtz1, beta=beta, alpha=alpha, pap=pap, rtr=rtr)
        if not math.isfinite(res):
            trace.wall_seconds = time.perf_counter() - start
            raise SolverDefect(f"non-finite residual at iteration {it}", trace)
        if res <= cfg.tol:
            trace.converged = True
            break
    trace.wall_seconds = time.perf_counter() - start
    if cfg.variant == "mixed":
        x = x.astype(np.float64)
    return x, trace


def accuracy_metrics(trace_m: CgTrace, trace_d: CgTrace):
    """Per-iteration absolute residual difference and its mean over the common iterations."""
    n = min(trace_m.iterations, trace_d.iterations)
    if n == 0:
        raise ValueError("accuracy metrics need non-empty traces")
    ae = np.abs(np.asarray(trace_m.residual[:n]) - np.asarray(trace_d.residual[:n]))
    return ae, float(np.mean(ae))


def gain(t_double: float, t_mixed: float) -> float:
    """Relative time saving ``(T_double - T_mixed) / T_double`` as a fraction."""
    if not t_double > 0:
        raise ValueError("baseline time must be positive")
    return (t_double - t_mixed) / t_double
