"""Orchestration of the precision-tuning workflow.

Sweeps, ensembles, roofline reports, variant comparison and the candidate
pipeline (speed-up check, then VPREC accuracy check, then MCA stability
check). Results are plain dataclasses with CSV/JSON writers.
"""
from __future__ import annotations

import csv
import hashlib
import json
import logging
import math
import statistics
import time
from dataclasses import asdict, dataclass, field, replace
from functools import lru_cache
from pathlib import Path

import numpy as np

from .cg_solver import CgConfig, CgTrace, SolverDefect, accuracy_metrics, cg_solve, gain
from .context import Context, Ieee, Mca, OpCounters, ScopeMap, Vprec
from .fpemu import BINARY32, VprecFormat
from .mca import McaConfig, McaMode, SampleStats, significant_bits, summarize
from .roofline import KernelProfile, MachineModel, predict_precision_gain
from .sem_core import Mesh, glsc3, manufactured_rhs, setup_box_mesh

log = logging.getLogger(__name__)

__all__ = [
    "CG_LOOP_KERNELS",
    "SYNTHETIC_KERNELS",
    "KNOWN_KERNELS",
    "MeshSpec",
    "RunResult",
    "run_solve",
    "run_workload",
    "SweepRow",
    "sweep_vprec",
    "plateau_onset",
    "Ensemble",
    "mca_ensemble",
    "PipelineConfig",
    "SectionReport",
    "CandidateReport",
    "pipeline",
    "verdict",
    "compare",
    "config_hash",
]

CG_LOOP_KERNELS = frozenset({"cg", "glsc3", "add2s1", "add2s2", "add2", "ax", "mxm", "gs_op", "solveM"})
INIT_KERNELS = frozenset({"init_rhs"})
SYNTHETIC_KERNELS = frozenset({"cancel"})
KNOWN_KERNELS = CG_LOOP_KERNELS | INIT_KERNELS | SYNTHETIC_KERNELS


def config_hash(config: dict) -> str:
    text = json.dumps(config, sort_keys=True, default=str)
    return hashlib.sha256(text.encode()).hexdigest()[:16]


@dataclass(frozen=True)
class MeshSpec:
    ex: int = 2
    ey: int = 2
    ez: int = 2
    nx1: int = 8

    @classmethod
    def parse(cls, text: str) -> "MeshSpec":
        parts = [int(v) for v in text.split(",")]
        if len(parts) != 4:
            raise ValueError(f"mesh must be 'ex,ey,ez,nx1', got {text!r}")
        return cls(*parts)

    def build(self) -> Mesh:
        return _mesh(self)

    def __str__(self):
        return f"{self.ex},{self.ey},{self.ez},{self.nx1}"


@lru_cache(maxsize=16)
def _mesh(spec: MeshSpec) -> Mesh:
    return setup_box_mesh(spec.ex, spec.ey, spec.ez, spec.nx1)


@dataclass
class RunResult:
    trace: CgTrace
    x: np.ndarray | None
    counters: OpCounters
    defect: str | None = None
    wall_seconds: float = 0.0

    @property
    def converged(self) -> bool:
        return self.defect is None and self.trace.converged

    @property
    def final_residual(self) -> float:
        return self.trace.final_residual if self.defect is None else math.nan

    @property
    def iterations(self) -> int:
        return self.trace.iterations


def run_solve(spec: MeshSpec, cfg: CgConfig, scope: ScopeMap | None = None,
              instance: int = 0, coherent_noise: bool = True) -> RunResult:
    """Full run: mesh setup, right-hand side, CG loop. Solver defects are captured, not raised."""
    start = time.perf_counter()
    mesh = spec.build()
    ctx = Context(scope, instance=instance, coherent_noise=coherent_noise)
    f = manufactured_rhs(mesh, ctx)
    try:
        x, trace = cg_solve(mesh, f, cfg, ctx)
        defect = None
    except SolverDefect as exc:
        x, trace, defect = None, exc.trace or CgTrace(), str(exc)
    return RunResult(trace, x, ctx.counters, defect, time.perf_counter() - start)


def cancellation_probe(ctx: Context, n: int = 64) -> RunResult:
    """Synthetic division-heavy kernel ``((1 + b) - 1) / b``.

    Every operand is exactly representable in binary32, so rounding-based
    emulation returns exactly 1; stochastic noise on ``1 + b`` is amplified
    by the cancellation and the division.
    """
    ctx.call("cancel")
    b = np.ldexp(1.0, -(10 + np.arange(n) % 11))
    one = np.ones(n)
    ctx.charge_traffic("cancel", 2 * n * 8, n * 8)
    y = ctx.op("cancel", ctx.op("cancel", one, b, "+"), one, "-")
    ratio = np.asarray(ctx.op("cancel", y, b, "/"), dtype=np.float64)
    trace = CgTrace()
    err = float(np.max(np.abs(ratio - 1.0)))
    trace.record(residual=err, rtz1=0.0, beta=0.0, alpha=0.0, pap=0.0, rtr=err * err)
    trace.converged = bool(np.all(np.isfinite(ratio)))
    return RunResult(trace, ratio, ctx.counters)


def run_workload(kernels, backend, spec: MeshSpec, cfg: CgConfig, instance: int = 0,
                 coherent_noise: bool = True) -> RunResult:
    """Run the workload exercising ``kernels`` with those kernels under ``backend``."""
    return _run_workload(frozenset(kernels), backend, spec, cfg, instance, coherent_noise)


@lru_cache(maxsize=512)
def _run_workload(kernels, backend, spec, cfg, instance, coherent_noise):
    scope = ScopeMap.only(kernels, backend)
    if kernels <= SYNTHETIC_KERNELS:
        return cancellation_probe(Context(scope, instance, coherent_noise))
    return run_solve(spec, cfg, scope, instance, coherent_noise)


# -- VPREC sweep ---------------------------------------------------------------

SWEEP_COLUMNS = ["t", "r", "final_residual", "iterations", "converged"]


@dataclass(frozen=True)
class SweepRow:
    t: int
    r: int
    final_residual: float
    iterations: int
    converged: bool


def sweep_vprec(spec: MeshSpec, cfg: CgConfig, kernels=CG_LOOP_KERNELS, t_values=range(3, 53),
                r: int = 11) -> list[SweepRow]:
    """One solve per pseudo-mantissa width with ``kernels`` under VPREC, sorted by ``t``."""
    rows = []
    for t in sorted(set(t_values)):
        if not 1 <= t <= 52:
            raise ValueError(f"t={t} outside [1, 52]")
        res = run_workload(kernels, Vprec(VprecFormat(t, r)), spec, cfg)
        final = res.final_residual if res.trace.iterations else math.nan
        rows.append(SweepRow(t, r, final, res.iterations, res.converged))
        log.info("sweep t=%d residual=%.3e iterations=%d", t, final, res.iterations)
    return rows


def plateau_onset(rows: list[SweepRow], factor: float = 10.0) -> int | None:
    """Smallest ``t`` from which every row converges within ``factor`` of the widest row."""
    rows = sorted(rows, key=lambda r: r.t)
    ref = rows[-1].final_residual
    onset = None
    for row in reversed(rows):
        if row.converged and row.final_residual <= factor * ref:
            onset = row.t
        else:
            break
    return onset


def write_rows(path, rows, columns, header=None):
    with open(path, "w", newline="") as fh:
        if header:
            fh.write(f"# {header}\n")
        w = csv.DictWriter(fh, fieldnames=columns)
        w.writeheader()
        for row in rows:
            w.writerow({k: v for k, v in (asdict(row) if not isinstance(row, dict) else row).items()
                        if k in columns})


# -- MCA ensembles ---------------------------------------------------------------

@dataclass
class Ensemble:
    runs: list
    per_iteration: list           # SampleStats over the iterations every run reached
    final: SampleStats
    s2_solution: float

    @property
    def converged_count(self) -> int:
        return sum(r.converged for r in self.runs)

    @property
    def all_converged(self) -> bool:
        return self.converged_count == len(self.runs)

    @property
    def s2_residual(self) -> float:
        return self.final.s2 if self.final.s2 is not None else math.nan

    def band_widths(self, relative: bool = True) -> np.ndarray:
        w = np.array([s.max - s.min for s in self.per_iteration])
        if relative:
            mu = np.abs([s.mean for s in self.per_iteration])
            w = np.divide(w, mu, out=np.zeros_like(w), where=mu > 0)
        return w

    def trace_rows(self):
        for run_id, run in enumerate(self.runs):
            for i, res in enumerate(run.trace.residual):
                yield {"iteration": i + 1, "run_id": run_id, "residual": res}

    def summary_rows(self):
        for i, s in enumerate(self.per_iteration):
            yield {"iteration": i + 1, "mean": s.mean, "min": s.min, "max": s.max,
                   "stddev": s.stddev, "s2": s.s2}


def solution_significance(solutions) -> float:
    """Smallest per-entry significant-bit estimate over entries with a nonzero mean."""
    X = np.asarray(solutions, dtype=np.float64)
    if X.shape[0] < 2:
        return math.nan
    bits = [significant_bits(X[:, j]) for j in np.flatnonzero(np.any(X != 0, axis=0))]
    return float(min(bits)) if bits else math.nan


def mca_ensemble(spec: MeshSpec, cfg: CgConfig, kernels, mca_cfg: McaConfig, runs: int = 20,
                 distinct_streams: bool = True, coherent_noise: bool = True) -> Ensemble:
    """``runs`` stochastic solves; stream ``i`` is keyed by ``(seed, i)``.

    ``distinct_streams=False`` reuses one stream key for every run (a
    degenerate ensemble with zero spread).
    """
    if runs < 2:
        raise ValueError("an ensemble needs at least two runs")
    backend = Mca(mca_cfg)
    results = [run_workload(kernels, backend, spec, cfg, i if distinct_streams else 0, coherent_noise)
               for i in range(runs)]
    common = min(r.iterations for r in results)
    per_it = [summarize([r.trace.residual[k] for r in results]) for k in range(common)]
    finals = [r.trace.residual[-1] if r.iterations else math.nan for r in results]
    final = summarize(finals)
    sols = [r.x for r in results if r.x is not None]
    s2_sol = solution_significance(sols) if len(sols) == len(results) else math.nan
    return Ensemble(results, per_it, final, s2_sol)


# -- pipeline ------------------------------------------------------------------------

VERDICTS = ("pruned-speedup", "pruned-vprec", "pruned-mca", "candidate")


@dataclass(frozen=True)
class PipelineConfig:
    sections: dict = field(default_factory=lambda: {"cg_loop": CG_LOOP_KERNELS})
    speedup_threshold: float = 1.2
    vprec_error_threshold: float = 1e-6
    mca_runs: int = 20
    mca_min_bits: float = 10.0
    mca_require_converged: bool = True
    machine: MachineModel = field(default_factory=MachineModel.xeon_e5_2690)
    mesh: MeshSpec = MeshSpec()
    cg: CgConfig = CgConfig()
    vprec_backend: object = Vprec(BINARY32)
    mca_backend: object = Mca(McaConfig(McaMode.RR, 23, 0))

    def __post_init__(self):
        if not self.sections:
            raise ValueError("pipeline needs at least one section")
        secs = {}
        for name, kernels in self.sections.items():
            kernels = frozenset(kernels)
            unknown = kernels - KNOWN_KERNELS
            if not kernels or unknown:
                raise ValueError(f"section {name!r} references unknown kernels {sorted(unknown)}")
            secs[name] = kernels
        object.__setattr__(self, "sections", secs)
        if min(self.speedup_threshold, self.vprec_error_threshold, self.mca_min_bits) < 0:
            raise ValueError("thresholds must be non-negative")
        if self.mca_runs < 2:
            raise ValueError("mca_runs must be at least 2")

    @classmethod
    def from_dict(cls, d: dict, machine: MachineModel | None = None) -> "PipelineConfig":
        from .context import parse_backend
        kw = {}
        if "sections" in d:
            kw["sections"] = {k: frozenset(v) for k, v in d["sections"].items()}
        for key in ("speedup_threshold", "vprec_error_threshold", "mca_min_bits"):
            if key in d:
                kw[key] = float(d[key])
        if "mca_runs" in d:
            kw["mca_runs"] = int(d["mca_runs"])
        if "mca_require_converged" in d:
            kw["mca_require_converged"] = bool(d["mca_require_converged"])
        if "mesh" in d:
            m = d["mesh"]
            kw["mesh"] = MeshSpec.parse(m) if isinstance(m, str) else MeshSpec(**m)
        if "cg" in d:
            kw["cg"] = CgConfig(**d["cg"])
        if "vprec_backend" in d:
            kw["vprec_backend"] = parse_backend(d["vprec_backend"])
        if "mca_backend" in d:
            kw["mca_backend"] = parse_backend(d["mca_backend"])
        if machine is not None:
            kw["machine"] = machine
        elif "machine" in d:
            kw["machine"] = MachineModel.from_dict(d["machine"])
        return cls(**kw)

    def to_dict(self) -> dict:
        return {
            "sections": {k: sorted(v) for k, v in self.sections.items()},
            "speedup_threshold": self.speedup_threshold,
            "vprec_error_threshold": self.vprec_error_threshold,
            "mca_runs": self.mca_runs,
            "mca_min_bits": self.mca_min_bits,
            "mca_require_converged": self.mca_require_converged,
            "machine": self.machine.to_dict(),
            "mesh": asdict(self.mesh),
            "cg": asdict(self.cg),
            "vprec_backend": str(self.vprec_backend),
            "mca_backend": str(self.mca_backend),
        }


@dataclass
class SectionReport:
    name: str
    kernels: list
    predicted_speedup: float
    vprec_error: float | None = None
    mca_s2: float | None = None
    mca_s2_residual: float | None = None
    mca_min: float | None = None
    mca_max: float | None = None
    mca_converged: int | None = None
    mca_runs: int | None = None
    verdict: str = "candidate"


@dataclass
class CandidateReport:
    sections: list
    config_hash: str

    @property
    def verdicts(self) -> dict:
        return {s.name: s.verdict for s in self.sections}

    @property
    def candidates(self) -> list:
        return [s.name for s in self.sections if s.verdict == "candidate"]

    def to_dict(self) -> dict:
        return {"config_hash": self.config_hash, "sections": [asdict(s) for s in self.sections]}


def verdict(section: SectionReport, cfg: PipelineConfig) -> str:
    """Threshold rule applied to already measured quantities."""
    if section.predicted_speedup < cfg.speedup_threshold:
        return "pruned-speedup"
    if section.vprec_error is None or not section.vprec_error <= cfg.vprec_error_threshold:
        return "pruned-vprec"
    if cfg.mca_require_converged and section.mca_converged != section.mca_runs:
        return "pruned-mca"
    if section.mca_s2 is None or not section.mca_s2 >= cfg.mca_min_bits:
        return "pruned-mca"
    return "candidate"


def section_profile(counters: OpCounters, name: str, kernels) -> KernelProfile:
    tot = counters.total(kernels)
    return KernelProfile(name, float(tot.flops), float(tot.bytes))


def pipeline(cfg: PipelineConfig) -> CandidateReport:
    """Speed-up check, then VPREC check, then MCA check, per section; later steps run only on survivors."""
    reports = []
    for name, kernels in cfg.sections.items():
        reference = run_workload(kernels, Ieee(), cfg.mesh, cfg.cg)
        profile = section_profile(reference.counters, name, kernels)
        sec = SectionReport(name, sorted(kernels), predict_precision_gain(profile, cfg.machine))
        if sec.predicted_speedup < cfg.speedup_threshold:
            sec.verdict = "pruned-speedup"
            reports.append(sec)
            continue
        emulated = run_workload(kernels, cfg.vprec_backend, cfg.mesh, cfg.cg)
        sec.vprec_error = (abs(emulated.final_residual - reference.final_residual)
                           if emulated.converged or kernels <= SYNTHETIC_KERNELS else math.inf)
        if verdict(sec, cfg) == "pruned-vprec":
            sec.verdict = "pruned-vprec"
            reports.append(sec)
            continue
        if isinstance(cfg.mca_backend, Mca):
            ens = mca_ensemble(cfg.mesh, cfg.cg, kernels, cfg.mca_backend.cfg, cfg.mca_runs)
        else:
            # non-stochastic stand-in: every run is the same deterministic run
            res = [run_workload(kernels, cfg.mca_backend, cfg.mesh, cfg.cg) for _ in range(cfg.mca_runs)]
            ens = Ensemble(res, [], summarize([r.final_residual for r in res]),
                           solution_significance([r.x for r in res if r.x is not None]))
        sec.mca_s2 = ens.s2_solution
        sec.mca_s2_residual = ens.s2_residual
        sec.mca_min, sec.mca_max = ens.final.min, ens.final.max
        sec.mca_converged, sec.mca_runs = ens.converged_count, len(ens.runs)
        sec.verdict = verdict(sec, cfg)
        reports.append(sec)
    return CandidateReport(reports, config_hash(cfg.to_dict()))


# -- double vs mixed comparison ----------------------------------------------------------

VECTOR_KERNELS = frozenset({"glsc3", "add2s1", "add2s2"})


def _timed(spec, cfg, repeats):
    whole, solve, result = [], [], None
    for _ in range(repeats):
        result = run_solve(spec, cfg)
        whole.append(result.wall_seconds)
        solve.append(result.trace.wall_seconds)
    return result, statistics.median(whole), statistics.median(solve)


def _initial_residual(spec: MeshSpec) -> float:
    """Residual of the zero initial guess, ``sqrt(glsc3(f, c, f))``."""
    mesh, ctx = spec.build(), Context()
    f = manufactured_rhs(mesh, ctx)
    return math.sqrt(glsc3(f, mesh.c, f, ctx))


def compare(spec: MeshSpec, cfg: CgConfig, variant: str = "mixed", repeats: int = 5) -> dict:
    """Double run against ``variant``: residual AE/MAE, median timings, gains and traffic."""
    d, d_whole, d_solve = _timed(spec, replace(cfg, variant="double"), repeats)
    m, m_whole, m_solve = _timed(spec, replace(cfg, variant=variant), repeats)
    ae, mae = accuracy_metrics(m.trace, d.trace)

    def traffic(run, kernels=None):
        tot = run.counters.total(kernels)
        return {"bytes_read": tot.bytes_read, "bytes_written": tot.bytes_written, "flops": tot.flops,
                "bytes_per_iteration": tot.bytes / max(run.iterations, 1)}

    td, tm = traffic(d), traffic(m)
    vd, vm = traffic(d, VECTOR_KERNELS), traffic(m, VECTOR_KERNELS)
    return {
        "config_hash": config_hash({"mesh": asdict(spec), "cg": asdict(cfg), "variant": variant}),
        "variant": variant,
        "ae": ae.tolist(),
        "mae": mae,
        "iterations": {"double": d.iterations, variant: m.iterations},
        "converged": {"double": d.converged, variant: m.converged},
        "final_residual": {"double": d.final_residual, variant: m.final_residual},
        "initial_residual": _initial_residual(spec),
        "wall_seconds": {"double": d_whole, variant: m_whole},
        "solve_seconds": {"double": d_solve, variant: m_solve},
        "gain_whole": gain(d_whole, m_whole),
        "gain_solve": gain(d_solve, m_solve),
        "traffic": {"double": td, variant: tm},
        "byte_ratio_total": (tm["bytes_read"] + tm["bytes_written"]) / (td["bytes_read"] + td["bytes_written"]),
        "byte_ratio_per_iteration": tm["bytes_per_iteration"] / td["bytes_per_iteration"],
        "vector_byte_ratio_per_iteration": vm["bytes_per_iteration"] / vd["bytes_per_iteration"],
    }
