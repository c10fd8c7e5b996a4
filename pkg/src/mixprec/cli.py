"""Command-line entry point: ``mixprec <subcommand>`` or ``python -m mixprec``.

Exit codes: 0 success, 2 configuration error, 3 solver defect.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import asdict
from pathlib import Path

from .cg_solver import CgConfig, SolverDefect, cg_solve
from .context import Context, ScopeMap
from .harness import (
    CG_LOOP_KERNELS,
    Ensemble,
    MeshSpec,
    PipelineConfig,
    SWEEP_COLUMNS,
    compare,
    config_hash,
    mca_ensemble,
    pipeline,
    plateau_onset,
    sweep_vprec,
    write_rows,
)
from .mca import McaConfig, McaMode
from .roofline import MachineModel, profiles_from_counters, roofline_rows, write_roofline_csv
from .sem_core import manufactured_rhs, save_field

log = logging.getLogger("mixprec")

EXIT_CONFIG = 2
EXIT_DEFECT = 3


class ConfigError(Exception):
    pass


def _common(p: argparse.ArgumentParser):
    p.add_argument("--mesh", default="2,2,2,8", help="ex,ey,ez,nx1 (default: %(default)s)")
    p.add_argument("--tol", type=float, default=1.0e-10)
    p.add_argument("--miter", type=int, default=1000)
    p.add_argument("--precond", choices=["none", "jacobi"], default="none")
    p.add_argument("--scope", type=Path, help="scope configuration JSON")
    p.add_argument("--machine", type=Path, help="machine model JSON (default: bundled Xeon E5-2690)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--runs", type=int, default=20)
    p.add_argument("--out", type=Path, default=Path("out"))
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mixprec", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("solve", help="one CG solve; writes trace, counters and a summary")
    _common(p)
    p.add_argument("--variant", choices=["double", "single", "mixed"], default="double")
    p.add_argument("--save-solution", action="store_true")

    p = sub.add_parser("sweep-vprec", help="VPREC precision sweep over the CG kernels")
    _common(p)
    p.add_argument("--t-min", type=int, default=3)
    p.add_argument("--t-max", type=int, default=52)
    p.add_argument("--r", type=int, default=11, help="exponent bits (default: %(default)s)")

    p = sub.add_parser("mca-ensemble", help="ensemble of MCA solves over the CG kernels")
    _common(p)
    p.add_argument("--mode", choices=["rr", "full"], default="rr")
    p.add_argument("--t", type=int, default=23, help="virtual precision (default: %(default)s)")

    p = sub.add_parser("roofline", help="roofline table from a double reference solve")
    _common(p)
    p.add_argument("--precision", choices=["scalar", "dp_vector", "sp_vector"], default="dp_vector")

    p = sub.add_parser("pipeline", help="speed-up, VPREC and MCA checks per code section")
    _common(p)
    p.add_argument("--config", type=Path, help="pipeline configuration JSON")

    p = sub.add_parser("compare", help="double against mixed: accuracy, time and traffic")
    _common(p)
    p.add_argument("--variant", choices=["single", "mixed", "double"], default="mixed")
    p.add_argument("--repeats", type=int, default=5)
    return parser


def _cg_config(args, variant="double") -> CgConfig:
    return CgConfig(miter=args.miter, tol=args.tol, precond=args.precond, variant=variant)


def _machine(args) -> MachineModel:
    return MachineModel.load(args.machine) if args.machine else MachineModel.xeon_e5_2690()


def _kernels(args):
    if args.scope is None:
        return CG_LOOP_KERNELS
    scope = ScopeMap.load(args.scope)
    return scope.include or CG_LOOP_KERNELS


def _header(args, **extra) -> tuple[str, dict]:
    cfg = {k: (str(v) if isinstance(v, Path) else v) for k, v in vars(args).items()
           if k not in ("verbose", "out")}
    cfg.update(extra)
    return f"config_hash={config_hash(cfg)} config={json.dumps(cfg, sort_keys=True, default=str)}", cfg


def cmd_solve(args):
    spec = MeshSpec.parse(args.mesh)
    scope = ScopeMap.load(args.scope) if args.scope else ScopeMap()
    mesh = spec.build()
    ctx = Context(scope, instance=0)
    f = manufactured_rhs(mesh, ctx)
    header, _ = _header(args)
    x, trace = cg_solve(mesh, f, _cg_config(args, args.variant), ctx)
    trace.write_csv(args.out / "trace.csv", header)
    ctx.counters.write_csv(args.out / "counters.csv", header)
    tot = ctx.counters.total()
    summary = {
        "variant": args.variant,
        "iterations": trace.iterations,
        "converged": trace.converged,
        "final_residual": trace.final_residual,
        "wall_seconds": trace.wall_seconds,
        "bytes_read": tot.bytes_read,
        "bytes_written": tot.bytes_written,
        "flops": tot.flops,
    }
    (args.out / "summary.json").write_text(json.dumps(summary, indent=2))
    if args.save_solution:
        save_field(args.out / "solution.f64", x, mesh)
    print(json.dumps(summary))


def cmd_sweep(args):
    if not 1 <= args.t_min <= args.t_max <= 52:
        raise ConfigError("t range must satisfy 1 <= t-min <= t-max <= 52")
    rows = sweep_vprec(MeshSpec.parse(args.mesh), _cg_config(args), _kernels(args),
                       range(args.t_min, args.t_max + 1), args.r)
    header, _ = _header(args)
    write_rows(args.out / "sweep_vprec.csv", rows, SWEEP_COLUMNS, header)
    onset = plateau_onset(rows)
    for row in rows:
        print(f"t={row.t:2d} residual={row.final_residual:.3e} iterations={row.iterations} "
              f"converged={row.converged}")
    print(f"plateau onset: {onset}")


def _write_ensemble(out: Path, ens: Ensemble, header: str, stem="ensemble"):
    write_rows(out / f"{stem}.csv", ens.trace_rows(), ["iteration", "run_id", "residual"], header)
    write_rows(out / f"{stem}_summary.csv", ens.summary_rows(),
               ["iteration", "mean", "min", "max", "stddev", "s2"], header)


def cmd_ensemble(args):
    mca = McaConfig(McaMode(args.mode), args.t, args.seed)
    ens = mca_ensemble(MeshSpec.parse(args.mesh), _cg_config(args), _kernels(args), mca, args.runs)
    header, _ = _header(args)
    _write_ensemble(args.out, ens, header)
    info = {
        "runs": len(ens.runs),
        "converged": ens.converged_count,
        "iterations": [r.iterations for r in ens.runs],
        "final_residual": asdict(ens.final),
        "s2_final_residual": ens.s2_residual,
        "s2_solution": ens.s2_solution,
    }
    (args.out / "ensemble.json").write_text(json.dumps(info, indent=2))
    print(json.dumps(info))


def cmd_roofline(args):
    from .harness import run_solve
    spec = MeshSpec.parse(args.mesh)
    res = run_solve(spec, _cg_config(args))
    if res.defect:
        raise SolverDefect(res.defect)
    rows = roofline_rows(profiles_from_counters(res.counters), _machine(args), args.precision)
    header, _ = _header(args)
    write_roofline_csv(args.out / "roofline.csv", rows, header)
    res.counters.write_csv(args.out / "counters.csv", header)
    for row in rows:
        print(f"{row['kernel']:8s} ai={row['ai']:.4f} {row['binding_roof']:24s} "
              f"{row['attainable_gflops']:.2f} GFLOPS  sp speedup {row['predicted_sp_speedup']:.3f}")


def cmd_pipeline(args):
    d = json.loads(args.config.read_text()) if args.config else {}
    d.setdefault("mesh", args.mesh)
    d.setdefault("cg", {"miter": args.miter, "tol": args.tol, "precond": args.precond})
    d.setdefault("mca_runs", args.runs)
    try:
        cfg = PipelineConfig.from_dict(d, _machine(args))
    except (KeyError, TypeError) as exc:
        raise ConfigError(f"bad pipeline configuration: {exc}") from exc
    report = pipeline(cfg)
    (args.out / "pipeline.json").write_text(json.dumps(report.to_dict(), indent=2, default=str))
    for s in report.sections:
        print(f"{s.name}: {s.verdict} (speedup {s.predicted_speedup:.3f}, vprec error {s.vprec_error}, "
              f"mca s2 {s.mca_s2})")


def cmd_compare(args):
    rep = compare(MeshSpec.parse(args.mesh), _cg_config(args), args.variant, args.repeats)
    (args.out / "compare.json").write_text(json.dumps(rep, indent=2))
    header, _ = _header(args)
    write_rows(args.out / "ae.csv", ({"iteration": i + 1, "ae": v} for i, v in enumerate(rep["ae"])),
               ["iteration", "ae"], header)
    print(f"MAE {rep['mae']:.3e}  iterations {rep['iterations']}  "
          f"solve gain {100 * rep['gain_solve']:.2f}%  whole gain {100 * rep['gain_whole']:.2f}%  "
          f"bytes/iteration ratio {rep['byte_ratio_per_iteration']:.3f}")


COMMANDS = {
    "solve": cmd_solve,
    "sweep-vprec": cmd_sweep,
    "mca-ensemble": cmd_ensemble,
    "roofline": cmd_roofline,
    "pipeline": cmd_pipeline,
    "compare": cmd_compare,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        MeshSpec.parse(args.mesh)
        args.out.mkdir(parents=True, exist_ok=True)
        COMMANDS[args.command](args)
    except SolverDefect as exc:
        print(f"solver defect: {exc}", file=sys.stderr)
        return EXIT_DEFECT
    except (ConfigError, ValueError, FileNotFoundError, json.JSONDecodeError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return 0


if __name__ == "__main__":
    sys.exit(main())
