"""Analytical roofline: arithmetic intensity, binding roof and predicted precision gain."""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

__all__ = [
    "ComputeRoof",
    "MemoryRoof",
    "MachineModel",
    "KernelProfile",
    "Classification",
    "arithmetic_intensity",
    "attainable",
    "classify",
    "predict_precision_gain",
    "profiles_from_counters",
    "roofline_rows",
    "write_roofline_csv",
    "PRECISION_CLASSES",
]

PRECISION_CLASSES = ("scalar", "dp_vector", "sp_vector")


@dataclass(frozen=True)
class ComputeRoof:
    name: str
    precision: str
    gflops: float


@dataclass(frozen=True)
class MemoryRoof:
    name: str
    gbps: float


@dataclass(frozen=True)
class MachineModel:
    compute: tuple
    memory: tuple
    name: str = ""

    def __post_init__(self):
        object.__setattr__(self, "compute", tuple(self.compute))
        object.__setattr__(self, "memory", tuple(self.memory))
        if not self.memory:
            raise ValueError("machine model needs at least one memory roof")
        for roof in self.compute:
            if roof.precision not in PRECISION_CLASSES:
                raise ValueError(f"unknown precision class {roof.precision!r}")
            if not roof.gflops > 0:
                raise ValueError(f"compute roof {roof.name!r} must have a positive peak")
        for roof in self.memory:
            if not roof.gbps > 0:
                raise ValueError(f"memory roof {roof.name!r} must have a positive bandwidth")
        peaks = [self.peak(c).gflops for c in PRECISION_CLASSES if self._has(c)]
        if peaks != sorted(peaks):
            raise ValueError("peaks must satisfy scalar <= dp_vector <= sp_vector")

    def _has(self, precision):
        return any(r.precision == precision for r in self.compute)

    def peak(self, precision: str) -> ComputeRoof:
        roofs = [r for r in self.compute if r.precision == precision]
        if not roofs:
            raise KeyError(f"machine model has no {precision} compute roof")
        return max(roofs, key=lambda r: r.gflops)

    @classmethod
    def from_dict(cls, d: dict) -> "MachineModel":
        return cls(
            compute=[ComputeRoof(c["name"], c["class"], float(c["gflops"])) for c in d["compute"]],
            memory=[MemoryRoof(m["name"], float(m["gbps"])) for m in d["memory"]],
            name=d.get("name", ""),
        )

    @classmethod
    def load(cls, path) -> "MachineModel":
        return cls.from_dict(json.loads(Path(path).read_text()))

    @classmethod
    def xeon_e5_2690(cls) -> "MachineModel":
        """Bundled Xeon E5-2690 model (cache bandwidths are placeholders)."""
        text = resources.files("mixprec").joinpath("data/xeon_e5_2690.json").read_text()
        return cls.from_dict(json.loads(text))

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "compute": [{"name": r.name, "class": r.precision, "gflops": r.gflops} for r in self.compute],
            "memory": [{"name": r.name, "gbps": r.gbps} for r in self.memory],
        }


@dataclass(frozen=True)
class KernelProfile:
    name: str
    flops: float
    bytes: float
    wall_seconds: float | None = None
    flops_by_class: dict = field(default_factory=dict, compare=False)


def arithmetic_intensity(p: KernelProfile) -> float:
    if not p.bytes > 0:
        raise ValueError(f"kernel {p.name!r} moved no bytes; intensity undefined")
    return p.flops / p.bytes


def attainable(ai: float, precision: str, m: MachineModel) -> tuple[float, str]:
    """``min(peak, bandwidth * ai)`` over all roofs.

    Ties go to the compute roof, then to the slowest memory roof.
    """
    peak = m.peak(precision)
    best, name = peak.gflops, peak.name
    for roof in sorted(m.memory, key=lambda r: r.gbps):
        bound = roof.gbps * ai
        if bound < best:
            best, name = bound, roof.name
    return best, name


@dataclass(frozen=True)
class Classification:
    kernel: str
    ai: float
    attainable_gflops: float
    binding_roof: str
    label: str
    achieved_gflops: float | None = None
    fraction_of_roof: float | None = None


def classify(p: KernelProfile, precision: str, m: MachineModel) -> Classification:
    ai = arithmetic_intensity(p)
    gflops, roof = attainable(ai, precision, m)
    memory_names = {r.name for r in m.memory}
    label = f"{roof} memory bound" if roof in memory_names else f"{roof} bound"
    achieved = frac = None
    if p.wall_seconds:
        achieved = p.flops / p.wall_seconds / 1e9
        frac = achieved / gflops if gflops > 0 else None
    return Classification(p.name, ai, gflops, roof, label, achieved, frac)


def predict_precision_gain(p: KernelProfile, m: MachineModel) -> float:
    """Predicted speedup of a binary64 kernel moved to binary32.

    Halving the element width doubles the intensity at unchanged flops, so the
    ratio is ``attainable_sp(2 * ai) / attainable_dp(ai)``.
    """
    ai = arithmetic_intensity(p)
    if ai == 0:
        # pure data movement: time is bytes / bandwidth on both sides
        return 2.0
    dp, _ = attainable(ai, "dp_vector", m)
    sp, _ = attainable(2.0 * ai, "sp_vector", m)
    return sp / dp


def profiles_from_counters(counters, kernels=None, wall_seconds=None) -> list[KernelProfile]:
    """One profile per kernel with traffic recorded in an :class:`~mixprec.context.OpCounters`."""
    out = []
    for name, c in sorted(counters.items()):
        if kernels is not None and name not in kernels:
            continue
        if c.bytes == 0:
            continue
        out.append(KernelProfile(
            name, float(c.flops), float(c.bytes),
            (wall_seconds or {}).get(name),
            {"add": c.flops_add, "mul": c.flops_mul, "div": c.flops_div},
        ))
    return out


ROOFLINE_COLUMNS = ["kernel", "ai", "attainable_gflops", "binding_roof", "predicted_sp_speedup"]


def roofline_rows(profiles, m: MachineModel, precision: str = "dp_vector") -> list[dict]:
    rows = []
    for p in profiles:
        cl = classify(p, precision, m)
        rows.append({
            "kernel": p.name,
            "ai": cl.ai,
            "attainable_gflops": cl.attainable_gflops,
            "binding_roof": cl.label,
            "predicted_sp_speedup": predict_precision_gain(p, m),
        })
    return rows


def write_roofline_csv(path, rows, header: str | None = None):
    with open(path, "w", newline="") as fh:
        if header:
            fh.write(f"# {header}\n")
        w = csv.DictWriter(fh, fieldnames=ROOFLINE_COLUMNS)
        w.writeheader()
        w.writerows(rows)
