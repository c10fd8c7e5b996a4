"""Per-kernel backend routing and flop/byte accounting.

A :class:`Context` stands in for compile-time instrumentation: kernels call
``ctx.op(kernel, a, b, "+")`` for every arithmetic operation and the context
executes it through the backend that the :class:`ScopeMap` assigns to that
kernel name.
"""
from __future__ import annotations

import csv
import json
import re
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from . import _loops
from .fpemu import OPS, VprecFormat, vprec_op, vprec_round_array
from .mca import McaConfig, McaMode, NoiseStream, mca_op, mca_op_array

__all__ = [
    "Ieee",
    "Vprec",
    "Mca",
    "parse_backend",
    "ScopeMap",
    "KernelCounts",
    "OpCounters",
    "Context",
    "resolve",
    "scoped_op",
    "charge_traffic",
]

_OP_CLASS = {"+": "add", "-": "add", "*": "mul", "/": "div"}


@dataclass(frozen=True)
class Ieee:
    def __str__(self):
        return "ieee"


@dataclass(frozen=True)
class Vprec:
    fmt: VprecFormat

    def __str__(self):
        return f"vprec:{self.fmt}"


@dataclass(frozen=True)
class Mca:
    cfg: McaConfig

    def __str__(self):
        return f"mca:{self.cfg.mode.value}:t{self.cfg.t}:seed{self.cfg.seed}"


Backend = Ieee | Vprec | Mca

_MCA_RE = re.compile(r"^mca:(rr|full|mca):t(\d+)(?::seed(\d+))?$")


def parse_backend(text: str) -> Backend:
    """Parse ``"ieee"``, ``"vprec:t23r8"`` or ``"mca:rr:t23:seed42"``."""
    s = text.strip().lower()
    if s == "ieee":
        return Ieee()
    if s.startswith("vprec:"):
        return Vprec(VprecFormat.parse(s[len("vprec:"):]))
    m = _MCA_RE.match(s)
    if m:
        mode = McaMode.RR if m.group(1) == "rr" else McaMode.FULL
        return Mca(McaConfig(mode, int(m.group(2)), int(m.group(3) or 0)))
    raise ValueError(f"unknown backend {text!r}")


@dataclass(frozen=True)
class ScopeMap:
    default: Backend = Ieee()
    kernels: dict = field(default_factory=dict)
    include: frozenset = frozenset()
    exclude: frozenset = frozenset()

    def __post_init__(self):
        object.__setattr__(self, "include", frozenset(self.include))
        object.__setattr__(self, "exclude", frozenset(self.exclude))

    def __hash__(self):
        return hash((self.default, tuple(sorted((k, str(v)) for k, v in self.kernels.items())),
                     self.include, self.exclude))

    @classmethod
    def only(cls, kernels, backend: Backend) -> "ScopeMap":
        """Instrument exactly ``kernels`` with ``backend``; everything else runs IEEE."""
        return cls(default=backend, include=frozenset(kernels))

    @classmethod
    def from_dict(cls, d: dict) -> "ScopeMap":
        return cls(
            default=parse_backend(d.get("default", "ieee")),
            kernels={k: parse_backend(v) for k, v in d.get("kernels", {}).items()},
            include=frozenset(d.get("include", ())),
            exclude=frozenset(d.get("exclude", ())),
        )

    @classmethod
    def load(cls, path) -> "ScopeMap":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def to_dict(self) -> dict:
        return {
            "default": str(self.default),
            "kernels": {k: str(v) for k, v in sorted(self.kernels.items())},
            "include": sorted(self.include),
            "exclude": sorted(self.exclude),
        }

    def is_ieee(self) -> bool:
        return isinstance(self.default, Ieee) and all(isinstance(b, Ieee) for b in self.kernels.values())


def resolve(kernel: str, scope: ScopeMap) -> Backend:
    if not kernel:
        raise ValueError("kernel name must be non-empty")
    if kernel in scope.exclude:
        return Ieee()
    if scope.include and kernel not in scope.include:
        return Ieee()
    return scope.kernels.get(kernel, scope.default)


@dataclass
class KernelCounts:
    flops_add: int = 0
    flops_mul: int = 0
    flops_div: int = 0
    flops_fused: int = 0
    bytes_read: int = 0
    bytes_written: int = 0
    calls: int = 0

    @property
    def flops(self) -> int:
        return self.flops_add + self.flops_mul + self.flops_div + 2 * self.flops_fused

    @property
    def bytes(self) -> int:
        return self.bytes_read + self.bytes_written

    def __iadd__(self, other: "KernelCounts"):
        for f in fields(self):
            setattr(self, f.name, getattr(self, f.name) + getattr(other, f.name))
        return self


CSV_COLUMNS = ["kernel", "flops_add", "flops_mul", "flops_div", "bytes_read", "bytes_written", "calls"]


class OpCounters(dict):
    """Mapping of kernel name to :class:`KernelCounts`, created on first touch."""

    def __missing__(self, key):
        c = self[key] = KernelCounts()
        return c

    def merge(self, other: "OpCounters") -> "OpCounters":
        for k, v in other.items():
            self[k] += v
        return self

    def total(self, kernels=None) -> KernelCounts:
        out = KernelCounts()
        for k, v in self.items():
            if kernels is None or k in kernels:
                out += v
        return out

    def rows(self) -> list[dict]:
        return [
            {"kernel": k, **{c: getattr(v, c) for c in CSV_COLUMNS[1:]}}
            for k, v in sorted(self.items())
        ]

    def write_csv(self, path, header: str | None = None):
        with open(path, "w", newline="") as fh:
            if header:
                fh.write(f"# {header}\n")
            w = csv.DictWriter(fh, fieldnames=CSV_COLUMNS)
            w.writeheader()
            w.writerows(self.rows())


class Context:
    """Execution context of one solver instance: scope, counters and noise streams."""

    def __init__(self, scope: ScopeMap | None = None, instance: int = 0, coherent_noise: bool = True):
        self.scope = scope if scope is not None else ScopeMap()
        self.instance = instance
        # share MCA noise between duplicated copies of one degree of freedom
        self.coherent_noise = coherent_noise
        self.counters = OpCounters()
        self._streams: dict[int, NoiseStream] = {}
        self._cache: dict[str, Backend] = {}

    def backend(self, kernel: str) -> Backend:
        b = self._cache.get(kernel)
        if b is None:
            b = self._cache[kernel] = resolve(kernel, self.scope)
        return b

    def stream(self, seed: int) -> NoiseStream:
        s = self._streams.get(seed)
        if s is None:
            s = self._streams[seed] = NoiseStream(seed, self.instance)
        return s

    def reset_counters(self):
        self.counters = OpCounters()

    def call(self, kernel: str):
        self.counters[kernel].calls += 1

    def charge_traffic(self, kernel: str, bytes_read: int, bytes_written: int):
        c = self.counters[kernel]
        c.bytes_read += int(bytes_read)
        c.bytes_written += int(bytes_written)

    def _count(self, kernel, op, n):
        c = self.counters[kernel]
        cls = _OP_CLASS[op]
        setattr(c, f"flops_{cls}", getattr(c, f"flops_{cls}") + n)

    def op(self, kernel: str, a, b, op: str, keys=None):
        """Elementwise ``a op b`` (arrays or scalars) through the kernel's backend.

        ``keys`` optionally labels entries that are copies of one logical
        value (see :func:`mixprec.mca.inexact_array`); it only affects MCA.
        """
        backend = self.backend(kernel)
        fn = OPS[op]
        if isinstance(backend, Ieee):
            with np.errstate(all="ignore"):
                y = fn(a, b)
            self._count(kernel, op, np.size(y))
            return y
        _require_double(a, b)
        if isinstance(backend, Vprec):
            with np.errstate(all="ignore"):
                y = vprec_round_array(fn(np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)), backend.fmt)
        else:
            keys = keys if self.coherent_noise else None
            y = mca_op_array(a, b, op, backend.cfg, self.stream(backend.cfg.seed), keys)
        self._count(kernel, op, y.size)
        return y if y.ndim else float(y)

    def sum(self, kernel: str, terms) -> float:
        """Left-to-right sequential sum of ``terms`` (``len - 1`` additions)."""
        terms = np.ascontiguousarray(terms).ravel()
        n = terms.size
        if n == 0:
            return terms.dtype.type(0)
        self._count(kernel, "+", n - 1)
        backend = self.backend(kernel)
        if isinstance(backend, Ieee):
            return np.add.accumulate(terms)[-1]
        _require_double(terms)
        if isinstance(backend, Vprec):
            f = backend.fmt
            return float(_loops.vprec_cumsum(terms, f.t, f.emin, f.emax))
        cfg = backend.cfg
        full = cfg.mode is McaMode.FULL
        per_add = 3 if full else 1
        return float(self.stream(cfg.seed).draw_used(
            per_add * (n - 1), lambda xis: _loops.mca_cumsum(terms, cfg.t, full, xis)))


def _require_double(*arrays):
    for a in arrays:
        if np.asarray(a).dtype != np.float64:
            raise TypeError("emulated backends operate on binary64 storage only")


def scoped_op(kernel: str, a: float, b: float, op: str, ctx: Context) -> float:
    """Scalar instrumented operation (one flop charged to ``kernel``)."""
    backend = ctx.backend(kernel)
    ctx._count(kernel, op, 1)
    if isinstance(backend, Ieee):
        with np.errstate(all="ignore"):
            return float(OPS[op](np.float64(a), np.float64(b)))
    if isinstance(backend, Vprec):
        return vprec_op(a, b, op, backend.fmt)
    return mca_op(a, b, op, backend.cfg, ctx.stream(backend.cfg.seed))


def charge_traffic(kernel: str, bytes_read: int, bytes_written: int, ctx: Context):
    ctx.charge_traffic(kernel, bytes_read, bytes_written)
