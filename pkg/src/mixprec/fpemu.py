"""Reduced-precision emulation inside binary64 (VPREC-style result rounding).

Every operation is computed in binary64 and the result is rounded to a format
with ``t`` explicit mantissa bits and an ``r``-bit exponent, round-to-nearest
ties-to-even, with gradual underflow and overflow to infinity.
"""
from __future__ import annotations

import math
import operator
import re
from dataclasses import dataclass

import numpy as np

__all__ = [
    "VprecFormat",
    "BINARY16",
    "BINARY32",
    "BINARY64",
    "vprec_round",
    "vprec_round_array",
    "vprec_op",
    "format_bounds",
]

OPS = {
    "+": operator.add,
    "-": operator.sub,
    "*": operator.mul,
    "/": operator.truediv,
}

_FMT_RE = re.compile(r"^t(\d+)r(\d+)$")


@dataclass(frozen=True)
class VprecFormat:
    """Emulated format: ``t`` pseudo-mantissa bits and ``r`` exponent bits."""

    t: int
    r: int

    def __post_init__(self):
        if not isinstance(self.t, (int, np.integer)) or not 1 <= self.t <= 52:
            raise ValueError(f"pseudo-mantissa bits must be in [1, 52], got {self.t!r}")
        if not isinstance(self.r, (int, np.integer)) or not 2 <= self.r <= 11:
            raise ValueError(f"exponent bits must be in [2, 11], got {self.r!r}")

    @property
    def bias(self) -> int:
        return 2 ** (self.r - 1) - 1

    @property
    def emax(self) -> int:
        return self.bias

    @property
    def emin(self) -> int:
        return 1 - self.bias

    def __str__(self) -> str:
        return f"t{self.t}r{self.r}"

    @classmethod
    def parse(cls, text: str) -> "VprecFormat":
        m = _FMT_RE.match(text.strip())
        if m is None:
            raise ValueError(f"cannot parse VPREC format {text!r}, expected e.g. 't23r8'")
        return cls(int(m.group(1)), int(m.group(2)))


BINARY16 = VprecFormat(10, 5)
BINARY32 = VprecFormat(23, 8)
BINARY64 = VprecFormat(52, 11)


def format_bounds(fmt: VprecFormat) -> tuple[int, int, float]:
    """Return ``(emin, emax, smallest positive subnormal)`` for ``fmt``."""
    return fmt.emin, fmt.emax, math.ldexp(1.0, fmt.emin - fmt.t)


def vprec_round(x: float, fmt: VprecFormat) -> float:
    """Round a binary64 scalar to ``fmt``.

    NaN and infinities pass through. Values whose IEEE exponent is below
    ``emin`` lose one mantissa bit per binade (gradual underflow); a rounded
    magnitude of ``2**(emax + 1)`` or more overflows to a signed infinity.
    """
    x = float(x)
    if not math.isfinite(x) or x == 0.0:
        return x
    _, k = math.frexp(x)
    # quantum of the target grid at x's binade
    shift = max(k - 1, fmt.emin) - fmt.t
    m = round(math.ldexp(x, -shift))  # exact integer, round() is ties-to-even
    if m == 0:
        return math.copysign(0.0, x)
    if abs(m) >= 2 ** (fmt.emax + 1 - shift):
        return math.copysign(math.inf, x)
    return math.ldexp(m, shift)


def _overflow_threshold(fmt: VprecFormat) -> float:
    return math.ldexp(1.0, fmt.emax + 1) if fmt.emax < 1023 else math.inf


def vprec_round_array(x, fmt: VprecFormat) -> np.ndarray:
    """Vectorized :func:`vprec_round` over a float64 array (returns a new array)."""
    x = np.asarray(x, dtype=np.float64)
    if fmt.t == 52 and fmt.r == 11:
        return x.copy()
    _, k = np.frexp(x)
    shift = np.maximum(k.astype(np.int64) - 1, fmt.emin) - fmt.t
    with np.errstate(over="ignore", invalid="ignore"):
        y = np.ldexp(np.rint(np.ldexp(x, -shift)), shift)
        y = np.copysign(y, x)  # keeps the sign of values rounded to zero
        y = np.where(np.abs(y) >= _overflow_threshold(fmt), np.copysign(np.inf, x), y)
    return np.where(np.isfinite(x), y, x)


def vprec_op(a: float, b: float, op: str, fmt: VprecFormat) -> float:
    """Compute ``a op b`` in binary64, then round the result to ``fmt``."""
    try:
        fn = OPS[op]
    except KeyError:
        raise ValueError(f"unsupported operation {op!r}") from None
    with np.errstate(all="ignore"):
        y = float(fn(np.float64(a), np.float64(b)))
    return vprec_round(y, fmt)
