"""Monte Carlo Arithmetic: stochastic noise injection and ensemble statistics.

Noise source
------------
Every random stream is a Philox4x64 counter-based generator keyed by
``(seed, instance)`` (key words ``[seed, instance]``, counter starting at 0).
Each raw 64-bit output ``u`` yields one variate

    xi = ((u >> 12) + 0.5) * 2**-52 - 0.5

which lies in the open interval (-1/2, 1/2) and is exact in binary64.
Array operations consume draws in C order over the perturbable entries; in
full mode an array operation consumes all first-operand draws, then all
second-operand draws, then all result draws.
"""
from __future__ import annotations

import enum
import math
import statistics
from dataclasses import dataclass

import numpy as np

from .fpemu import OPS

__all__ = [
    "McaMode",
    "McaConfig",
    "NoiseStream",
    "SampleStats",
    "magnitude_exponent",
    "xi_from_raw",
    "inexact",
    "inexact_array",
    "mca_op",
    "mca_op_array",
    "significant_bits",
    "summarize",
    "FULL_SIGNIFICANCE",
]

FULL_SIGNIFICANCE = 53.0
_MASK64 = (1 << 64) - 1


class McaMode(enum.Enum):
    RR = "rr"
    FULL = "full"


@dataclass(frozen=True)
class McaConfig:
    mode: McaMode = McaMode.RR
    t: int = 23
    seed: int = 0

    def __post_init__(self):
        if not isinstance(self.mode, McaMode):
            object.__setattr__(self, "mode", McaMode(str(self.mode).lower()))
        if not 1 <= int(self.t) <= 53:
            raise ValueError(f"virtual precision must be in [1, 53], got {self.t}")
        if not 0 <= int(self.seed) <= _MASK64:
            raise ValueError("seed must be a 64-bit unsigned integer")

    def __str__(self) -> str:
        return f"{self.mode.value}:t{self.t}:seed{self.seed}"


def xi_from_raw(raw) -> np.ndarray:
    """Map raw 64-bit generator outputs to noise variates in (-1/2, 1/2)."""
    raw = np.asarray(raw, dtype=np.uint64)
    return ((raw >> np.uint64(12)).astype(np.float64) + 0.5) * 2.0**-52 - 0.5


class NoiseStream:
    """Single-owner stream of noise variates, reproducible from ``(seed, instance)``."""

    def __init__(self, seed: int = 0, instance: int = 0):
        self.seed = int(seed)
        self.instance = int(instance)
        self._bitgen = np.random.Philox(key=(self.seed & _MASK64) | ((self.instance & _MASK64) << 64))
        self.consumed = 0

    def draw(self, n: int | None = None):
        """Return one variate (``n is None``) or an array of ``n`` variates."""
        if n is None:
            self.consumed += 1
            return float(xi_from_raw(self._bitgen.random_raw(1))[0])
        self.consumed += n
        if n == 0:
            return np.empty(0)
        return xi_from_raw(self._bitgen.random_raw(n))

    def draw_used(self, n: int, use):
        """Draw up to ``n`` variates, pass them to ``use`` and keep only those it consumed.

        ``use(xis)`` returns ``(result, k)``; the stream ends up advanced by
        exactly ``k`` draws.
        """
        state = self._bitgen.state
        xis = xi_from_raw(self._bitgen.random_raw(n)) if n else np.empty(0)
        result, k = use(xis)
        if k != n:
            self._bitgen.state = state
            if k:
                self._bitgen.random_raw(k)
        self.consumed += k
        return result

    def spawn(self, instance: int) -> "NoiseStream":
        return NoiseStream(self.seed, instance)


def magnitude_exponent(x: float) -> int:
    """Order of magnitude ``floor(log2|x|) + 1``, read off the binary representation."""
    x = float(x)
    if x == 0.0 or not math.isfinite(x):
        raise ValueError(f"magnitude exponent undefined for {x!r}")
    return math.frexp(x)[1]


def inexact(x: float, t: int, stream: NoiseStream) -> float:
    x = float(x)
    if x == 0.0 or not math.isfinite(x):
        return x
    xi = stream.draw()
    return x + math.ldexp(xi, math.frexp(x)[1] - t)


def inexact_array(x: np.ndarray, t: int, stream: NoiseStream, keys=None) -> np.ndarray:
    """Elementwise :func:`inexact`; draws one variate per finite nonzero entry.

    With ``keys`` (an integer array shaped like ``x``), entries sharing a key
    share one variate, drawn in ascending key order; this keeps duplicated
    copies of one logical value identical.
    """
    x = np.asarray(x, dtype=np.float64)
    if keys is not None:
        return _inexact_keyed(x, t, stream, keys)
    live = np.isfinite(x) & (x != 0.0)
    n = int(np.count_nonzero(live))
    if n == 0:
        return x.copy()
    out = x.copy()
    v = x[live]
    _, k = np.frexp(v)
    out[live] = v + np.ldexp(stream.draw(n), k - t)
    return out


def _inexact_keyed(x, t, stream, keys):
    keys = np.broadcast_to(np.asarray(keys).reshape(-1), (x.size,))
    flat = x.reshape(-1)
    uniq, first, inverse = np.unique(keys, return_index=True, return_inverse=True)
    rep = flat[first]
    live = np.isfinite(rep) & (rep != 0.0)
    xi = np.zeros(uniq.size)
    xi[live] = stream.draw(int(np.count_nonzero(live)))
    xi = xi[inverse]
    _, k = np.frexp(flat)
    out = np.where(np.isfinite(flat) & (flat != 0.0), flat + np.ldexp(xi, k - t), flat)
    return out.reshape(x.shape)


def _ieee(a, b, op):
    try:
        fn = OPS[op]
    except KeyError:
        raise ValueError(f"unsupported operation {op!r}") from None
    with np.errstate(all="ignore"):
        return fn(np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64))


def mca_op(a: float, b: float, op: str, cfg: McaConfig, stream: NoiseStream) -> float:
    """One MCA-instrumented operation (RR: result only; full: operands and result)."""
    if cfg.mode is McaMode.FULL:
        a = inexact(a, cfg.t, stream)
        b = inexact(b, cfg.t, stream)
    return inexact(float(_ieee(a, b, op)), cfg.t, stream)


def mca_op_array(a, b, op: str, cfg: McaConfig, stream: NoiseStream, keys=None) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if cfg.mode is McaMode.FULL:
        a, b = np.broadcast_arrays(a, b)
        a = inexact_array(a, cfg.t, stream, keys)
        b = inexact_array(b, cfg.t, stream, keys)
    return inexact_array(_ieee(a, b, op), cfg.t, stream, keys)


def _stddev(x: np.ndarray) -> float:
    """Bessel-corrected standard deviation, scaled to avoid under/overflow in the squares."""
    scale = float(np.max(np.abs(x)))
    if scale == 0.0 or not math.isfinite(scale):
        return float(np.std(x, ddof=1))
    return float(np.std(x / scale, ddof=1)) * scale


def significant_bits(samples) -> float:
    """``-log2|sigma/mu|`` of a sample (Bessel-corrected sigma).

    Returns 53 when every sample is equal and 0 when the mean is zero.
    """
    x = np.asarray(samples, dtype=np.float64)
    if x.size < 2:
        raise ValueError("significant bits need at least two samples")
    mu = float(np.mean(x))
    sigma = _stddev(x)
    if sigma == 0.0 or np.all(x == x[0]):
        return FULL_SIGNIFICANCE
    if mu == 0.0:
        return 0.0
    return -math.log2(abs(sigma / mu))


@dataclass(frozen=True)
class SampleStats:
    n: int
    mean: float
    stddev: float
    min: float
    max: float
    s2: float | None = None


def summarize(samples) -> SampleStats:
    x = np.asarray(samples, dtype=np.float64).ravel()
    if x.size == 0:
        raise ValueError("cannot summarize an empty sample")
    lo, hi = float(x.min()), float(x.max())
    # a naive mean of identical values can drift off the sample by an ulp
    mu = min(max(statistics.fmean(x.tolist()), lo), hi)
    if x.size == 1:
        return SampleStats(1, mu, 0.0, lo, hi, None)
    sigma = 0.0 if lo == hi else _stddev(x)
    return SampleStats(int(x.size), mu, sigma, lo, hi, significant_bits(x))
