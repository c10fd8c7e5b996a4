"""Compiled scalar loops for order-sensitive reductions under emulated backends."""
import math

import numba
import numpy as np


@numba.njit(cache=True)
def round_scalar(x, t, emin, emax):
    if not math.isfinite(x) or x == 0.0:
        return x
    _, k = math.frexp(x)
    shift = max(k - 1, emin) - t
    m = np.rint(math.ldexp(x, -shift))
    if m == 0.0:
        return math.copysign(0.0, x)
    if abs(m) >= math.ldexp(1.0, emax + 1 - shift):
        return math.copysign(math.inf, x)
    return math.ldexp(m, shift)


@numba.njit(cache=True)
def vprec_cumsum(terms, t, emin, emax):
    s = terms[0]
    for i in range(1, terms.shape[0]):
        s = round_scalar(s + terms[i], t, emin, emax)
    return s


@numba.njit(cache=True)
def _perturb(x, t, xi):
    _, k = math.frexp(x)
    return x + math.ldexp(xi, k - t)


@numba.njit(cache=True)
def mca_cumsum(terms, t, full, xis):
    """Sequential sum with MCA noise; returns (sum, draws consumed)."""
    s = terms[0]
    used = 0
    for i in range(1, terms.shape[0]):
        a = s
        b = terms[i]
        if full:
            if math.isfinite(a) and a != 0.0:
                a = _perturb(a, t, xis[used])
                used += 1
            if math.isfinite(b) and b != 0.0:
                b = _perturb(b, t, xis[used])
                used += 1
        s = a + b
        if math.isfinite(s) and s != 0.0:
            s = _perturb(s, t, xis[used])
            used += 1
    return s, used
