"""
Emulating reduced precision
===========================

A VPREC format keeps a pseudo-mantissa of ``t`` bits and an exponent of
``r`` bits.  At (23, 8) it is exactly IEEE binary32, which makes it a
convenient way to ask "what would single precision do here?" without
changing any array types.
"""

import numpy as np

from mixprec.fpemu import BINARY16, BINARY32, VprecFormat, format_bounds, vprec_round, vprec_round_array

# The same number at decreasing widths.  Ties round to even.
x = 1.0 / 3.0
for fmt in (VprecFormat(52, 11), BINARY32, BINARY16, VprecFormat(3, 11)):
    print(f"{str(fmt):>7s}  {vprec_round(x, fmt)!r}")

# The (23, 8) format matches a round trip through float32, including
# subnormals and overflow to infinity.
rng = np.random.default_rng(0)
values = rng.standard_normal(8) * np.ldexp(1.0, rng.integers(-150, 130, 8))
emulated = vprec_round_array(values, BINARY32)
with np.errstate(over="ignore"):
    native = values.astype(np.float32).astype(np.float64)
print(np.array_equal(emulated, native))

# Range of a format: largest finite value and smallest normal / subnormal.
print(format_bounds(BINARY16))
