import math
import struct

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from mixprec.fpemu import (
    BINARY16,
    BINARY32,
    BINARY64,
    VprecFormat,
    format_bounds,
    vprec_op,
    vprec_round,
    vprec_round_array,
)

formats = st.builds(VprecFormat, st.integers(1, 52), st.integers(2, 11))
doubles = st.floats(allow_nan=False, allow_infinity=True, allow_subnormal=True)


def f32_roundtrip(x):
    with np.errstate(over="ignore"):
        return float(np.float64(np.float32(x)))


def bits(x):
    return struct.unpack("<Q", struct.pack("<d", x))[0]


@pytest.mark.parametrize("t,r", [(0, 8), (53, 8), (23, 1), (23, 12)])
def test_format_rejects_out_of_range(t, r):
    with pytest.raises(ValueError):
        VprecFormat(t, r)


def test_format_string_roundtrip():
    assert str(BINARY32) == "t23r8"
    assert VprecFormat.parse("t10r5") == BINARY16
    with pytest.raises(ValueError):
        VprecFormat.parse("23,8")


@pytest.mark.parametrize("fmt,expected", [
    (BINARY32, (-126, 127, 2.0**-149)),
    (BINARY64, (-1022, 1023, 2.0**-1074)),
    (BINARY16, (-14, 15, 2.0**-24)),
])
def test_format_bounds(fmt, expected):
    assert format_bounds(fmt) == expected


def test_round_examples():
    assert vprec_round(1.0, VprecFormat(1, 2)) == 1.0
    assert vprec_round(1 + 2.0**-24, BINARY32) == 1.0
    assert vprec_round(2.0**200, BINARY32) == math.inf
    x = 1.5 * 2.0**-130
    assert bits(vprec_round(x, BINARY32)) == bits(f32_roundtrip(x))


def test_special_values_pass_through():
    for fmt in (BINARY16, BINARY32, VprecFormat(3, 3)):
        assert vprec_round(math.inf, fmt) == math.inf
        assert vprec_round(-math.inf, fmt) == -math.inf
        assert math.isnan(vprec_round(math.nan, fmt))
        assert math.copysign(1.0, vprec_round(-0.0, fmt)) == -1.0


def test_nan_payload_unchanged_in_array_path():
    payload = np.array([0x7FF8000000000123, 0xFFF0000000000001], dtype=np.uint64).view(np.float64)
    out = vprec_round_array(payload, BINARY16)
    assert np.array_equal(out.view(np.uint64), payload.view(np.uint64))


def test_underflow_to_signed_zero():
    assert vprec_round(2.0**-160, BINARY32) == 0.0
    assert math.copysign(1.0, vprec_round(-(2.0**-160), BINARY32)) == -1.0
    # exactly half the smallest subnormal ties to even (zero)
    assert vprec_round(2.0**-150, BINARY32) == 0.0
    assert vprec_round(1.5 * 2.0**-150, BINARY32) == 2.0**-149


def test_gradual_underflow_shrinks_mantissa():
    # binary16 subnormals are multiples of 2**-24
    assert vprec_round(3 * 2.0**-26, BINARY16) == 2.0**-24
    assert vprec_round(2.0**-14 + 2.0**-25, BINARY16) == 2.0**-14


def test_op_examples():
    assert vprec_op(1.0, 1.0, "+", VprecFormat(1, 2)) == 2.0
    assert vprec_op(1.0, 2.0**-24, "+", BINARY32) == 1.0
    assert vprec_op(1.0, 0.0, "/", BINARY32) == math.inf
    assert math.isnan(vprec_op(0.0, 0.0, "/", BINARY32))
    with pytest.raises(ValueError):
        vprec_op(1.0, 1.0, "%", BINARY32)


@settings(max_examples=300)
@given(doubles, doubles, st.sampled_from("+-*/"))
def test_full_width_is_ieee(a, b, op):
    with np.errstate(all="ignore"):
        expected = float({"+": np.add, "-": np.subtract, "*": np.multiply, "/": np.divide}[op](a, b))
    got = vprec_op(a, b, op, BINARY64)
    assert bits(got) == bits(expected) or (math.isnan(got) and math.isnan(expected))


@settings(max_examples=500)
@given(doubles)
def test_binary32_equivalence_scalar(x):
    assert bits(vprec_round(x, BINARY32)) == bits(f32_roundtrip(x))


@settings(max_examples=300)
@given(doubles, formats)
def test_idempotent(x, fmt):
    y = vprec_round(x, fmt)
    assert bits(vprec_round(y, fmt)) == bits(y)


@settings(max_examples=300)
@given(doubles, doubles, formats)
def test_monotone(x, y, fmt):
    lo, hi = min(x, y), max(x, y)
    assert vprec_round(lo, fmt) <= vprec_round(hi, fmt)


@settings(max_examples=300)
@given(doubles, formats)
def test_sign_symmetry(x, fmt):
    assert bits(vprec_round(-x, fmt)) == bits(-vprec_round(x, fmt))


@settings(max_examples=300)
@given(st.floats(allow_nan=False, allow_infinity=False), st.floats(allow_nan=False, allow_infinity=False),
       st.sampled_from("+-*/"), formats)
def test_error_bound_without_under_or_overflow(a, b, op, fmt):
    with np.errstate(all="ignore"):
        y = float({"+": np.add, "-": np.subtract, "*": np.multiply, "/": np.divide}[op](a, b))
    assume(math.isfinite(y) and y != 0.0)
    e = math.frexp(y)[1] - 1
    assume(fmt.emin <= e <= fmt.emax - 1)
    got = vprec_op(a, b, op, fmt)
    assert abs(got - y) <= math.ldexp(1.0, e - fmt.t - 1)


@settings(max_examples=200)
@given(doubles, formats)
def test_array_path_matches_scalar(x, fmt):
    assert bits(float(vprec_round_array(np.array([x]), fmt)[0])) == bits(vprec_round(x, fmt))
