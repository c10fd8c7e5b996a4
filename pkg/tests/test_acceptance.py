"""Acceptance suite: one test per criterion, reported in the terminal summary.

Run ``pytest tests/test_acceptance.py`` to see the per-criterion pass/fail lines.
"""
import math
import time
from contextlib import contextmanager

import numpy as np
import pytest

from conftest import assembled_matrix, continuous_field
from mixprec.cg_solver import CgConfig, cg_solve
from mixprec.context import Context, Ieee, Mca, ScopeMap, Vprec
from mixprec.fpemu import BINARY32, BINARY64, vprec_round_array
from mixprec.harness import (
    CG_LOOP_KERNELS,
    MeshSpec,
    PipelineConfig,
    compare,
    mca_ensemble,
    pipeline,
    plateau_onset,
    run_solve,
    sweep_vprec,
)
from mixprec.mca import McaConfig, McaMode, NoiseStream, magnitude_exponent, mca_op, mca_op_array, significant_bits
from mixprec.roofline import KernelProfile, MachineModel, attainable, classify, predict_precision_gain
from mixprec.sem_core import ax, glsc3, manufactured_rhs, setup_box_mesh

DEFAULT = MeshSpec(2, 2, 2, 8)


@contextmanager
def budget(seconds):
    start = time.perf_counter()
    yield
    elapsed = time.perf_counter() - start
    assert elapsed < seconds, f"took {elapsed:.1f} s, budget {seconds} s"


def bits(x):
    return np.asarray(x, dtype=np.float64).view(np.uint64)


def sample_doubles(n, rng):
    """Seeded doubles covering every class relevant to a binary32 rounding."""
    parts = [
        rng.integers(0, 2**64, n // 4, dtype=np.uint64).view(np.float64),        # arbitrary bit patterns
        rng.uniform(-1, 1, n // 4) * np.ldexp(1.0, rng.integers(-126, 128, n // 4)),  # binary32 normals
        rng.uniform(-1, 1, n // 8) * np.ldexp(1.0, rng.integers(-160, -125, n // 8)),  # binary32 subnormals
        rng.uniform(-1, 1, n // 16) * np.ldexp(1.0, rng.integers(127, 140, n // 16)),  # overflow range
    ]
    # exact midpoints between neighbouring binary32 values
    f = rng.uniform(-1, 1, n // 8).astype(np.float32)
    parts.append((f.astype(np.float64) + np.spacing(f).astype(np.float64) / 2))
    specials = np.array([0.0, -0.0, np.inf, -np.inf, np.nan, -np.nan, 5e-324, -5e-324,
                         np.finfo(np.float32).max, 3.4028235677973366e38, 1.1754942106924411e-38,
                         1.401298464324817e-45, 7.006492321624085e-46, 7.006492321624087e-46])
    x = np.concatenate(parts + [specials])
    return np.concatenate([x, rng.choice(x, n - x.size)])


@pytest.mark.criterion(1, "VPREC (23, 8) equals binary32 conversion on 10^6 doubles")
def test_criterion_01_binary32_equivalence():
    x = sample_doubles(10**6, np.random.default_rng(20240601))
    assert x.size == 10**6
    with budget(5):
        got = vprec_round_array(x, BINARY32)
    with np.errstate(over="ignore", invalid="ignore"):
        ref = x.astype(np.float32).astype(np.float64)
    nan = np.isnan(ref)
    assert np.array_equal(np.isnan(got), nan)
    assert np.array_equal(bits(got[~nan]), bits(ref[~nan]))
    assert np.array_equal(np.signbit(got[nan]), np.signbit(ref[nan]))
    classes = [np.isinf(ref), nan, ref == 0, (ref != 0) & (np.abs(ref) < 2.0**-126)]
    assert all(c.sum() > 100 for c in classes)


@pytest.mark.criterion(2, "full CG solve under VPREC (52, 11) is bitwise the IEEE trace")
def test_criterion_02_vprec_identity():
    cfg = CgConfig()
    with budget(30):
        ref = run_solve(DEFAULT, cfg)
        emu = run_solve(DEFAULT, cfg, ScopeMap(default=Vprec(BINARY64)))
    assert ref.converged and emu.trace.same_as(ref.trace)
    assert np.array_equal(bits(emu.x), bits(ref.x))


@pytest.mark.criterion(3, "MCA RR noise bound on 10^5 operations per t, seeded replay")
def test_criterion_03_noise_bound_and_determinism():
    rng = np.random.default_rng(3)
    n = 10**5
    ops = ["+", "-", "*", "/"]
    with budget(10):
        a = rng.standard_normal(n) * np.ldexp(1.0, rng.integers(-40, 40, n))
        b = rng.standard_normal(n) * np.ldexp(1.0, rng.integers(-40, 40, n))
        which = rng.integers(0, 4, n)
        for t in (10, 24, 53):
            cfg = McaConfig(McaMode.RR, t, seed=t)
            for k, op in enumerate(ops):
                sel = which == k
                ref = {"+": np.add, "-": np.subtract, "*": np.multiply, "/": np.divide}[op](a[sel], b[sel])
                got = mca_op_array(a[sel], b[sel], op, cfg, NoiseStream(cfg.seed, k))
                again = mca_op_array(a[sel], b[sel], op, cfg, NoiseStream(cfg.seed, k))
                assert np.array_equal(bits(got), bits(again))
                nz = ref != 0
                _, e = np.frexp(ref[nz])
                assert np.all(np.abs(got[nz] - ref[nz]) < np.ldexp(1.0, e - t - 1))
                assert np.all(got[~nz] == 0)
            # the scalar entry point draws the same stream
            s1, s2 = NoiseStream(7), NoiseStream(7)
            for i in range(200):
                x = mca_op(a[i], b[i], "*", cfg, s1)
                assert x == mca_op(a[i], b[i], "*", cfg, s2)
                assert abs(x - a[i] * b[i]) < math.ldexp(1.0, magnitude_exponent(a[i] * b[i]) - t - 1)


@pytest.mark.criterion(4, "significant-bits oracle")
def test_criterion_04_significant_bits():
    with budget(1):
        assert abs(significant_bits([0.75, 1.25]) - 1.5) < 1e-12
        assert significant_bits([2.5] * 20) == 53
        assert significant_bits([-1.0, 1.0]) == 0


@pytest.mark.criterion(5, "operator symmetry / SPD and adjoint identity")
def test_criterion_05_operator():
    with budget(60):
        m = setup_box_mesh(1, 1, 1, 3)
        A, _ = assembled_matrix(m)
        assert np.max(np.abs(A - A.T)) <= 1e-12 * np.abs(A).max()
        assert np.linalg.eigvalsh((A + A.T) / 2).min() > 0
        rng = np.random.default_rng(5)
        worst = 0.0
        for dims in [(1, 1, 1, 3), (2, 1, 1, 5), (2, 2, 1, 6), (2, 2, 2, 8)]:
            mesh = setup_box_mesh(*dims)
            ctx = Context()
            for _ in range(50):
                u, v = continuous_field(mesh, rng), continuous_field(mesh, rng)
                uv = glsc3(u, mesh.c, ax(v, mesh, ctx), ctx)
                vu = glsc3(v, mesh.c, ax(u, mesh, ctx), ctx)
                worst = max(worst, abs(uv - vu) / max(abs(uv), abs(vu)))
        assert worst <= 1e-12


@pytest.mark.criterion(6, "CG convergence and dense oracle")
def test_criterion_06_cg():
    with budget(60):
        mesh = DEFAULT.build()
        for precond in ("none", "jacobi"):
            res = run_solve(DEFAULT, CgConfig(precond=precond))
            assert res.converged and res.final_residual <= 1.0e-10
            assert res.iterations <= 4 * mesh.interior_dofs
        m = setup_box_mesh(1, 1, 1, 3)
        f = manufactured_rhs(m, Context())
        A, interior = assembled_matrix(m)
        first = np.full(m.n_global, -1)
        first[m.gs_map[::-1]] = np.arange(m.n)[::-1]
        y = np.linalg.solve(A, f[first[interior]])
        x, trace = cg_solve(m, f, CgConfig())
        assert trace.converged
        assert np.max(np.abs(x[first[interior]] - y)) <= 1e-9 * np.max(np.abs(y))


@pytest.fixture(scope="module")
def sweep():
    start = time.perf_counter()
    rows = sweep_vprec(DEFAULT, CgConfig(), CG_LOOP_KERNELS, range(3, 53))
    return rows, time.perf_counter() - start


@pytest.mark.slow
@pytest.mark.criterion(7, "VPREC sweep t = 3..52 reaches a plateau by t = 23")
def test_criterion_07_sweep_shape(sweep):
    rows, elapsed = sweep
    assert elapsed < 600
    by_t = {r.t: r for r in rows}
    ref = by_t[52].final_residual
    assert [r.t for r in rows] == list(range(3, 53))
    assert not by_t[3].converged
    assert all(by_t[t].converged and by_t[t].final_residual <= 10 * ref for t in range(23, 53))
    onset = plateau_onset(rows)
    assert onset is not None and onset <= 23
    assert all(r.final_residual <= 10 * ref for r in rows if r.t >= onset)


@pytest.fixture(scope="module")
def ensembles():
    cfg = CgConfig()
    start = time.perf_counter()
    rr = mca_ensemble(DEFAULT, cfg, CG_LOOP_KERNELS, McaConfig(McaMode.RR, 23, 0), runs=20)
    full = mca_ensemble(DEFAULT, cfg, CG_LOOP_KERNELS, McaConfig(McaMode.FULL, 23, 0), runs=20)
    return rr, full, time.perf_counter() - start


@pytest.mark.slow
@pytest.mark.criterion(8, "MCA ensemble: convergence, solution s2 >= 10, Full band >= RR band")
def test_criterion_08_mca_ensemble(ensembles):
    rr, full, elapsed = ensembles
    assert elapsed < 600
    double = run_solve(DEFAULT, CgConfig())
    assert rr.all_converged
    assert max(r.iterations for r in rr.runs) <= 2 * double.iterations
    assert rr.s2_solution >= 10
    n = min(len(rr.per_iteration), len(full.per_iteration))
    w_rr = rr.band_widths(relative=False)[:n]
    w_full = full.band_widths(relative=False)[:n]
    ratio = np.median(w_full[w_rr > 0] / w_rr[w_rr > 0])
    assert 1.0 <= ratio <= 10.0


@pytest.mark.slow
@pytest.mark.criterion("8*", "MCA ensemble: literal final-residual s2 >= 10 bits")
@pytest.mark.xfail(strict=True, reason="the converged residual is rounding noise near tol; "
                                        "its s2 stays at a few bits at any t")
def test_criterion_08_final_residual_s2(ensembles):
    rr, _, _ = ensembles
    assert rr.s2_residual >= 10


@pytest.mark.criterion(9, "roofline model values and bound transitions")
def test_criterion_09_roofline():
    with budget(1):
        xeon = MachineModel.xeon_e5_2690()
        assert attainable(1e9, "sp_vector", xeon)[0] == 24.06
        assert attainable(1e9, "dp_vector", xeon)[0] == 12.58
        assert predict_precision_gain(KernelProfile("mem", 1.0, 1e12), xeon) == 2.0
        assert abs(predict_precision_gain(KernelProfile("cpu", 1e12, 1.0), xeon) - 24.06 / 12.58) <= 1e-9
        # constructed model whose only bandwidth roof is L2
        m = MachineModel(xeon.compute, [type(xeon.memory[0])("L2", 295.0)])
        n = 10**6
        assert classify(KernelProfile("add2", n, 24 * n), "dp_vector", m).label == "L2 memory bound"
        assert classify(KernelProfile("add2", n, 12 * n), "sp_vector", m).label == "SP Vector Add bound"
        mx = 2 * 8**4 * n
        assert classify(KernelProfile("mxm", mx, 24 * 8**3 * n), "dp_vector", m).label == "DP Vector Add bound"
        assert classify(KernelProfile("mxm", mx, 12 * 8**3 * n), "sp_vector", m).label == "SP Vector Add bound"


@pytest.mark.criterion(10, "mixed-variant traffic and accuracy accounting")
def test_criterion_10_mixed_accounting():
    with budget(60):
        rep = compare(DEFAULT, CgConfig(), "mixed", repeats=5)
        assert 0.45 <= rep["byte_ratio_per_iteration"] <= 0.55
        assert 0.45 <= rep["vector_byte_ratio_per_iteration"] <= 0.55
        # same work on both sides: a fixed iteration count
        k = rep["iterations"]["double"]
        fixed = CgConfig(miter=k, tol=1e-300)
        d = run_solve(DEFAULT, fixed).counters.total()
        s = run_solve(DEFAULT, CgConfig(miter=k, tol=1e-300, variant="mixed")).counters.total()
        assert 0.45 <= s.bytes / d.bytes <= 0.55
        ae = np.asarray(rep["ae"])
        assert np.all(np.isfinite(ae)) and math.isfinite(rep["mae"])
        assert ae[-1] <= 1e-4 * rep["initial_residual"]
        assert math.isfinite(rep["gain_solve"]) and math.isfinite(rep["gain_whole"])


@pytest.mark.slow
@pytest.mark.criterion(11, "pipeline verdicts and threshold monotonicity")
def test_criterion_11_pipeline():
    sections = {"cg_loop": CG_LOOP_KERNELS, "cancel": frozenset({"cancel"})}
    rank = {"pruned-speedup": 0, "pruned-vprec": 1, "pruned-mca": 2, "candidate": 3}
    with budget(900):
        report = pipeline(PipelineConfig(sections=sections))
        assert report.verdicts == {"cg_loop": "candidate", "cancel": "pruned-mca"}
        speedups, errors, min_bits = (1.5, 1.99, 2.5), (1e-15, 1e-6, 1.0), (30.0, 10.0, 3.0)
        grid = {}
        for i, s in enumerate(speedups):
            for j, e in enumerate(errors):
                for k, b in enumerate(min_bits):
                    cfg = PipelineConfig(sections=sections, speedup_threshold=s,
                                         vprec_error_threshold=e, mca_min_bits=b)
                    grid[i, j, k] = {n: rank[v] for n, v in pipeline(cfg).verdicts.items()}
        # index order runs from strict to loose on every axis, except speedup which tightens
        for (i, j, k), v in grid.items():
            for (i2, j2, k2), w in grid.items():
                if i2 <= i and j2 >= j and k2 >= k:
                    assert all(w[name] >= v[name] for name in v)
        assert len({tuple(sorted(v.items())) for v in grid.values()}) > 2
